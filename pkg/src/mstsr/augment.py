"""Pseudo-LR/HR pair synthesis from LR images.

One engine drives three configurations: multi-scale training with bicubic
degradation (nearest-down / bicubic-up scale augmentation over a narrow
grid), the SimUSR-style baseline (bicubic downscale only, 50/20/30 branch
split), and the original wide-range multi-kernel variant.

Randomness is a seeded PCG64 generator; per-sample sub-seeds come from a
SplitMix64 hash of (seed, index), so any sample index is reproducible in
isolation and generation order / worker count never matters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from importlib import resources
from typing import Optional, Sequence, Union

import numpy as np

from . import image as im
from . import resample as rs


class AugmentError(ValueError):
    pass


def splitmix64(*words: int) -> int:
    """Mix 64-bit words into one 64-bit value (SplitMix64 finalizer chain)."""
    state = 0
    mask = (1 << 64) - 1
    for w in words:
        state = (state + (w & mask) + 0x9E3779B97F4A7C15) & mask
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        state = z ^ (z >> 31)
    return state


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Portable PCG64 generator for (seed, stream...)."""
    return np.random.Generator(np.random.PCG64(splitmix64(seed, *stream)))


@dataclass
class AugmentationSpec:
    """One pipeline configuration; see the shipped presets for named variants."""

    method: str = "mstbic"  # mstbic | simusr | mst
    alpha_min: float = 0.9
    beta_max: float = 1.1
    gamma_min: float = 0.5  # simusr only
    scale_steps: int = 9
    down_kernels: dict[str, float] = field(default_factory=lambda: {"nearest": 1.0})
    up_kernels: dict[str, float] = field(default_factory=lambda: {"bicubic": 1.0})
    degradation_kernels: tuple[str, ...] = ("bicubic",)
    sr_factor: int = 4
    crop_h: int = 64
    crop_w: int = 64
    branch_probs: tuple[float, float, float] = (4 / 9, 1 / 9, 4 / 9)

    def __post_init__(self):
        if self.method not in ("mstbic", "simusr", "mst"):
            raise AugmentError(f"unknown method {self.method!r}")
        if not (self.alpha_min <= 1.0 <= self.beta_max):
            raise AugmentError("need alpha_min <= 1 <= beta_max")
        if not (0.0 < self.gamma_min <= 1.0):
            raise AugmentError("gamma_min must be in (0, 1]")
        if self.sr_factor < 2:
            raise AugmentError("sr_factor must be >= 2")
        if self.crop_h < 8 or self.crop_w < 8:
            raise AugmentError("crop size must be >= 8")
        if abs(sum(self.branch_probs) - 1.0) > 1e-9:
            raise AugmentError("branch probabilities must sum to 1")
        for k in list(self.down_kernels) + list(self.up_kernels) + list(
            self.degradation_kernels
        ):
            if k not in rs.KERNELS:
                raise AugmentError(f"unknown kernel {k!r}")
        self.degradation_kernels = tuple(self.degradation_kernels)
        self.branch_probs = tuple(self.branch_probs)

    @property
    def hr_h(self) -> int:
        return self.sr_factor * self.crop_h

    @property
    def hr_w(self) -> int:
        return self.sr_factor * self.crop_w

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentationSpec":
        return cls(**d)


@dataclass
class PairSample:
    pseudo_lr: np.ndarray  # (crop_h, crop_w, 3)
    pseudo_hr: np.ndarray  # (s*crop_h, s*crop_w, 3)
    provenance: dict


def make_scale_grid(spec: AugmentationSpec) -> np.ndarray:
    """Equidistant scale grid: downscale half, exact 1.0 midpoint, upscale half."""
    steps = spec.scale_steps
    if spec.alpha_min == 1.0 and spec.beta_max == 1.0:
        return np.array([1.0])
    if steps < 3 or steps % 2 == 0:
        raise AugmentError("scale_steps must be odd and >= 3")
    half = (steps - 1) // 2
    down = np.linspace(spec.alpha_min, 1.0, half + 1)[:-1]
    up = np.linspace(1.0, spec.beta_max, half + 1)[1:]
    return np.concatenate([down, [1.0], up])


def _feasible_down(values: np.ndarray, spec: AugmentationSpec, src_h: int, src_w: int):
    ok = []
    for a in values:
        oh = int(np.floor(src_h * a + 0.5))
        ow = int(np.floor(src_w * a + 0.5))
        if oh >= spec.hr_h and ow >= spec.hr_w:
            ok.append(a)
    return np.array(ok)


def _pick_kernel(kernels: dict[str, float], rng: np.random.Generator) -> str:
    names = sorted(kernels)
    weights = np.array([kernels[n] for n in names], dtype=np.float64)
    weights = weights / weights.sum()
    return names[rng.choice(len(names), p=weights)]


def sample_scale(
    spec: AugmentationSpec, rng: np.random.Generator, src_h: int, src_w: int
):
    """Draw (scale factor, kernel) for the scale-augmentation stage."""
    if src_h < spec.hr_h or src_w < spec.hr_w:
        raise AugmentError(
            f"source {src_h}x{src_w} too small for {spec.hr_h}x{spec.hr_w} crop"
        )
    grid = make_scale_grid(spec)
    down = grid[grid < 1.0]
    up = grid[grid > 1.0]
    u = rng.random()
    p_down, p_id, _ = spec.branch_probs
    if u < p_down and down.size:
        feas = _feasible_down(down, spec, src_h, src_w)
        if feas.size == 0:
            return 1.0, None  # infeasible downscale falls through to identity
        factor = float(feas[rng.integers(feas.size)])
        return factor, _pick_kernel(spec.down_kernels, rng)
    if u < p_down + p_id or not up.size:
        return 1.0, None
    factor = float(up[rng.integers(up.size)])
    return factor, _pick_kernel(spec.up_kernels, rng)


def _orient_draw(rng: np.random.Generator):
    turns = int(rng.integers(4))
    flip = bool(rng.random() < 0.5)
    return turns, flip


def _orient_apply(img: np.ndarray, turns: int, flip: bool) -> np.ndarray:
    out = im.rotate90(img, turns)
    if flip:
        out = im.hflip(out)
    return out


def _scaled_dims(h: int, w: int, factor: float):
    return int(np.floor(h * factor + 0.5)), int(np.floor(w * factor + 0.5))


def _crop_draw(spec: AugmentationSpec, rng: np.random.Generator, H: int, W: int):
    if H < spec.hr_h or W < spec.hr_w:
        raise AugmentError("augmented image too small for pseudo-HR crop")
    top = int(rng.integers(H - spec.hr_h + 1))
    left = int(rng.integers(W - spec.hr_w + 1))
    return top, left


def _crop_and_degrade(
    x: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator, kernel: str
):
    top, left = _crop_draw(spec, rng, x.shape[0], x.shape[1])
    hr = im.crop(x, top, left, spec.hr_h, spec.hr_w)
    lr = rs.downscale_by_int(hr, spec.sr_factor, kernel)
    return hr, lr, top, left


def generate_pair_mstbic(
    x: np.ndarray,
    spec: AugmentationSpec,
    rng: np.random.Generator,
    stats_only: bool = False,
) -> PairSample:
    """stats_only draws the exact same decision stream but skips pixel work."""
    H, W = x.shape[:2]
    factor, kernel = sample_scale(spec, rng, H, W)
    turns, flip = _orient_draw(rng)
    deg = spec.degradation_kernels[
        0
        if len(spec.degradation_kernels) == 1
        else int(rng.integers(len(spec.degradation_kernels)))
    ]
    if stats_only:
        sh, sw = _scaled_dims(H, W, factor)
        if turns % 2:
            sh, sw = sw, sh
        top, left = _crop_draw(spec, rng, sh, sw)
        hr = lr = None
    else:
        scaled = x if factor == 1.0 else rs.rescale_by_factor(x, factor, kernel)
        oriented = _orient_apply(scaled, turns, flip)
        hr, lr, top, left = _crop_and_degrade(oriented, spec, rng, deg)
    return PairSample(
        pseudo_lr=lr,
        pseudo_hr=hr,
        provenance={
            "method": spec.method,
            "scale": factor,
            "scale_kernel": kernel,
            "degradation_kernel": deg,
            "rotation_turns": turns,
            "hflip": flip,
            "crop_top": top,
            "crop_left": left,
        },
    )


def generate_pair_mst(
    x: np.ndarray,
    spec: AugmentationSpec,
    rng: np.random.Generator,
    stats_only: bool = False,
) -> PairSample:
    return generate_pair_mstbic(x, spec, rng, stats_only)


_SIMUSR_REDRAW_CAP = 16


def generate_pair_simusr(
    x: np.ndarray,
    spec: AugmentationSpec,
    rng: np.random.Generator,
    stats_only: bool = False,
) -> PairSample:
    H, W = x.shape[:2]
    if H < spec.hr_h or W < spec.hr_w:
        raise AugmentError(f"source {H}x{W} too small for {spec.hr_h}x{spec.hr_w} crop")
    p_scale, p_orient, _ = spec.branch_probs
    u = rng.random()
    gamma = None
    turns, flip = 0, False
    wh, ww = H, W
    oriented = False
    if u < p_scale:
        branch = "scale"
        for _ in range(_SIMUSR_REDRAW_CAP):
            g = float(rng.uniform(spec.gamma_min, 1.0))
            oh, ow = _scaled_dims(H, W, g)
            if oh >= spec.hr_h and ow >= spec.hr_w:
                gamma = g
                wh, ww = oh, ow
                break
        if gamma is None:
            branch = "orient"  # capped redraws: degrade gracefully
        turns, flip = _orient_draw(rng)
        oriented = True
    elif u < p_scale + p_orient:
        branch = "orient"
        turns, flip = _orient_draw(rng)
        oriented = True
    else:
        branch = "bypass"
    if turns % 2:
        wh, ww = ww, wh
    if stats_only:
        top, left = _crop_draw(spec, rng, wh, ww)
        hr = lr = None
    else:
        work = x if gamma is None else rs.rescale_by_factor(x, gamma, "bicubic")
        if oriented:
            work = _orient_apply(work, turns, flip)
        hr, lr, top, left = _crop_and_degrade(
            work, spec, rng, spec.degradation_kernels[0]
        )
    return PairSample(
        pseudo_lr=lr,
        pseudo_hr=hr,
        provenance={
            "method": "simusr",
            "branch": branch,
            "gamma": gamma,
            "rotation_turns": turns,
            "hflip": flip,
            "crop_top": top,
            "crop_left": left,
        },
    )


def generate_pair(
    x: np.ndarray,
    spec: AugmentationSpec,
    rng: np.random.Generator,
    stats_only: bool = False,
) -> PairSample:
    if spec.method == "simusr":
        return generate_pair_simusr(x, spec, rng, stats_only)
    return generate_pair_mstbic(x, spec, rng, stats_only)


ImageSource = Union[str, np.ndarray]


def _load(src: ImageSource) -> np.ndarray:
    if isinstance(src, np.ndarray):
        return src
    return im.load_png(src)


def pair_at_index(
    images: Sequence[ImageSource],
    spec: AugmentationSpec,
    seed: int,
    index: int,
    stats_only: bool = False,
) -> PairSample:
    """Generate the index-th pair of a stream, independently of all others."""
    if not images:
        raise AugmentError("empty image list")
    rng = make_rng(seed, index)
    src_idx = int(rng.integers(len(images)))
    sample = generate_pair(_load(images[src_idx]), spec, rng, stats_only)
    sample.provenance["source_index"] = src_idx
    sample.provenance["stream_index"] = index
    return sample


def pair_stream(
    images: Sequence[ImageSource],
    spec: AugmentationSpec,
    seed: int,
    count: Optional[int] = None,
    start: int = 0,
):
    """Yield PairSamples; restartable at any index via the sub-seed contract."""
    if not images:
        raise AugmentError("empty image list")
    i = start
    while count is None or i < start + count:
        yield pair_at_index(images, spec, seed, i)
        i += 1


def load_presets() -> dict[str, AugmentationSpec]:
    text = resources.files("mstsr").joinpath("presets/augment.json").read_text()
    raw = json.loads(text)
    return {name: AugmentationSpec.from_dict(d) for name, d in raw.items()}
