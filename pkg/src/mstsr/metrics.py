"""Y-channel PSNR / SSIM with SR-benchmark conventions, plus error maps.

Conventions: BT.601 studio-swing luma, border shave (default = SR factor),
SSIM with an 11x11 Gaussian window (sigma 1.5, K1=0.01, K2=0.03, L=255)
averaged over valid window positions only.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d

from . import image as im
from . import model as M
from . import resample as rs
from .datasets import Manifest

PSNR_INF = float("inf")

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_L = 255.0


class MetricError(ValueError):
    pass


def _shaved_y(ref: np.ndarray, test: np.ndarray, shave: int):
    if ref.shape != test.shape:
        raise MetricError(f"dimension mismatch: {ref.shape} vs {test.shape}")
    H, W = ref.shape[:2]
    if shave < 0 or 2 * shave >= min(H, W):
        raise MetricError(f"shave {shave} too large for {H}x{W}")
    ry = im.rgb_to_y(ref)
    ty = im.rgb_to_y(test)
    if shave:
        ry = ry[shave:-shave, shave:-shave]
        ty = ty[shave:-shave, shave:-shave]
    return ry, ty


def psnr_y(ref: np.ndarray, test: np.ndarray, shave: int = 0) -> float:
    """PSNR (dB) on the shaved Y plane; +inf for identical images."""
    ry, ty = _shaved_y(ref, test, shave)
    mse = float(np.mean((ry - ty) ** 2))
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * np.log10(255.0**2 / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    c = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(c**2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim_y(ref: np.ndarray, test: np.ndarray, shave: int = 0) -> float:
    """Single-scale SSIM on the shaved Y plane (valid-window averaging)."""
    ry, ty = _shaved_y(ref, test, shave)
    if min(ry.shape) < SSIM_WINDOW:
        raise MetricError(
            f"image too small for {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    c1 = (SSIM_K1 * SSIM_L) ** 2
    c2 = (SSIM_K2 * SSIM_L) ** 2

    def filt(x):
        return convolve2d(x, win, mode="valid")

    mu1 = filt(ry)
    mu2 = filt(ty)
    mu1_sq, mu2_sq, mu12 = mu1 * mu1, mu2 * mu2, mu1 * mu2
    s1 = filt(ry * ry) - mu1_sq
    s2 = filt(ty * ty) - mu2_sq
    s12 = filt(ry * ty) - mu12
    num = (2 * mu12 + c1) * (2 * s12 + c2)
    den = (mu1_sq + mu2_sq + c1) * (s1 + s2 + c2)
    return float(np.mean(num / den))


def error_map(ref: np.ndarray, test: np.ndarray, colormap: str = "viridis") -> np.ndarray:
    """Absolute Y difference, min-max normalized, rendered via a monotone colormap."""
    if ref.shape != test.shape:
        raise MetricError(f"dimension mismatch: {ref.shape} vs {test.shape}")
    diff = np.abs(im.rgb_to_y(ref) - im.rgb_to_y(test))
    lo, hi = diff.min(), diff.max()
    norm = np.zeros_like(diff) if hi == lo else (diff - lo) / (hi - lo)
    import matplotlib

    matplotlib.use("Agg")
    from matplotlib import colormaps

    rgba = colormaps[colormap](norm)
    return im.u8_round(rgba[..., :3] * 255.0)


@dataclass
class MetricReport:
    dataset: str
    method: str
    sr_factor: int
    shave: int
    per_image: list[dict] = field(default_factory=list)
    conventions: dict = field(
        default_factory=lambda: {
            "y_formula": "bt601-studio-swing",
            "ssim_window": SSIM_WINDOW,
            "ssim_sigma": SSIM_SIGMA,
            "ssim_k": [SSIM_K1, SSIM_K2],
            "ssim_range": SSIM_L,
        }
    )

    @property
    def mean_psnr(self) -> float:
        vals = [r["psnr_db"] for r in self.per_image]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def mean_ssim(self) -> float:
        vals = [r["ssim"] for r in self.per_image]
        return float(np.mean(vals)) if vals else float("nan")

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "dataset": self.dataset,
            "method": self.method,
            "sr_factor": self.sr_factor,
            "shave": self.shave,
            "conventions": self.conventions,
            "per_image": self.per_image,
            "aggregate": {"psnr_db": self.mean_psnr, "ssim": self.mean_ssim},
        }

    def table(self) -> str:
        lines = [
            f"{'image':<24s} {'PSNR (dB)':>10s} {'SSIM':>8s}",
            "-" * 44,
        ]
        for r in self.per_image:
            lines.append(
                f"{r['name']:<24s} {r['psnr_db']:>10.2f} {r['ssim']:>8.4f}"
            )
        lines.append("-" * 44)
        lines.append(
            f"{'mean':<24s} {self.mean_psnr:>10.2f} {self.mean_ssim:>8.4f}"
        )
        return "\n".join(lines)

    def csv(self) -> str:
        rows = ["name,psnr_db,ssim"]
        for r in self.per_image:
            rows.append(f"{r['name']},{r['psnr_db']:.6f},{r['ssim']:.6f}")
        rows.append(f"mean,{self.mean_psnr:.6f},{self.mean_ssim:.6f}")
        return "\n".join(rows) + "\n"


def _lr_for_entry(hr: np.ndarray, lr_path, s: int):
    """Use the manifest LR if present, else derive it bicubically from HR."""
    H, W = hr.shape[:2]
    hr_c = np.ascontiguousarray(hr[: H - H % s, : W - W % s])
    if lr_path:
        lr = im.load_png(lr_path)
        if (lr.shape[0] * s, lr.shape[1] * s) != hr_c.shape[:2]:
            # LR does not match the s-cropped HR; re-crop HR to s*LR dims
            hr_c = np.ascontiguousarray(hr[: lr.shape[0] * s, : lr.shape[1] * s])
        return hr_c, lr
    return hr_c, rs.downscale_by_int(hr_c, s)


def evaluate(
    method: str,
    manifest: Manifest,
    s: int,
    shave: int | None = None,
    checkpoint: str | None = None,
    out_dir: str | None = None,
    error_maps: bool = False,
) -> MetricReport:
    """Evaluate bicubic upscaling or a model checkpoint over a manifest.

    Writes report.json / report.txt / report.csv (and per-image error-map
    PNGs plus a summary figure) into out_dir when given.
    """
    if method not in ("bicubic", "model"):
        raise MetricError(f"unknown method {method!r}")
    if shave is None:
        shave = s
    params = config = None
    if method == "model":
        if checkpoint is None:
            raise MetricError("model evaluation needs a checkpoint")
        params, config = M.load_checkpoint(checkpoint)
        if config.sr_factor != s:
            raise MetricError(
                f"checkpoint is for x{config.sr_factor}, requested x{s}"
            )
    report = MetricReport(manifest.name, method, s, shave)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    for e in sorted(manifest.entries, key=lambda e: e.image_id):
        if e.hr_path is None:
            raise MetricError(f"entry {e.image_id} has no ground-truth HR")
        hr = im.load_png(e.hr_path)
        hr_c, lr = _lr_for_entry(hr, e.lr_path, s)
        if method == "bicubic":
            sr = rs.resize(lr, hr_c.shape[1], hr_c.shape[0], "bicubic")
        else:
            sr = M.upscale_image(params, config, lr)
        report.per_image.append(
            {
                "name": e.image_id,
                "psnr_db": psnr_y(hr_c, sr, shave),
                "ssim": ssim_y(hr_c, sr, shave),
            }
        )
        if out_dir and error_maps:
            im.save_png(
                error_map(hr_c, sr), os.path.join(out_dir, f"{e.image_id}_error.png")
            )
    if out_dir:
        with open(os.path.join(out_dir, "report.json"), "w") as f:
            json.dump(report.to_dict(), f, indent=2)
        with open(os.path.join(out_dir, "report.txt"), "w") as f:
            f.write(report.table() + "\n")
        with open(os.path.join(out_dir, "report.csv"), "w") as f:
            f.write(report.csv())
        _plot_report(report, os.path.join(out_dir, "report.png"))
    return report


def _plot_report(report: MetricReport, path: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = [r["name"] for r in report.per_image]
    psnrs = [r["psnr_db"] for r in report.per_image]
    ssims = [r["ssim"] for r in report.per_image]
    fig, (ax1, ax2) = plt.subplots(
        1, 2, figsize=(max(6, 0.5 * len(names) + 3), 4)
    )
    x = np.arange(len(names))
    ax1.bar(x, psnrs, color="C0")
    ax1.axhline(report.mean_psnr, color="C1", ls="--", lw=1, label="mean")
    ax1.set_xticks(x, names, rotation=90, fontsize=7)
    ax1.set_ylabel("Y-PSNR (dB)")
    ax1.legend()
    ax2.bar(x, ssims, color="C2")
    ax2.axhline(report.mean_ssim, color="C1", ls="--", lw=1)
    ax2.set_xticks(x, names, rotation=90, fontsize=7)
    ax2.set_ylabel("Y-SSIM")
    fig.suptitle(f"{report.dataset} x{report.sr_factor} ({report.method})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
