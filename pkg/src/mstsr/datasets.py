"""Benchmark dataset ingestion and synthetic CI fixtures.

Layouts supported:
  flat   — a directory of PNGs (HR only)
  paired — parallel HR/ and LRx<s>/ directories, or <name>.png / <name>x<s>.png
  div2k  — DIV2K-style *_HR and *_LR_bicubic/X<s> directories
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field

import numpy as np

from . import image as im
from . import resample as rs
from .augment import make_rng


class DatasetError(ValueError):
    pass


@dataclass
class Entry:
    image_id: str
    hr_path: str | None = None
    lr_path: str | None = None


@dataclass
class Manifest:
    name: str
    sr_factor: int | None
    entries: list[Entry] = field(default_factory=list)

    def hr_paths(self) -> list[str]:
        return [e.hr_path for e in self.entries if e.hr_path]

    def lr_paths(self) -> list[str]:
        return [e.lr_path for e in self.entries if e.lr_path]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "sr_factor": self.sr_factor,
            "entries": [
                {"id": e.image_id, "hr": e.hr_path, "lr": e.lr_path}
                for e in self.entries
            ],
        }

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def load(cls, path: str) -> "Manifest":
        with open(path) as f:
            d = json.load(f)
        return cls(
            name=d["name"],
            sr_factor=d.get("sr_factor"),
            entries=[
                Entry(e["id"], e.get("hr"), e.get("lr")) for e in d["entries"]
            ],
        )


def _pngs(root: str) -> list[str]:
    return sorted(f for f in os.listdir(root) if f.lower().endswith(".png"))


def scan(root: str, layout: str = "flat", sr_factor: int | None = None) -> Manifest:
    """Build a manifest from a dataset directory (deterministic ordering)."""
    if not os.path.isdir(root):
        raise DatasetError(f"not a directory: {root}")
    name = os.path.basename(os.path.normpath(root))
    if layout == "flat":
        files = _pngs(root)
        if not files:
            raise DatasetError(f"no PNG files in {root}")
        entries = [
            Entry(os.path.splitext(f)[0], hr_path=os.path.join(root, f))
            for f in files
        ]
        return Manifest(name, sr_factor, entries)
    if layout == "paired":
        hr_dir = os.path.join(root, "HR")
        if os.path.isdir(hr_dir):
            if sr_factor is None:
                raise DatasetError("paired layout needs sr_factor")
            lr_dir = os.path.join(root, f"LRx{sr_factor}")
            if not os.path.isdir(lr_dir):
                raise DatasetError(f"missing LR directory {lr_dir}")
            entries = []
            lr_files = set(_pngs(lr_dir))
            for f in _pngs(hr_dir):
                if f not in lr_files:
                    raise DatasetError(f"unmatched HR file {f} (no LR counterpart)")
                lr_files.discard(f)
                entries.append(
                    Entry(
                        os.path.splitext(f)[0],
                        hr_path=os.path.join(hr_dir, f),
                        lr_path=os.path.join(lr_dir, f),
                    )
                )
            if lr_files:
                raise DatasetError(f"orphan LR files: {sorted(lr_files)}")
            if not entries:
                raise DatasetError(f"no PNG files in {hr_dir}")
            return Manifest(name, sr_factor, entries)
        # <name>.png / <name>x<s>.png convention in one directory
        if sr_factor is None:
            raise DatasetError("paired layout needs sr_factor")
        suffix = f"x{sr_factor}"
        files = _pngs(root)
        hrs = [f for f in files if not os.path.splitext(f)[0].endswith(suffix)]
        lrs = {
            os.path.splitext(f)[0][: -len(suffix)]: f
            for f in files
            if os.path.splitext(f)[0].endswith(suffix)
        }
        entries = []
        for f in hrs:
            stem = os.path.splitext(f)[0]
            if stem not in lrs:
                raise DatasetError(f"unmatched HR file {f} (no {stem}{suffix}.png)")
            entries.append(
                Entry(
                    stem,
                    hr_path=os.path.join(root, f),
                    lr_path=os.path.join(root, lrs.pop(stem)),
                )
            )
        if lrs:
            raise DatasetError(f"orphan LR files: {sorted(lrs.values())}")
        if not entries:
            raise DatasetError(f"no paired PNG files in {root}")
        return Manifest(name, sr_factor, entries)
    if layout == "div2k":
        if sr_factor is None:
            raise DatasetError("div2k layout needs sr_factor")
        hr_dirs = sorted(d for d in os.listdir(root) if d.endswith("_HR"))
        if not hr_dirs:
            raise DatasetError(f"no *_HR directory under {root}")
        hr_dir = os.path.join(root, hr_dirs[0])
        lr_base = hr_dirs[0][: -len("_HR")] + "_LR_bicubic"
        lr_dir = os.path.join(root, lr_base, f"X{sr_factor}")
        entries = []
        for f in _pngs(hr_dir):
            stem = os.path.splitext(f)[0]
            lr_path = os.path.join(lr_dir, f"{stem}x{sr_factor}.png")
            entries.append(
                Entry(
                    stem,
                    hr_path=os.path.join(hr_dir, f),
                    lr_path=lr_path if os.path.exists(lr_path) else None,
                )
            )
        if not entries:
            raise DatasetError(f"no PNG files in {hr_dir}")
        return Manifest(name, sr_factor, entries)
    raise DatasetError(f"unknown layout {layout!r}")


def derive_lr(manifest: Manifest, s: int, out_dir: str) -> Manifest:
    """Bicubic-downscale every HR image by s (after s-divisible top-left crop)."""
    os.makedirs(out_dir, exist_ok=True)
    out = Manifest(manifest.name, s)
    for e in manifest.entries:
        if e.hr_path is None:
            raise DatasetError(f"entry {e.image_id} has no HR path")
        hr = im.load_png(e.hr_path)
        H, W = hr.shape[:2]
        if H < s or W < s:
            raise DatasetError(f"{e.image_id}: HR smaller than {s}x{s}")
        hr = hr[: H - H % s, : W - W % s]
        lr = rs.downscale_by_int(np.ascontiguousarray(hr), s)
        lr_path = os.path.join(out_dir, f"{e.image_id}x{s}.png")
        im.save_png(lr, lr_path)
        out.entries.append(Entry(e.image_id, hr_path=e.hr_path, lr_path=lr_path))
    return out


FIXTURE_SIZES = ((17, 23), (48, 48), (64, 96), (128, 128))


def _blur3(chan: np.ndarray) -> np.ndarray:
    """Integer binomial blur, platform-exact."""
    k = np.array([1, 4, 6, 4, 1], dtype=np.int64)
    pad = np.pad(chan.astype(np.int64), 2, mode="edge")
    h = sum(k[i] * pad[:, i : i + chan.shape[1]] for i in range(5))
    v = sum(k[i] * h[i : i + chan.shape[0], :] for i in range(5))
    return (v // 256).astype(np.uint8)


def _gradient(h: int, w: int, phase: int) -> np.ndarray:
    yy, xx = np.indices((h, w))
    r = (yy * 255 // max(h - 1, 1)).astype(np.uint8)
    g = (xx * 255 // max(w - 1, 1)).astype(np.uint8)
    b = (((yy + xx + phase) * 7) % 256).astype(np.uint8)
    return np.stack([r, g, b], axis=-1)


def _checker(h: int, w: int, cell: int) -> np.ndarray:
    yy, xx = np.indices((h, w))
    m = (((yy // cell) + (xx // cell)) % 2) * 255
    out = np.stack([m, 255 - m, m], axis=-1).astype(np.uint8)
    return out


def _noise(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    raw = rng.integers(0, 256, (h, w, 3)).astype(np.uint8)
    return np.stack([_blur3(raw[:, :, c]) for c in range(3)], axis=-1)


def _glyphs(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    img = np.full((h, w, 3), 235, dtype=np.uint8)
    for _ in range(max(4, h * w // 300)):
        y = int(rng.integers(h))
        x = int(rng.integers(w))
        gh = int(rng.integers(2, max(3, h // 6)))
        gw = int(rng.integers(1, 4))
        col = int(rng.integers(0, 80))
        img[y : min(y + gh, h), x : min(x + gw, w)] = col
        if rng.random() < 0.5:  # crossbar
            img[y : min(y + gw, h), x : min(x + gh, w)] = col
    return img


def make_fixtures(out_dir: str, seed: int = 0) -> list[str]:
    """Write the deterministic synthetic fixture set; returns file paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for h, w in FIXTURE_SIZES:
        rng = make_rng(seed, h, w)
        for name, img in (
            ("gradient", _gradient(h, w, seed % 256)),
            ("checker", _checker(h, w, 3 if min(h, w) < 32 else 8)),
            ("noise", _noise(h, w, rng)),
            ("glyphs", _glyphs(h, w, rng)),
        ):
            p = os.path.join(out_dir, f"{name}_{h}x{w}.png")
            im.save_png(img, p)
            paths.append(p)
    return sorted(paths)
