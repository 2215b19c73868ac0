"""8-bit RGB images: PNG I/O, lossless geometry ops, Y-plane conversion.

Images are numpy uint8 arrays of shape (H, W, 3), interleaved RGB.  All
geometric ops are pure pixel permutations / copies; no interpolation happens
in this module.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image, PngImagePlugin


class ImageError(ValueError):
    pass


def _check_image(img: np.ndarray) -> np.ndarray:
    if not isinstance(img, np.ndarray) or img.dtype != np.uint8:
        raise ImageError("expected uint8 numpy array")
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageError(f"expected (H, W, 3) array, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ImageError("empty image")
    return img


def load_png(path: str) -> np.ndarray:
    """Load an 8-bit PNG as an (H, W, 3) uint8 array.

    Grayscale and paletted files are expanded to RGB.  Alpha channels and
    bit depths above 8 are rejected.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with Image.open(path) as im:
        if not isinstance(im, PngImagePlugin.PngImageFile):
            raise ImageError(f"{path}: not a PNG file")
        if im.mode in ("I", "I;16", "I;16B", "I;16L", "I;16N"):
            raise ImageError(f"{path}: unsupported bit depth (>8)")
        if im.mode in ("RGBA", "LA", "PA") or "transparency" in im.info:
            raise ImageError(f"{path}: alpha channel present")
        if im.mode == "P":
            im = im.convert("RGB")
        elif im.mode == "L":
            im = im.convert("RGB")
        elif im.mode != "RGB":
            raise ImageError(f"{path}: unsupported mode {im.mode}")
        arr = np.asarray(im, dtype=np.uint8)
    return _check_image(arr.copy())


def save_png(img: np.ndarray, path: str) -> None:
    """Write an (H, W, 3) uint8 array as a lossless RGB PNG."""
    _check_image(img)
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise FileNotFoundError(f"parent directory does not exist: {parent}")
    Image.fromarray(img, mode="RGB").save(path, format="PNG")


def rotate90(img: np.ndarray, quarter_turns: int) -> np.ndarray:
    """Rotate by quarter_turns * 90 degrees counter-clockwise (exact)."""
    _check_image(img)
    if quarter_turns not in (0, 1, 2, 3):
        raise ImageError(f"quarter_turns must be in 0..3, got {quarter_turns}")
    return np.ascontiguousarray(np.rot90(img, k=quarter_turns))


def hflip(img: np.ndarray) -> np.ndarray:
    """Mirror columns (left-right flip)."""
    _check_image(img)
    return np.ascontiguousarray(img[:, ::-1, :])


def crop(img: np.ndarray, top: int, left: int, h: int, w: int) -> np.ndarray:
    _check_image(img)
    H, W = img.shape[:2]
    if h < 1 or w < 1:
        raise ImageError("crop size must be >= 1")
    if top < 0 or left < 0 or top + h > H or left + w > W:
        raise ImageError(
            f"crop rectangle ({top},{left},{h},{w}) out of bounds for {H}x{W}"
        )
    return np.ascontiguousarray(img[top : top + h, left : left + w, :])


# BT.601 studio-swing luma; raw bytes in, float plane in [16, 235] out.
_Y_COEFFS = np.array([65.481, 128.553, 24.966], dtype=np.float64)


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """Convert RGB bytes to the float luma plane used by the benchmark metrics."""
    _check_image(img)
    return 16.0 + img.astype(np.float64) @ _Y_COEFFS / 255.0


def u8_round(x: np.ndarray | float) -> np.ndarray:
    """Clamp to [0, 255] and round half away from zero to uint8."""
    arr = np.asarray(x, dtype=np.float64)
    out = np.clip(np.floor(np.abs(arr) + 0.5) * np.sign(arr), 0.0, 255.0)
    return out.astype(np.uint8)
