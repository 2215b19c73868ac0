"""Produce the resampler golden corpus with Pillow.

For every (fixture, kernel, size pair) in the matrix this writes the Pillow
resize output as PNG and records its SHA-256 in a manifest; it also dumps
exact 1-D coefficient matrices recovered through float-mode impulse
responses. The consuming conformance suite only ever reads the manifest and
the PNG files, never this package.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil

import numpy as np
import PIL
from PIL import Image

FILTERS = {
    "nearest": Image.Resampling.NEAREST,
    "box": Image.Resampling.BOX,
    "bilinear": Image.Resampling.BILINEAR,
    "hamming": Image.Resampling.HAMMING,
    "bicubic": Image.Resampling.BICUBIC,
    "lanczos": Image.Resampling.LANCZOS,
}

# Fixed-point coefficient behavior has been stable across these majors; the
# manifest records the exact version regardless.
SUPPORTED_MAJORS = (9, 10, 11, 12)

DEFAULT_FIXTURES = (
    "gradient_48x48",
    "checker_17x23",
    "noise_64x96",
    "glyphs_48x48",
)

COEFF_SIZE_PAIRS = ((48, 60), (48, 36), (17, 5), (8, 32), (23, 23), (64, 48))


class GoldenError(RuntimeError):
    pass


def check_library_version() -> str:
    version = PIL.__version__
    major = int(version.split(".")[0])
    if major not in SUPPORTED_MAJORS:
        raise GoldenError(
            f"Pillow {version} outside pinned majors {SUPPORTED_MAJORS}"
        )
    return version


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def size_matrix(h: int, w: int) -> list[tuple[int, int]]:
    """Target (h, w) pairs covering identity, up/down, fractional, anisotropic."""
    raw = [
        (h, w),
        (2 * h, 2 * w),
        (max(1, h // 2), max(1, w // 2)),
        (max(1, (3 * h) // 4), max(1, (3 * w) // 4)),
        ((5 * h) // 4, (5 * w) // 4),
        (h, 2 * w),
        (2 * h, w),
        (max(1, (2 * h) // 3), (3 * w) // 2),
        (h + 1, max(1, w - 1)),
        (7, 5),
        (1, 1),
        (3 * h, 3 * w),
    ]
    seen, out = set(), []
    for p in raw:
        if p not in seen:
            seen.add(p)
            out.append(p)
    return out


def coeff_matrix(in_size: int, out_size: int, kernel: str) -> np.ndarray:
    """Exact (out x in) coefficient matrix via float-mode impulse responses.

    Mode-F resizing applies the unquantized double-precision coefficients,
    so each unit impulse reads out one column of the resize operator.
    """
    M = np.zeros((out_size, in_size), dtype=np.float64)
    for j in range(in_size):
        row = np.zeros((1, in_size), dtype=np.float32)
        row[0, j] = 1.0
        img = Image.fromarray(row, mode="F")
        out = img.resize((out_size, 1), FILTERS[kernel])
        M[:, j] = np.asarray(out, dtype=np.float64)[0]
    return M


def generate_goldens(
    fixture_dir: str, out_dir: str, fixture_ids=DEFAULT_FIXTURES
) -> dict:
    """Build the full corpus under out_dir and return the manifest dict."""
    version = check_library_version()
    os.makedirs(os.path.join(out_dir, "fixtures"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "cases"), exist_ok=True)
    fixtures = {}
    images = {}
    for fid in sorted(fixture_ids):
        src = os.path.join(fixture_dir, f"{fid}.png")
        if not os.path.exists(src):
            raise GoldenError(f"missing fixture {src}")
        dst_rel = os.path.join("fixtures", f"{fid}.png")
        shutil.copyfile(src, os.path.join(out_dir, dst_rel))
        fixtures[fid] = {"path": dst_rel, "sha256": sha256_file(src)}
        img = Image.open(src)
        if img.mode != "RGB":
            img = img.convert("RGB")
        images[fid] = img
    cases = []
    for fid in sorted(fixture_ids):
        img = images[fid]
        w_in, h_in = img.size
        for kernel in sorted(FILTERS):
            for h_out, w_out in size_matrix(h_in, w_in):
                cid = f"{fid}__{kernel}__{h_out}x{w_out}"
                rel = os.path.join("cases", f"{cid}.png")
                out = img.resize((w_out, h_out), FILTERS[kernel])
                out.save(os.path.join(out_dir, rel), format="PNG")
                cases.append(
                    {
                        "id": cid,
                        "fixture": fid,
                        "kernel": kernel,
                        "in_size": [h_in, w_in],
                        "out_size": [h_out, w_out],
                        "path": rel,
                        "sha256": sha256_file(os.path.join(out_dir, rel)),
                    }
                )
    cases.sort(key=lambda c: c["id"])
    ids = [c["id"] for c in cases]
    if len(set(ids)) != len(ids):
        raise GoldenError("duplicate case ids in matrix")
    coefficients = []
    for kernel in sorted(FILTERS):
        if kernel == "nearest":
            continue
        for in_size, out_size in COEFF_SIZE_PAIRS:
            coefficients.append(
                {
                    "kernel": kernel,
                    "in_size": in_size,
                    "out_size": out_size,
                    "matrix": coeff_matrix(in_size, out_size, kernel).tolist(),
                }
            )
    manifest = {
        "schema_version": 1,
        "generator": {"library": "Pillow", "version": version},
        "fixtures": fixtures,
        "cases": cases,
        "coefficients": coefficients,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1)
    return manifest


def check_against(manifest_path: str) -> list[str]:
    """Regenerate the corpus and compare output hashes to a checked-in manifest."""
    with open(manifest_path) as f:
        ref = json.load(f)
    base = os.path.dirname(os.path.abspath(manifest_path))
    version = check_library_version()
    problems = []
    if ref["generator"]["version"] != version:
        problems.append(
            f"library version {version} != manifest "
            f"{ref['generator']['version']} (hashes may differ by design)"
        )
    by_id = {}
    for fid, rec in ref["fixtures"].items():
        p = os.path.join(base, rec["path"])
        if sha256_file(p) != rec["sha256"]:
            problems.append(f"fixture {fid}: checked-in file hash mismatch")
            continue
        img = Image.open(p)
        by_id[fid] = img.convert("RGB") if img.mode != "RGB" else img
    import tempfile

    for case in ref["cases"]:
        img = by_id.get(case["fixture"])
        if img is None:
            problems.append(f"case {case['id']}: fixture unavailable")
            continue
        h_out, w_out = case["out_size"]
        out = img.resize((w_out, h_out), FILTERS[case["kernel"]])
        with tempfile.NamedTemporaryFile(suffix=".png") as tmp:
            out.save(tmp.name, format="PNG")
            digest = sha256_file(tmp.name)
        if digest != case["sha256"]:
            problems.append(f"case {case['id']}: regenerated hash differs")
    return problems
