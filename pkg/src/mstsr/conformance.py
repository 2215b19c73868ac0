"""Golden-corpus conformance runner for the resampler.

Consumes a manifest JSON (produced by the companion golden generator) that
lists source fixtures, reference resize outputs with SHA-256 hashes, and
coefficient-table dumps. Verifies file integrity, re-runs every resize with
this package's resampler, and aggregates per-kernel byte statistics.

Pass condition: every hash matches, >= 99.9% of output bytes are exact,
max absolute byte difference <= 1, and coefficient tables agree to 1e-5.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from . import image as im
from . import resample as rs

EXACT_FRACTION_MIN = 0.999
MAX_ABS_DIFF = 1
COEFF_TOL = 1e-5


class ConformanceError(ValueError):
    pass


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def load_manifest(path: str) -> dict:
    with open(path) as f:
        manifest = json.load(f)
    for key in ("schema_version", "generator", "fixtures", "cases"):
        if key not in manifest:
            raise ConformanceError(f"manifest missing {key!r}")
    if manifest["schema_version"] != 1:
        raise ConformanceError(
            f"unsupported manifest schema {manifest['schema_version']}"
        )
    return manifest


def run_conformance(manifest_path: str) -> dict:
    """Run the full golden suite; returns a report dict with ok flag."""
    manifest = load_manifest(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    failures = []
    fixtures = {}
    for fid, rec in sorted(manifest["fixtures"].items()):
        p = os.path.join(base, rec["path"])
        if not os.path.exists(p):
            failures.append(f"fixture {fid}: missing file {rec['path']}")
            continue
        if sha256_file(p) != rec["sha256"]:
            failures.append(f"fixture {fid}: hash mismatch")
            continue
        fixtures[fid] = im.load_png(p)

    per_kernel = {
        k: {"cases": 0, "bytes": 0, "exact_bytes": 0, "max_abs_diff": 0}
        for k in rs.KERNELS
    }
    for case in manifest["cases"]:
        cid = case["id"]
        kernel = case["kernel"]
        if kernel not in per_kernel:
            failures.append(f"case {cid}: unknown kernel {kernel!r}")
            continue
        if case["fixture"] not in fixtures:
            failures.append(f"case {cid}: fixture {case['fixture']} unavailable")
            continue
        p = os.path.join(base, case["path"])
        if not os.path.exists(p):
            failures.append(f"case {cid}: missing golden file")
            continue
        if sha256_file(p) != case["sha256"]:
            failures.append(f"case {cid}: golden file hash mismatch (corrupted?)")
            continue
        golden = im.load_png(p)
        oh, ow = case["out_size"]
        if golden.shape[:2] != (oh, ow):
            failures.append(f"case {cid}: golden dims {golden.shape[:2]} != {(oh, ow)}")
            continue
        ours = rs.resize(fixtures[case["fixture"]], ow, oh, kernel)
        diff = np.abs(ours.astype(np.int16) - golden.astype(np.int16))
        st = per_kernel[kernel]
        st["cases"] += 1
        st["bytes"] += diff.size
        st["exact_bytes"] += int(np.count_nonzero(diff == 0))
        st["max_abs_diff"] = max(st["max_abs_diff"], int(diff.max()))
        if diff.max() > MAX_ABS_DIFF:
            failures.append(f"case {cid}: max |diff| {int(diff.max())} > {MAX_ABS_DIFF}")

    coeff_checked = 0
    for rec in manifest.get("coefficients", []):
        label = f"{rec['kernel']} {rec['in_size']}->{rec['out_size']}"
        ref = np.asarray(rec["matrix"], dtype=np.float64)
        if ref.shape != (rec["out_size"], rec["in_size"]):
            failures.append(f"coefficients {label}: bad matrix shape {ref.shape}")
            continue
        bounds, weights = rs.precompute_coeffs(
            rec["in_size"], rec["out_size"], rec["kernel"]
        )
        dense = np.zeros((rec["out_size"], rec["in_size"]))
        for i, (x0, n) in enumerate(bounds):
            dense[i, x0 : x0 + n] = weights[i]
        err = float(np.max(np.abs(dense - ref)))
        if err > COEFF_TOL:
            failures.append(f"coefficients {label}: max weight error {err:.2e}")
        coeff_checked += 1

    total_bytes = sum(s["bytes"] for s in per_kernel.values())
    exact_bytes = sum(s["exact_bytes"] for s in per_kernel.values())
    exact_fraction = exact_bytes / total_bytes if total_bytes else 0.0
    max_diff = max((s["max_abs_diff"] for s in per_kernel.values()), default=0)
    for k, s in per_kernel.items():
        s["exact_fraction"] = s["exact_bytes"] / s["bytes"] if s["bytes"] else None
    ok = (
        not failures
        and total_bytes > 0
        and exact_fraction >= EXACT_FRACTION_MIN
        and max_diff <= MAX_ABS_DIFF
    )
    if total_bytes and exact_fraction < EXACT_FRACTION_MIN:
        failures.append(
            f"exact-byte fraction {exact_fraction:.6f} < {EXACT_FRACTION_MIN}"
        )
    return {
        "ok": ok,
        "generator": manifest["generator"],
        "cases": sum(s["cases"] for s in per_kernel.values()),
        "coefficient_tables": coeff_checked,
        "exact_fraction": exact_fraction,
        "max_abs_diff": max_diff,
        "per_kernel": per_kernel,
        "failures": failures,
    }


def format_report(report: dict) -> str:
    lines = [
        f"generator: {report['generator'].get('library')} "
        f"{report['generator'].get('version')}",
        f"{'kernel':<10s} {'cases':>6s} {'exact':>10s} {'max|diff|':>10s}",
        "-" * 40,
    ]
    for k, s in sorted(report["per_kernel"].items()):
        if not s["cases"]:
            continue
        lines.append(
            f"{k:<10s} {s['cases']:>6d} {s['exact_fraction']:>9.4%} "
            f"{s['max_abs_diff']:>10d}"
        )
    lines.append("-" * 40)
    lines.append(
        f"overall: {report['cases']} cases, "
        f"{report['exact_fraction']:.4%} exact, max |diff| {report['max_abs_diff']}, "
        f"{report['coefficient_tables']} coefficient tables"
    )
    for f in report["failures"]:
        lines.append(f"FAIL: {f}")
    lines.append("PASS" if report["ok"] else "FAIL")
    return "\n".join(lines)
