"""Command-line entry point.

Subcommands: fixtures, generate-pairs, train, eval, conformance.
Exit codes: 0 success, 1 verification failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import conformance as cf
from . import datasets as ds
from . import image as im
from . import metrics as mx
from . import model as M
from . import train as tr
from .augment import AugmentationSpec, load_presets, pair_at_index

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_USAGE = 2


class UsageError(ValueError):
    pass


class VerifyError(ValueError):
    pass


def _echo_config(out_dir: str, config: dict) -> None:
    """Reproducibility record: the effective configuration of this invocation."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as f:
        json.dump(config, f, indent=2, default=str)


def _parse_overrides(pairs: list[str]) -> dict:
    out = {}
    for p in pairs:
        if "=" not in p:
            raise UsageError(f"override {p!r} is not key=value")
        k, v = p.split("=", 1)
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


def _resolve_spec(args) -> AugmentationSpec:
    presets = load_presets()
    if args.spec_file:
        with open(args.spec_file) as f:
            d = json.load(f)
    elif args.preset:
        if args.preset not in presets:
            raise UsageError(
                f"unknown preset {args.preset!r}; available: "
                + ", ".join(sorted(presets))
            )
        d = presets[args.preset].to_dict()
    else:
        raise UsageError("need --preset or --spec-file")
    for k, v in _parse_overrides(args.set or []).items():
        if not k.startswith("aug."):
            raise UsageError(f"generate-pairs overrides use aug.<field>, got {k!r}")
        d[k[len("aug."):]] = v
    return AugmentationSpec.from_dict(d)


def _source_images(args, spec, workdir):
    """User-supplied image directory, or the synthetic fixture set."""
    if args.images:
        man = ds.scan(args.images, "flat")
        paths = man.hr_paths()
    else:
        paths = ds.make_fixtures(os.path.join(workdir, "fixtures"), seed=args.seed)
    usable = []
    for p in paths:
        img = im.load_png(p)
        if img.shape[0] >= spec.hr_h and img.shape[1] >= spec.hr_w:
            usable.append(p)
    if not usable:
        raise UsageError(
            f"no source image is at least {spec.hr_h}x{spec.hr_w} "
            f"(pseudo-HR crop for this spec)"
        )
    return usable


def _write_pair_range(paths, spec_dict, seed, start, stop, out_dir):
    spec = AugmentationSpec.from_dict(spec_dict)
    recs = []
    for i in range(start, stop):
        s = pair_at_index(paths, spec, seed, i)
        im.save_png(s.pseudo_lr, os.path.join(out_dir, f"{i:06d}_lr.png"))
        im.save_png(s.pseudo_hr, os.path.join(out_dir, f"{i:06d}_hr.png"))
        recs.append({"index": i, **s.provenance})
    return recs


def cmd_generate_pairs(args) -> int:
    spec = _resolve_spec(args)
    os.makedirs(args.out, exist_ok=True)
    paths = _source_images(args, spec, args.out)
    _echo_config(
        args.out,
        {
            "subcommand": "generate-pairs",
            "spec": spec.to_dict(),
            "count": args.count,
            "seed": args.seed,
            "stats": args.stats,
            "sources": paths,
        },
    )
    if args.stats:
        return _pair_stats(paths, spec, args)
    pair_dir = os.path.join(args.out, "pairs")
    os.makedirs(pair_dir, exist_ok=True)
    n = args.count
    if args.workers > 1:
        chunk = -(-n // args.workers)
        ranges = [(i, min(i + chunk, n)) for i in range(0, n, chunk)]
        with ProcessPoolExecutor(args.workers) as ex:
            parts = list(
                ex.map(
                    _write_pair_range,
                    *zip(*[(paths, spec.to_dict(), args.seed, a, b, pair_dir)
                           for a, b in ranges]),
                )
            )
        recs = [r for part in parts for r in part]
    else:
        recs = _write_pair_range(paths, spec.to_dict(), args.seed, 0, n, pair_dir)
    recs.sort(key=lambda r: r["index"])
    with open(os.path.join(args.out, "provenance.ndjson"), "w") as f:
        for r in recs:
            f.write(json.dumps(r) + "\n")
    print(f"wrote {n} pairs to {pair_dir}")
    return EXIT_OK


def _pair_stats(paths, spec, args) -> int:
    """Frequency report over the decision stream (no pixel work)."""
    n = args.count
    branch_counts = {}
    orient_counts = np.zeros(8, dtype=np.int64)
    orient_n = 0
    gammas = []
    # Per-source feasibility threshold: accepted gammas are uniform on [t, 1),
    # so (g - t) / (1 - t) must be standard uniform regardless of image sizes.
    thresholds = []
    for p in paths:
        h, w = im.load_png(p).shape[:2]
        thresholds.append(
            max(spec.gamma_min, (spec.hr_h - 0.5) / h, (spec.hr_w - 0.5) / w)
        )
    for i in range(n):
        prov = pair_at_index(paths, spec, args.seed, i, stats_only=True).provenance
        if spec.method == "simusr":
            b = prov["branch"]
            drew_orient = b in ("scale", "orient")
            if prov.get("gamma") is not None:
                t = thresholds[prov["source_index"]]
                gammas.append((prov["gamma"] - t) / (1.0 - t))
        else:
            f = prov["scale"]
            b = "down" if f < 1.0 else ("up" if f > 1.0 else "identity")
            drew_orient = True
        branch_counts[b] = branch_counts.get(b, 0) + 1
        if drew_orient:
            orient_counts[prov["rotation_turns"] * 2 + int(prov["hflip"])] += 1
            orient_n += 1

    if spec.method == "simusr":
        expected = dict(zip(("scale", "orient", "bypass"), spec.branch_probs))
    else:
        expected = dict(zip(("down", "identity", "up"), spec.branch_probs))
    failures = []
    report = {"count": n, "branches": {}, "orientations": None, "gamma_ks": None}
    for b, p in expected.items():
        freq = branch_counts.get(b, 0) / n
        report["branches"][b] = {"expected": p, "observed": freq}
        if abs(freq - p) > 0.01:
            failures.append(f"branch {b}: {freq:.4f} vs expected {p:.4f} (tol 0.01)")
    if orient_n:
        of = orient_counts / orient_n
        report["orientations"] = of.tolist()
        worst = float(np.max(np.abs(of - 0.125)))
        if worst > 0.01:
            failures.append(f"orientation deviation {worst:.4f} > 0.01")
    if gammas:
        cdf = np.sort(np.asarray(gammas))
        k = np.arange(1, cdf.size + 1)
        ks = float(
            max(np.max(k / cdf.size - cdf), np.max(cdf - (k - 1) / cdf.size))
        )
        report["gamma_ks"] = ks
        if ks > 0.01:
            failures.append(f"gamma KS distance {ks:.4f} > 0.01")
    report["failures"] = failures
    if args.json:
        print(json.dumps(report, indent=2))
    else:
        for b, r in report["branches"].items():
            print(f"branch {b:<9s} observed {r['observed']:.4f} expected {r['expected']:.4f}")
        if report["orientations"]:
            print("orientation freqs:", " ".join(f"{v:.4f}" for v in report["orientations"]))
        if report["gamma_ks"] is not None:
            print(f"gamma KS distance: {report['gamma_ks']:.5f}")
        for f in failures:
            print("FAIL:", f)
        print("PASS" if not failures else "FAIL")
    with open(os.path.join(args.out, "stats.json"), "w") as f:
        json.dump(report, f, indent=2)
    return EXIT_OK if not failures else EXIT_VERIFY


DESK_TRAIN = dict(total_iters=2000, batch_size=4, eval_every=500, lr0=2e-3)
DESK_AUG = dict(sr_factor=2, crop_h=24, crop_w=24)


def cmd_train(args) -> int:
    overrides = _parse_overrides(args.set or [])
    presets = load_presets()
    if args.preset == "desk":
        tc_kw = dict(DESK_TRAIN, seed=args.seed)
        mc = M.ModelConfig.micro(sr_factor=2)
        aug_d = dict(presets["mstbic-default"].to_dict(), **DESK_AUG)
    elif args.preset == "paper":
        if not args.images:
            raise UsageError("--preset paper needs --images (training image dir)")
        tc_kw = dict(
            total_iters=500_000, batch_size=16, lr0=2e-3,
            eval_every=5000, seed=args.seed,
        )
        mc = M.ModelConfig.lw(sr_factor=args.scale)
        aug_d = dict(presets["mstbic-default"].to_dict(), sr_factor=args.scale)
    else:
        raise UsageError(f"unknown train preset {args.preset!r} (desk or paper)")
    mc_d = mc.to_dict()
    for k, v in overrides.items():
        section, _, field = k.partition(".")
        if section == "train" and field:
            tc_kw[field] = v
        elif section == "model" and field:
            mc_d[field] = v
        elif section == "aug" and field:
            aug_d[field] = v
        else:
            raise UsageError(f"override {k!r} must be train.*, model.* or aug.*")
    tc = tr.TrainConfig(**tc_kw)
    mc = M.ModelConfig.from_dict(mc_d)
    spec = AugmentationSpec.from_dict(aug_d)
    os.makedirs(args.out, exist_ok=True)

    if args.images:
        man = ds.scan(args.images, "flat")
        paths = [p for p in man.hr_paths()]
        imgs = [im.load_png(p) for p in paths]
    else:
        fx = ds.make_fixtures(os.path.join(args.out, "fixtures"), seed=0)
        imgs = [im.load_png(p) for p in fx]
    # train on images comfortably larger than the pseudo-HR crop; hold out the
    # mid-sized ones for evaluation (tiny images are useless for either role)
    cut = spec.hr_h + 16
    train_imgs = [x for x in imgs if min(x.shape[:2]) >= cut]
    holdout = [x for x in imgs if 32 <= min(x.shape[:2]) < cut]
    if not holdout:
        # large corpora: hold out every 10th image
        holdout = train_imgs[::10]
        train_imgs = [x for i, x in enumerate(train_imgs) if i % 10]
    if not train_imgs:
        raise UsageError(f"no training image has min dimension >= {cut}")
    _echo_config(
        args.out,
        {
            "subcommand": "train",
            "preset": args.preset,
            "train": tc.to_dict(),
            "model": mc.to_dict(),
            "aug": spec.to_dict(),
            "n_train_images": len(train_imgs),
            "n_holdout_images": len(holdout),
        },
    )
    baseline = _bicubic_baseline(holdout, mc.sr_factor)
    summary = tr.train(
        tc, mc, spec, train_imgs, holdout, args.out, quiet=args.quiet
    )
    final = summary["best_eval_psnr_y"]
    if final is None and holdout:
        # eval_every was disabled; score the final checkpoint now
        params, cfg = M.load_checkpoint(summary["final_checkpoint"])
        final = tr.evaluate_psnr(params, cfg, holdout)
        summary["best_eval_psnr_y"] = final
    print(f"bicubic baseline Y-PSNR: {baseline:.3f} dB")
    print(f"trained model Y-PSNR:    {final:.3f} dB")
    print(f"margin: {final - baseline:+.3f} dB")
    summary["bicubic_baseline_psnr_y"] = baseline
    with open(os.path.join(args.out, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2)
    return EXIT_OK


def _bicubic_baseline(holdout, s) -> float:
    from . import resample as rs

    vals = []
    for hr in holdout:
        H, W = hr.shape[:2]
        hr_c = np.ascontiguousarray(hr[: H - H % s, : W - W % s])
        lr = rs.downscale_by_int(hr_c, s)
        sr = rs.resize(lr, hr_c.shape[1], hr_c.shape[0], "bicubic")
        v = mx.psnr_y(hr_c, sr, shave=s)
        if np.isfinite(v):
            vals.append(v)
    return float(np.mean(vals)) if vals else float("inf")


def cmd_eval(args) -> int:
    manifest = ds.scan(args.dataset, args.layout, args.scale)
    method = "model" if args.checkpoint else args.method
    report = mx.evaluate(
        method,
        manifest,
        args.scale,
        shave=args.shave,
        checkpoint=args.checkpoint,
        out_dir=args.out,
        error_maps=args.error_maps,
    )
    if args.out:
        _echo_config(
            args.out,
            {
                "subcommand": "eval",
                "method": method,
                "dataset": args.dataset,
                "layout": args.layout,
                "scale": args.scale,
                "shave": args.shave,
                "checkpoint": args.checkpoint,
            },
        )
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
    else:
        print(report.table())
    return EXIT_OK


def cmd_fixtures(args) -> int:
    paths = ds.make_fixtures(args.out, seed=args.seed)
    print(f"wrote {len(paths)} fixtures to {args.out}")
    return EXIT_OK


def cmd_conformance(args) -> int:
    if not os.path.exists(args.manifest):
        raise UsageError(f"manifest not found: {args.manifest}")
    report = cf.run_conformance(args.manifest)
    if args.json:
        print(json.dumps(report, indent=2))
    else:
        print(cf.format_report(report))
    return EXIT_OK if report["ok"] else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mstsr",
        description="LR-only super-resolution: pair synthesis, training, evaluation.",
    )
    sub = ap.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("fixtures", help="write synthetic CI fixture images")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fixtures)

    p = sub.add_parser("generate-pairs", help="synthesize pseudo-LR/HR pairs")
    p.add_argument("--preset")
    p.add_argument("--spec-file")
    p.add_argument("--images", help="source image directory (default: fixtures)")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--stats", action="store_true",
                   help="report decision frequencies instead of writing pairs")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--json", action="store_true")
    p.add_argument("--set", action="append", metavar="aug.KEY=VALUE")
    p.set_defaults(func=cmd_generate_pairs)

    p = sub.add_parser("train", help="train a model from pseudo-pairs")
    p.add_argument("--preset", required=True, choices=["desk", "paper"])
    p.add_argument("--images", help="training image directory (required for paper)")
    p.add_argument("--scale", type=int, default=4, help="SR factor (paper preset)")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--set", action="append",
                   metavar="SECTION.KEY=VALUE (train./model./aug.)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate bicubic or a checkpoint on a dataset")
    p.add_argument("--method", default="bicubic", choices=["bicubic", "model"])
    p.add_argument("--checkpoint")
    p.add_argument("--dataset", required=True)
    p.add_argument("--layout", default="flat", choices=["flat", "paired", "div2k"])
    p.add_argument("--scale", type=int, required=True)
    p.add_argument("--shave", type=int, default=None)
    p.add_argument("--out")
    p.add_argument("--error-maps", action="store_true")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("conformance", help="run the resampler golden suite")
    p.add_argument("--manifest", default="goldens/manifest.json")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_conformance)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ds.DatasetError, mx.MetricError, cf.ConformanceError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
