"""Command-line front end: generate or audit the golden corpus."""

from __future__ import annotations

import argparse
import sys

from .generate import DEFAULT_FIXTURES, GoldenError, check_against, generate_goldens


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="goldengen", description="resampler golden corpus generator"
    )
    sub = ap.add_subparsers(dest="cmd", required=True)
    g = sub.add_parser("generate", help="build the corpus from fixtures")
    g.add_argument("--fixtures", required=True, help="fixture PNG directory")
    g.add_argument("--out", required=True, help="corpus output directory")
    g.add_argument(
        "--select", nargs="+", default=list(DEFAULT_FIXTURES),
        help="fixture ids to include",
    )
    c = sub.add_parser("check", help="regenerate and compare against a manifest")
    c.add_argument("--manifest", required=True)
    args = ap.parse_args(argv)
    try:
        if args.cmd == "generate":
            manifest = generate_goldens(args.fixtures, args.out, args.select)
            print(
                f"wrote {len(manifest['cases'])} cases, "
                f"{len(manifest['coefficients'])} coefficient tables "
                f"(Pillow {manifest['generator']['version']})"
            )
            return 0
        problems = check_against(args.manifest)
        for p in problems:
            print(f"FAIL: {p}")
        print("PASS" if not problems else "FAIL")
        return 0 if not problems else 1
    except (GoldenError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
