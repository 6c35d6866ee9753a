"""Run both three-variant comparisons (drift and sustained misalignment) through the CLI.

Usage: python scripts/reproduce_figures.py [--out-dir out/figures] [--plots]
"""

import argparse
import sys

from apexlqg.cli import main as cli


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="out/figures")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--plots", action="store_true")
    args = ap.parse_args()
    codes = []
    for fig in ("fig4", "fig5"):
        argv = ["reproduce", fig, "--out-dir", f"{args.out_dir}/{fig}"]
        if args.seed is not None:
            argv += ["--seed", str(args.seed)]
        if args.plots:
            argv.append("--plots")
        codes.append(cli(argv))
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())
