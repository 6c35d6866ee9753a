"""Adaptive2D run with the apex pushed past the projection bound and back.

Usage: python scripts/constraint_ramp.py [--out-dir out/constraint] [--seed N]
"""

import argparse
from pathlib import Path

from apexlqg.dynamics import run_closed_loop
from apexlqg.experiments import constraint_checks
from apexlqg.scenario import load_scenario
from apexlqg.traces import write_record


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="out/constraint")
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()
    sc = load_scenario("constraint_ramp")
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    rec = run_closed_loop(sc, sc.design())
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_record(rec, out / "constraint_ramp.csv")
    for c in constraint_checks(rec, sc):
        print(c.line())


if __name__ == "__main__":
    main()
