"""Grid search over detector noise and input weight on the drift comparison.

Prints one line per setting with the zero-mean fractions and the chi_x spreads of
the three variants.  Slow: three closed-loop runs per grid point.

Usage: python scripts/tune_noise.py --sigma 1e-6 3e-6 --r 1e9 3e9 [--duration 0.1]
"""

import argparse

import numpy as np

from apexlqg.control import SynthesisError
from apexlqg.experiments import VARIANTS, compare, window_std
from apexlqg.scenario import deep_update, from_dict, load_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="fig4_drift")
    ap.add_argument("--sigma", type=float, nargs="+", default=[3e-6], help="detector noise (V/sqrt(Hz))")
    ap.add_argument("--r", type=float, nargs="+", default=[3e9], help="input weight")
    ap.add_argument("--duration", type=float, default=None)
    args = ap.parse_args()
    base = load_scenario(args.scenario).to_dict()
    for s in args.sigma:
        for r in args.r:
            patch = {"detection": {"sigma_x_V_per_rtHz": s, "sigma_z_V_per_rtHz": s}, "controller": {"r_lqr": r}}
            if args.duration is not None:
                patch["simulation"] = {"duration_s": args.duration}
            sc = from_dict(deep_update(base, patch))
            try:
                cmp = compare(sc)
            except SynthesisError as e:
                print(f"sigma {s:.1e} r {r:.1e}: synthesis failed ({e})")
                continue
            parts = []
            for v in VARIANTS:
                if cmp.records[v].lost:
                    parts.append(f"{v} lost")
                    continue
                rep = cmp.reports[v]
                parts.append(f"{v} zm {np.mean(rep.zero_mean_force):.2f} std {window_std(rep) * 1e3:.1f} mV")
            print(f"sigma {s:.1e} r {r:.1e}: " + ", ".join(parts))


if __name__ == "__main__":
    main()
