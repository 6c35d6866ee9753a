"""Calibrate the double-well potential and print its geometry.

Usage: python scripts/calibrate_potential.py [--scenario NAME] [--max-offset 30e-9]
"""

import argparse

import numpy as np

from apexlqg.constants import K_B, TWO_PI
from apexlqg.potential import find_apex, quadratic_fit_error, well_characteristics
from apexlqg.scenario import load_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="default")
    ap.add_argument("--max-offset", type=float, default=30e-9, help="largest TEM01 offset in the sweep (m)")
    args = ap.parse_args()

    sc = load_scenario(args.scenario)
    p, m, T0 = sc.potential, sc.particle.m, sc.particle.T0
    apex = find_apex(p)
    wells = well_characteristics(p, m)
    print(f"waist {p.w0 * 1e6:.4f} um, alpha {p.alpha_scale:.4e} J, beta {p.beta_scale:.4e} J")
    print(f"k_apex {apex.k_apex:.4e} N/m ({np.sqrt(-apex.k_apex / m) / TWO_PI / 1e3:.2f} kHz)")
    print(f"wells at {wells.x_left * 1e9:.1f} / {wells.x_right * 1e9:.1f} nm, "
          f"{wells.omega_well / TWO_PI / 1e3:.2f} kHz, barrier {wells.barrier / (K_B * T0):.1f} kT")
    print(f"quadratic fit error over +-170 nm: {quadratic_fit_error(p, 170e-9):.3%}")
    print("\n delta1_nm  apex_nm  k_apex/k_apex(0)")
    for d1 in np.linspace(-args.max_offset, args.max_offset, 7):
        a = find_apex(p.with_offsets(0.0, d1))
        print(f"{d1 * 1e9:10.2f} {a.delta_apex * 1e9:8.3f} {a.k_apex / apex.k_apex:10.4f}")


if __name__ == "__main__":
    main()
