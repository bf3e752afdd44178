"""Radial profiles of the unit kernel with envelope flags, plus decay fits.

Usage: python3 scripts/kernel_profile.py [--out-dir out/kernel_profiles]
"""

import argparse
from pathlib import Path

from vnlw.field_core import make_grid
from vnlw.kernel_lab import decay_fit, explicit_formula_check, unit_kernel, write_profile_csv

GRIDS = {1: (4096, 40.0), 2: (512, 32.0), 3: (128, 8.0)}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="out/kernel_profiles")
    ap.add_argument("--window", type=float, nargs=2, default=[5.0, 16.0])
    args = ap.parse_args(argv)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    print("n,integral,explicit_error,decay_slope,expected_slope")
    for n, (N, L) in GRIDS.items():
        grid = make_grid(n, N, L)
        prof = unit_kernel(grid)
        write_profile_csv(prof, out / f"kernel_n{n}.csv")
        slope = float("nan")
        if n < 3:
            slope = decay_fit(prof, args.window[0], min(args.window[1], prof.trusted_radius))
        print(f"{n},{prof.integral():.12f},{explicit_formula_check(n, grid):.3e},{slope:.3f},{-(n + 1)}")


if __name__ == "__main__":
    main()
