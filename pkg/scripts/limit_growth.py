"""H^s growth slopes of the limit field for a Gaussian datum.

Usage: python3 scripts/limit_growth.py [--dim 2] [--N 512] [--L 8] [--window 50 100]
"""

import argparse

from vnlw.field_core import gaussian_field, make_grid
from vnlw.limit_ode import limit_growth_fit, period_V


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dim", type=int, default=2)
    ap.add_argument("--N", type=int, default=512)
    ap.add_argument("--L", type=float, default=8.0)
    ap.add_argument("--p", type=int, default=5)
    ap.add_argument("--window", type=float, nargs=2, default=[50.0, 100.0])
    ap.add_argument("--s", type=float, nargs="+", default=[0.0, 0.5, 1.0])
    args = ap.parse_args(argv)
    phi0 = gaussian_field(make_grid(args.dim, args.N, args.L), 1.0, 1.0)
    print(f"oscillator period at unit amplitude: {period_V(args.p):.6f}")
    print("s,slope,expected")
    for s in args.s:
        slope, _, _ = limit_growth_fit(phi0, s, tuple(args.window), args.p)
        print(f"{s:g},{slope:.4f},{s:g}")


if __name__ == "__main__":
    main()
