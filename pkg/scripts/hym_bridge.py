#!/usr/bin/env python3
"""Table of the normalized HYM value of Hilb_k(reference) against its measure bound."""

import argparse

from wzwlab import projmodel as pm


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--degrees", type=int, nargs="+", default=[1, 0])
    p.add_argument("--t", type=float, default=0.5)
    p.add_argument("--k", type=int, nargs="+", default=[1, 2, 4, 8])
    args = p.parse_args()
    model, grid = pm.model_new(args.degrees)
    ref = pm.reference_potential(model, 1, grid)
    half = pm.wzw_functional(ref, args.t).value / 2
    print(f"{'k':>3} {'hym/(kN_k)':>14} {'lower bound':>14} {'|hym - wzw/2|':>14}")
    for k in args.k:
        v = pm.hym_on_hilb(model, ref, k, args.t)
        print(f"{k:>3} {v:>14.10f} {pm.hym_lower_bound(model, k, args.t):>14.10f} {abs(v - half):>14.10f}")


if __name__ == "__main__":
    main()
