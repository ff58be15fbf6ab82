#!/usr/bin/env python3
"""Gap wzw - rhs along the ray of the critical metric, one row per s."""

import argparse

from wzwlab import hnmeasure as hm
from wzwlab import projmodel as pm


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--degrees", type=int, nargs="+", default=[1, 0])
    p.add_argument("--t", type=float, default=0.5)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--s", type=float, nargs="+", default=[0, 1, 2, 4, 8, 16])
    p.add_argument("--perturb", type=float, default=0.0,
                   help="conformal perturbation of the first summand before the ray")
    args = p.parse_args()
    model, grid = pm.model_new(args.degrees)
    H = pm.critical_metric(model, args.k, grid)
    if args.perturb:
        H = pm.conformal_perturbation(H, 0, args.perturb)
    rhs = hm.rhs_main_theorem(args.degrees, args.t)
    print(f"rhs = {rhs:.10f}")
    for s in args.s:
        w = pm.wzw_functional(pm.dequantize(model, args.k, s, H), args.t)
        print(f"s={s:>5g}  wzw={w.value:.10f}  gap={w.value - rhs:+.3e}  signed={w.signed:+.8f}")


if __name__ == "__main__":
    main()
