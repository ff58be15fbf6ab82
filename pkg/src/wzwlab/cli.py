"""Command line runner: ``wzwlab <command> --config cfg.json [--out dir] [--seed n]``.

Each command builds a :class:`Report` of tables and checks.  Checks marked
asserted decide the exit code; trend checks are informational.  report.json
is a pure function of the configuration, so reruns are byte-identical;
wall-clock time goes to timing.json.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, config
from . import hnmeasure as hm
from . import projmodel as pm
from . import suites


def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


class Report:
    def __init__(self, command, cfg):
        self.command = command
        self.cfg = cfg
        self.tables = {}
        self.checks = []
        self.curves = {}
        self.notes = []

    def table(self, name, rows):
        self.tables[name] = rows

    def check(self, name, value, bound, ok, asserted=True, tol=0.0, relation="<="):
        self.checks.append({"name": name, "value": value, "bound": bound, "tol": tol,
                            "relation": relation, "verdict": "PASS" if ok else "FAIL",
                            "asserted": bool(asserted)})
        return ok

    def curve(self, name, header, blocks):
        """blocks: list of (label, [(x, y), ...]) written as gnuplot data sets."""
        self.curves[name] = (header, blocks)

    @property
    def ok(self):
        return all(c["verdict"] == "PASS" for c in self.checks if c["asserted"])

    def summary(self):
        a = [c for c in self.checks if c["asserted"]]
        t = [c for c in self.checks if not c["asserted"]]
        return {"asserted": len(a), "asserted_failed": sum(c["verdict"] == "FAIL" for c in a),
                "trend": len(t), "trend_failed": sum(c["verdict"] == "FAIL" for c in t),
                "ok": self.ok}

    def as_dict(self):
        return _clean({"command": self.command, "version": __version__,
                       "config": self.cfg.to_dict(), "tolerances": config.tolerances(),
                       "summary": self.summary(), "checks": self.checks,
                       "tables": self.tables, "notes": self.notes})

    def write(self, out):
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        text = json.dumps(self.as_dict(), sort_keys=True, indent=1, allow_nan=False)
        (out / "report.json").write_text(text + "\n")
        for name, rows in self.tables.items():
            if rows:
                _write_csv(out / f"{name}.csv", rows)
        for name, (header, blocks) in self.curves.items():
            with open(out / f"{name}.dat", "w") as fh:
                fh.write(f"# {header}\n")
                for i, (label, pts) in enumerate(blocks):
                    if i:
                        fh.write("\n\n")
                    fh.write(f"# {label}\n")
                    for x, y in pts:
                        fh.write(f"{x!r} {y!r}\n")


def _write_csv(path, rows):
    keys = list(rows[0])
    for row in rows[1:]:
        keys += [k for k in row if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                        for k, v in row.items()})


# ---------------------------------------------------------------------------
# Commands


def w1_constant(degrees):
    """c with W1(eta_k, eta) <= c / k; the distance scales with the spread of the degrees."""
    return max(1.0, (max(degrees) - min(degrees)) / 2.0)


def cmd_measure(cfg):
    rep = Report("measure", cfg)
    a = tuple(cfg.degrees)
    lim = hm.eta_limit(a)
    c = w1_constant(a)
    atoms, rows = [], []
    for k in cfg.k_ladder:
        try:
            ek = hm.eta_k(hm.split_sym_slopes(a, k), k)
        except ValueError as exc:
            rep.check(f"cap k={k}", str(exc), "", False)
            continue
        loc, wt = np.asarray(ek.locations), np.asarray(ek.weights)
        ux, inv = np.unique(np.round(loc, 12), return_inverse=True)
        for x, w in zip(ux, np.bincount(inv, weights=wt)):
            atoms.append({"k": int(k), "location": float(x), "mass": float(w)})
        w1 = hm.wasserstein1(ek, lim)
        row = {"k": int(k), "N_k": int(loc.size), "wasserstein1": w1, "bound": c / k}
        for p in (1, 2, 3):
            row[f"moment{p}"] = hm.moment(ek, p)
        rows.append(row)
        rep.check(f"W1 k={k}", w1, c / k, w1 <= c / k)
    lim_row = {"k": "limit", "N_k": "", "wasserstein1": 0.0, "bound": 0.0}
    for p in (1, 2, 3):
        lim_row[f"moment{p}"] = hm.moment(lim, p)
    rows.append(lim_row)
    r = len(a)
    rep.check("first moment identity", r * lim_row["moment1"], float(sum(a)),
              abs(r * lim_row["moment1"] - sum(a)) <= 1e-12 * max(1, abs(sum(a))),
              tol=1e-12)
    if not (max(a) == min(a)):
        n = int(min(config.MC_SAMPLES, 200_000))
        mc, se = hm.moment_mc(lim, 1, n=n, seed=cfg.seed)
        rep.check("Monte Carlo first moment within 5 standard errors", mc,
                  lim_row["moment1"], abs(mc - lim_row["moment1"]) <= 5 * se,
                  asserted=False, tol=5 * se)
    rep.table("measure_atoms", atoms)
    rep.table("measure_moments", rows)
    rep.curve("w1_vs_k", "k W1(eta_k, eta_HN) bound",
              [(f"degrees {list(a)}", [(r_["k"], r_["wasserstein1"]) for r_ in rows[:-1]]),
               ("bound c/k", [(r_["k"], r_["bound"]) for r_ in rows[:-1]])])
    return rep


def cmd_cohom(cfg):
    rep = Report("cohom", cfg)
    a = tuple(cfg.degrees)
    K = int(cfg.k_max)
    try:
        h0 = hm.hhat_exact(a, 0, K)
        h1 = hm.hhat_exact(a, 1, K)
    except ValueError as exc:
        rep.check(f"cap k_max={K}", str(exc), "", False)
        return rep
    f0 = hm.hhat0_formula(a)
    f1 = f0 - sum(a)
    rows = []
    for k in range(1, K + 1):
        rows.append({"k": k, "hhat0": h0[k - 1], "hhat1": h1[k - 1], "hhat0_formula": f0,
                     "hhat1_formula": f1, "difference": h0[k - 1] - h1[k - 1],
                     "degree_sum": float(sum(a))})
    rep.table("cohom", rows)
    rep.check("h1 formula non-negative", f1, 0.0, f1 >= -1e-12, relation=">=")
    # the sequences converge without a rate; a k-weighted error that stops
    # growing is reported as a trend
    kk = np.arange(1, K + 1)
    e0 = np.abs(h0 - f0) * kk
    e1 = np.abs(h1 - f1) * kk
    half = K // 2
    rep.check("k |hhat0 - formula| bounded (second half <= first half max)",
              float(e0[half:].max()), float(e0[:max(half, 1)].max()),
              e0[half:].max() <= e0[:max(half, 1)].max() + 1e-9, asserted=False)
    rep.check("k |hhat1 - formula| bounded (second half <= first half max)",
              float(e1[half:].max()), float(e1[:max(half, 1)].max()),
              e1[half:].max() <= e1[:max(half, 1)].max() + 1e-9, asserted=False)
    d = abs(h0[-1] - h1[-1] - sum(a))
    rep.check(f"Riemann-Roch at k={K} within 5/k", d, 5.0 / K, d <= 5.0 / K + 1e-12,
              asserted=(len(a) == 2))
    return rep


def _t_sweep(degrees):
    return tuple(float(t) for t in np.linspace(min(degrees) - 1, max(degrees) + 1, 9))


def cmd_minimize(cfg):
    rep = Report("minimize", cfg)
    a = tuple(cfg.degrees)
    model, grid = pm.model_new(a, cfg.grid_spec)
    ts = tuple(float(t) for t in cfg.t_grid)
    sweep = _t_sweep(a)
    product = max(a) == min(a)
    rhs = {t: hm.rhs_main_theorem(a, t) for t in set(ts) | set(sweep)}
    rows, failures = [], []
    for k in cfg.k_ladder:
        crit = pm.critical_metric(model, int(k), grid)
        for s in cfg.s_ladder:
            try:
                form = pm.dequantize(model, int(k), s, crit)
            except (pm.PositivityError, pm.ConvergenceError) as exc:
                failures.append({"k": int(k), "s": float(s), "error": str(exc)})
                rep.check(f"dequantized form k={k} s={s:g}", str(exc), "", False, asserted=False)
                continue
            first = True
            for t in sorted(set(ts) | set(sweep)):
                w = pm.wzw_functional(form, t)
                cons = abs(w.signed - (sum(a) - t * model.r))
                gap = w.value - rhs[t]
                if t in ts:
                    rows.append({"k": int(k), "s": float(s), "t": t, "wzw": w.value,
                                 "rhs": rhs[t], "gap": gap, "signed": w.signed,
                                 "conservation_error": cons})
                rep.check(f"lower bound k={k} s={s:g} t={t:g}", w.value,
                          rhs[t] - config.WZW_LOWER_SLACK,
                          w.value >= rhs[t] - config.WZW_LOWER_SLACK,
                          tol=config.WZW_LOWER_SLACK, relation=">=")
                if first:
                    rep.check(f"signed integral k={k} s={s:g}", cons, config.CHERN_WEIL_TOL,
                              cons <= config.CHERN_WEIL_TOL, tol=config.CHERN_WEIL_TOL)
                    first = False
                if product and t in ts:
                    rep.check(f"product saturation k={k} s={s:g} t={t:g}", abs(gap),
                              config.SATURATION_TOL, abs(gap) <= config.SATURATION_TOL,
                              tol=config.SATURATION_TOL)
    rep.table("minimize", rows)
    if failures:
        rep.table("minimize_failures", failures)
    # trends along the ray and the smallest gap reached per t
    blocks = []
    attained = []
    for k in cfg.k_ladder:
        for t in ts:
            pts = [(r["s"], r["gap"]) for r in rows if r["k"] == k and r["t"] == t]
            if not pts:
                continue
            blocks.append((f"k={k} t={t:g}", pts))
            gaps = [g for _, g in pts]
            mono = all(g2 <= g1 + config.MONOTONE_SLACK for g1, g2 in zip(gaps, gaps[1:]))
            rep.check(f"gap non-increasing in s k={k} t={t:g}", gaps[-1], gaps[0], mono,
                      asserted=False, tol=config.MONOTONE_SLACK)
    for t in ts:
        cand = [r for r in rows if r["t"] == t]
        if cand:
            best = min(cand, key=lambda r: (r["gap"], r["k"], r["s"]))
            attained.append({"t": t, "k": best["k"], "s": best["s"], "gap": best["gap"]})
    rep.table("minimize_best", attained)
    rep.curve("gap_vs_s", "s gap=wzw-rhs", blocks)
    return rep


def cmd_props(cfg):
    rep = Report("props", cfg)
    rows = []
    for res in suites.run_flag_suite(cfg.seed, cfg.n_instances, cfg.max_dim):
        rows.append({"suite": "flag", "property": res.name, "instances": res.instances,
                     "failures": res.failures, "worst_margin": res.worst_margin})
        rep.check(f"flag {res.name}", res.failures, 0, res.ok)
        for ce in res.counterexamples:
            rep.notes.append({"suite": "flag", "property": res.name, "seed": ce[0],
                              "property_index": ce[1], "instance": ce[2], "margin": ce[3],
                              "info": ce[4]})
    for res in suites.run_measure_suite(cfg.seed):
        rows.append({"suite": "measure", "property": res.name, "instances": res.instances,
                     "failures": res.failures, "worst_margin": res.worst_margin})
        rep.check(f"measure {res.name}", res.failures, 0, res.ok)
    geo = suites.run_geometry_suite(cfg.seed, cfg.grid_spec)
    for g in geo:
        rows.append({"suite": "geometry", "property": g["name"], "instances": 1,
                     "failures": int(not g["ok"]), "worst_margin": g["value"]})
        rep.check(f"geometry {g['name']}", g["value"], g["bound"], g["ok"],
                  asserted=g.get("asserted", True))
    rep.table("props", rows)
    return rep


def cmd_ratio(cfg):
    rep = Report("ratio", cfg)
    a = tuple(cfg.degrees)
    model, grid = pm.model_new(a, cfg.grid_spec)
    k = int(cfg.k_ladder[0])
    H = pm.critical_metric(model, k, grid)
    rows = []
    for l in cfg.l_ladder:
        try:
            R = pm.quotient_vs_hilb_ratio(model, H, k, int(l))
        except ValueError as exc:
            rep.check(f"cap l={l}", str(exc), "", False)
            continue
        rows.append({"k": k, "l": int(l), "lo": R.lo, "hi": R.hi, "width": R.width,
                     "width_times_l": R.width * int(l), "contains_one": R.contains_one(),
                     "within_width_of_one": R.near_one()})
    rep.table("ratio", rows)
    widths = [r["width"] for r in rows]
    if len(widths) > 1:
        dec = all(w2 < w1 for w1, w2 in zip(widths, widths[1:]))
        rep.check("widths strictly decreasing in l", widths[-1], widths[0], dec, asserted=False)
    if rows:
        last = rows[-1]
        rep.check(f"interval at l={last['l']} within width of 1", 1.0, [last["lo"], last["hi"]],
                  last["within_width_of_one"], tol=config.RATIO_SLACK, relation="in")
        rep.check(f"interval at l={last['l']} contains 1", 1.0, [last["lo"], last["hi"]],
                  last["contains_one"], asserted=False, tol=config.RATIO_SLACK, relation="in")
    return rep


COMMANDS = {"measure": cmd_measure, "cohom": cmd_cohom, "minimize": cmd_minimize,
            "props": cmd_props, "ratio": cmd_ratio}


def build_parser():
    p = argparse.ArgumentParser(prog="wzwlab", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON experiment configuration")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--seed", type=int, help="unsigned 64-bit seed (overrides the config)")
    return p


def run(command, cfg, out=None):
    t0 = time.perf_counter()
    rep = COMMANDS[command](cfg)
    out = Path(out or cfg.output_dir)
    rep.write(out)
    (out / "timing.json").write_text(json.dumps({"command": command,
                                                  "wall_seconds": time.perf_counter() - t0}) + "\n")
    return rep


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = config.ExperimentConfig.from_json(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
    except (ValueError, TypeError, OSError, json.JSONDecodeError) as exc:
        print(f"wzwlab: invalid configuration: {exc}", file=sys.stderr)
        return 2
    try:
        rep = run(args.command, cfg, args.out)
    except ValueError as exc:
        print(f"wzwlab: {args.command} rejected the configuration: {exc}", file=sys.stderr)
        return 2
    s = rep.summary()
    print(f"{args.command}: {s['asserted'] - s['asserted_failed']}/{s['asserted']} asserted checks "
          f"passed, {s['trend'] - s['trend_failed']}/{s['trend']} trends held")
    return 0 if rep.ok else 1


if __name__ == "__main__":
    sys.exit(main())
