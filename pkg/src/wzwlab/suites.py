"""Randomized property suites for the linear algebra and the bundle geometry.

Every instance draws from its own generator seeded by (seed, property, index),
so a failing instance is replayed by :func:`replay` from the recorded triple.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import config
from . import flagcore as fc
from . import projmodel as pm
from .hnmeasure import eta_k, split_sym_slopes, wasserstein1, eta_limit


@dataclass(frozen=True)
class Outcome:
    ok: bool
    margin: float          # >= 0 means the property holds with that much room
    info: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SuiteResult:
    name: str
    instances: int
    failures: int
    worst_margin: float
    counterexamples: tuple  # ((seed, property index, instance index, margin, info), ...)

    @property
    def ok(self):
        return self.failures == 0


# ---------------------------------------------------------------------------
# Random objects


def rand_matrix(rng, m, n):
    return rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))


def rand_product(rng, d):
    A = rand_matrix(rng, d, d)
    G = A @ A.conj().T / d + rng.uniform(0.05, 1.0) * np.eye(d)
    return fc.HermitianProduct(0.5 * (G + G.conj().T))


def rand_weights(rng, d):
    # integers with repeats give non-complete flags, a real shift breaks symmetry
    return rng.integers(-3, 4, size=d).astype(float) / 2 + rng.uniform(-0.1, 0.1)


def rand_filtration(rng, d):
    return fc.Filtration.from_weighted_basis(rand_matrix(rng, d, d), rand_weights(rng, d))


def rand_surjection(rng, q, d):
    return rand_matrix(rng, q, d)


def smaller_product(rng, H, floor=0.1):
    """H^{1/2} (I - M) H^{1/2} with 0 <= M <= 1 - floor."""
    d = H.dim
    U, _ = np.linalg.qr(rand_matrix(rng, d, d))
    m = rng.uniform(0.0, 1.0 - floor, size=d)
    L = H.chol
    G = L @ ((U * (1.0 - m)) @ U.conj().T) @ L.conj().T
    return fc.HermitianProduct(0.5 * (G + G.conj().T))


def _tol(*mats):
    return config.LOEWNER_TOL * max([1.0] + [float(np.max(np.abs(getattr(M, "gram", M)))) for M in mats])


# ---------------------------------------------------------------------------
# Linear algebra properties


def prop_spectrum(rng, max_dim):
    d = int(rng.integers(1, max_dim + 1))
    H, F = rand_product(rng, d), rand_filtration(rng, d)
    ev = fc.spectrum(fc.weight_operator(H, F), H)
    err = float(np.max(np.abs(ev - np.array(F.weight_spectrum().weights))))
    tol = 1e-9 * max(1.0, float(np.max(np.abs(ev))))
    return Outcome(err <= tol, tol - err, {"dim": d})


def prop_weight_monotone(rng, max_dim):
    d = int(rng.integers(1, max_dim + 1))
    B = rand_matrix(rng, d, d)
    mu = rand_weights(rng, d)
    nu = mu - rng.uniform(0, 1, size=d) * (rng.random(d) < 0.7)
    # tilt each vector inside the F2 level of its new weight
    B1 = B.copy()
    for i in range(d):
        others = [j for j in range(d) if j != i and mu[j] >= nu[i]]
        if others:
            B1[:, i] = B[:, i] + B[:, others] @ rand_matrix(rng, len(others), 1)[:, 0]
    F2 = fc.Filtration.from_weighted_basis(B, mu)
    F1 = fc.Filtration.from_weighted_basis(B1, nu)
    if not fc.dominates(F1, F2):
        return Outcome(False, -np.inf, {"dim": d, "reason": "generated pair not dominating"})
    H = rand_product(rng, d)
    gap = fc.loewner_gap(fc.weight_operator(H, F1), fc.weight_operator(H, F2), H)
    tol = 1e-10 * max(1.0, float(np.max(np.abs(mu))))
    return Outcome(gap >= -tol, gap + tol, {"dim": d})


def _quotient_setup(rng, max_dim):
    d = int(rng.integers(2, max_dim + 1))
    q = int(rng.integers(1, d))
    return d, q, rand_surjection(rng, q, d)


def prop_interpolation(rng, max_dim):
    d, q, p = _quotient_setup(rng, max_dim)
    H0, F = rand_product(rng, d), rand_filtration(rng, d)
    H1 = smaller_product(rng, fc.quotient_metric(H0, p))
    Fq = fc.quotient_filtration(F, p)
    bumps = np.cumsum(rng.uniform(0, 0.5, size=len(Fq.jumps)) * (rng.random(len(Fq.jumps)) < 0.6))
    G = fc.Filtration(tuple(np.array(Fq.jumps) + bumps), Fq.subspaces)
    if not fc.dominates(Fq, G):
        return Outcome(False, -np.inf, {"reason": "generated pair not dominating"})
    worst = np.inf
    for s in (0.1, 1.0, 5.0):
        A = fc.quotient_metric(fc.geodesic_ray(H0, F, s), p)
        B = fc.geodesic_ray(H1, G, s)
        worst = min(worst, fc.gram_gap(A, B) / max(1.0, float(np.max(np.abs(B.gram)))))
    return Outcome(worst >= -config.LOEWNER_TOL, worst + config.LOEWNER_TOL, {"dim": d, "qdim": q})


def prop_monotone_ray(rng, max_dim):
    d = int(rng.integers(1, max_dim + 1))
    H, F = rand_product(rng, d), rand_filtration(rng, d)
    Hs = smaller_product(rng, H)
    worst = np.inf
    for s in (0.1, 1.0, 5.0):
        A, B = fc.geodesic_ray(H, F, s), fc.geodesic_ray(Hs, F, s)
        worst = min(worst, fc.gram_gap(A, B) / max(1.0, float(np.max(np.abs(A.gram)))))
    return Outcome(worst >= -config.LOEWNER_TOL, worst + config.LOEWNER_TOL, {"dim": d})


def prop_segment(rng, max_dim):
    d, q, p = _quotient_setup(rng, max_dim)
    H0, H1 = rand_product(rng, d), rand_product(rng, d)
    Q0, Q1 = fc.quotient_metric(H0, p), fc.quotient_metric(H1, p)
    worst = np.inf
    for s in rng.uniform(0, 1, size=3):
        A = fc.quotient_metric(fc.geodesic_segment(H0, H1, s), p)
        B = fc.geodesic_segment(Q0, Q1, s)
        worst = min(worst, fc.gram_gap(A, B) / max(1.0, float(np.max(np.abs(A.gram)))))
    return Outcome(worst >= -config.LOEWNER_TOL, worst + config.LOEWNER_TOL, {"dim": d, "qdim": q})


def prop_quotient_derivative(rng, max_dim, step=1e-4, tol=1e-6):
    d, q, p = _quotient_setup(rng, max_dim)
    H, F = rand_product(rng, d), rand_filtration(rng, d)
    Gp = fc.quotient_metric(fc.geodesic_ray(H, F, step), p).gram
    Gm = fc.quotient_metric(fc.geodesic_ray(H, F, -step), p).gram
    GQ = fc.quotient_metric(H, p).gram
    fd = np.linalg.solve(GQ, (Gp - Gm) / (2 * step))
    A = fc.restrict_operator(fc.weight_operator(H, F), p, H)
    scale = max(1.0, float(np.max(np.abs(A))))
    err = float(np.max(np.abs(fd + A))) / scale
    # the log-velocity of the ray itself is the same at every s
    A0 = fc.ray_log_velocity(H, F)
    s = float(rng.uniform(0.5, 3.0))
    As = fc.ray_log_velocity(fc.geodesic_ray(H, F, s), F)
    drift = float(np.max(np.abs(As - A0))) / max(1.0, float(np.max(np.abs(A0))))
    margin = min(tol - err, 1e-10 - drift)
    return Outcome(margin >= 0, margin, {"dim": d, "qdim": q, "fd_err": err, "drift": drift})


def prop_restriction_vs_quotient_weight(rng, max_dim):
    # Sym^l V of dimension <= max_dim: (d, l) in {(2, 2..5), (3, 2)}
    choices = [(d, l) for d in (2, 3) for l in range(2, 6) if fc.sym_dim(d, l) <= max_dim]
    if not choices:
        choices = [(2, 2)]
    d, l = choices[int(rng.integers(len(choices)))]
    D = fc.sym_dim(d, l)
    qd = int(rng.integers(1, D))
    H, F = rand_product(rng, d), rand_filtration(rng, d)
    s = float(rng.uniform(0, 2))
    Hs = fc.geodesic_ray(H, F, s)
    SH = fc.sym_metric(Hs, l)
    q = rand_surjection(rng, qd, D)
    lhs = fc.restrict_operator(fc.sym_operator(fc.weight_operator(Hs, F), l, Hs), q, SH)
    QH = fc.quotient_metric(SH, q)
    rhs = fc.weight_operator(QH, fc.quotient_filtration(fc.sym_filtration(F, l), q))
    gap = fc.loewner_gap(lhs, rhs, QH)
    # Sym^l of a ray point is badly conditioned; roundoff grows like eps * cond
    cond = float(np.linalg.cond(SH.gram))
    tol = max(1.0, float(np.max(np.abs(rhs)))) * (1e-9 + 1e-15 * cond)
    return Outcome(gap >= -tol, gap + tol, {"dim": d, "l": l, "qdim": qd, "cond": cond})


def prop_ky_fan(rng, max_dim):
    d = int(rng.integers(1, max_dim + 1))
    H = rand_product(rng, d)
    A, B = rand_matrix(rng, d, d), rand_matrix(rng, d, d)
    c = complex(rng.standard_normal(), rng.standard_normal())
    nA, nB = fc.trace_abs_norm(A, H), fc.trace_abs_norm(B, H)
    tri = nA + nB - fc.trace_abs_norm(A + B, H)
    hom = abs(fc.trace_abs_norm(c * A, H) - abs(c) * nA)
    tol = 1e-10 * (nA + nB)
    margin = min(tri + tol, tol - hom)
    return Outcome(margin >= 0, margin, {"dim": d})


def prop_interlacing(rng, max_dim):
    d, q, p = _quotient_setup(rng, max_dim)
    H, F = rand_product(rng, d), rand_filtration(rng, d)
    A = fc.weight_operator(H, F)
    ev = fc.spectrum(fc.restrict_operator(A, p, H), fc.quotient_metric(H, p))
    lam = np.array(F.weight_spectrum().weights)
    tol = 1e-9 * max(1.0, float(np.max(np.abs(lam))))
    margin = min(float(ev.min() - lam.min()), float(lam.max() - ev.max())) + tol
    return Outcome(margin >= 0, margin, {"dim": d, "qdim": q})


FLAG_PROPERTIES = {
    "weight_spectrum_identity": prop_spectrum,
    "weight_operator_monotone": prop_weight_monotone,
    "quotient_ray_interpolation": prop_interpolation,
    "monotone_rays": prop_monotone_ray,
    "segment_interpolation": prop_segment,
    "quotient_ray_derivative": prop_quotient_derivative,
    "sym_restriction_vs_quotient_weight": prop_restriction_vs_quotient_weight,
    "trace_norm_ky_fan": prop_ky_fan,
    "restriction_interlacing": prop_interlacing,
}


def _instance_rng(seed, prop_index, index):
    return np.random.default_rng([int(seed), int(prop_index), int(index)])


def replay(name, seed, index, max_dim=6):
    """Re-run a single recorded instance of a linear algebra property."""
    names = list(FLAG_PROPERTIES)
    return FLAG_PROPERTIES[name](_instance_rng(seed, names.index(name), index), max_dim)


def run_flag_suite(seed=config.MC_SEED, n_instances=1000, max_dim=6, max_dumps=5):
    results = []
    for pi, (name, fn) in enumerate(FLAG_PROPERTIES.items()):
        fails, worst, dumps = 0, np.inf, []
        for i in range(n_instances):
            out = fn(_instance_rng(seed, pi, i), max_dim)
            worst = min(worst, out.margin)
            if not out.ok:
                fails += 1
                if len(dumps) < max_dumps:
                    dumps.append((int(seed), pi, i, float(out.margin), out.info))
        results.append(SuiteResult(name, n_instances, fails, float(worst), tuple(dumps)))
    return results


# ---------------------------------------------------------------------------
# Measure properties


def run_measure_suite(seed=config.MC_SEED, n_instances=50, max_rank=4, k_values=(1, 2, 4, 8)):
    """Weak convergence, first moment, convexity and Lipschitz bounds of abs_moment."""
    from .hnmeasure import abs_moment, moment
    rng = np.random.default_rng([int(seed), 100])
    stats = {"w1_bound": [0, np.inf], "first_moment": [0, np.inf], "abs_moment_shape": [0, np.inf]}
    for _ in range(n_instances):
        r = int(rng.integers(2, max_rank + 1))
        a = tuple(int(x) for x in rng.integers(-2, 3, size=r))
        lim = eta_limit(a)
        m1 = moment(lim, 1)
        err = abs(r * m1 - sum(a))
        stats["first_moment"][1] = min(stats["first_moment"][1], 1e-9 - err)
        stats["first_moment"][0] += err > 1e-9
        for k in k_values:
            w = wasserstein1(eta_k(split_sym_slopes(a, k), k), lim)
            stats["w1_bound"][1] = min(stats["w1_bound"][1], 2.0 / k - w)
            stats["w1_bound"][0] += w > 2.0 / k
        ts = np.linspace(min(a) - 1, max(a) + 1, 9)
        vals = np.array([abs_moment(lim, t) for t in ts])
        dt = ts[1] - ts[0]
        lip = np.max(np.abs(np.diff(vals))) / dt - 1.0
        conv = -np.min(vals[:-2] - 2 * vals[1:-1] + vals[2:])
        jensen = -np.min(vals - np.abs(m1 - ts))
        bad = max(lip, conv, jensen)
        stats["abs_moment_shape"][1] = min(stats["abs_moment_shape"][1], 1e-8 - bad)
        stats["abs_moment_shape"][0] += bad > 1e-8
    return [SuiteResult(name, n_instances, int(f), float(w), ()) for name, (f, w) in stats.items()]


# ---------------------------------------------------------------------------
# Geometry properties


def extremal_gaps(seed=config.MC_SEED, k_values=(1, 2, 3), ranks=(2, 3), nodes=16):
    """min eig of H - Hilb(FS(H)) for random diagonal and dense products, per (r, k, kind)."""
    out = []
    for r in ranks:
        for k in k_values:
            N = fc.sym_dim(r, k)
            if r == 3 and k > 2:
                continue
            for kind in ("diagonal", "dense"):
                rng = np.random.default_rng([int(seed), 200, r, k, kind == "dense"])
                worst = np.inf
                for _ in range(nodes):
                    if kind == "diagonal":
                        G = np.diag(np.exp(rng.uniform(-2, 2, size=N))).astype(complex)
                    else:
                        G = rand_product(rng, N).gram
                    n_angle = 32 if r == 2 else 12
                    fib = 32 if r == 2 else 16
                    Hl = pm.fiber_fs_hilb(fc.HermitianProduct(G), k, r, n_angle=n_angle, fiber_nodes=fib)
                    worst = min(worst, fc.gram_gap(G, Hl) / max(1.0, float(np.max(np.abs(G)))))
                out.append({"r": r, "k": k, "kind": kind, "nodes": nodes, "min_eig": float(worst)})
    return out


def submultiplicative_domination(degrees, k, l, fields=None):
    """Filtration domination and the node-wise weight-operator inequality.

    Returns (dominates, worst Loewner gap over base nodes and fields).
    """
    model = pm.SplitModel(tuple(degrees))
    P, _ = pm._mult_map(model.r, k, l)
    Fk = model.hn_filtration(k)
    Fq = fc.quotient_filtration(fc.sym_filtration(Fk, l), P)
    Fkl = model.hn_filtration(k * l)
    dom = fc.dominates(Fq, Fkl)
    if fields is None:
        fields = [pm.critical_metric(model, k)]
    worst = np.inf
    for H in fields:
        Q = pm.mult_quotient_metric(H, l)
        for G in Q.values:
            # coordinate filtrations are unchanged by diagonal rescaling, so
            # normalizing the diagonal only improves conditioning
            D = 1.0 / np.sqrt(np.real(np.diag(G)))
            QH = fc.HermitianProduct(G * D[:, None] * D[None, :])
            gap = fc.loewner_gap(fc.weight_operator(QH, Fq), fc.weight_operator(QH, Fkl), QH)
            worst = min(worst, gap)
    return bool(dom), float(worst)


def random_dense_field(model, k, rng, eps=0.5):
    """D (I + R) D with D^2 the critical metric and R Hermitian, |R| <= eps."""
    H = pm.critical_metric(model, k)
    N = model.n_k(k)
    R = rand_matrix(rng, N, N)
    R = R + R.conj().T
    R *= eps / np.linalg.norm(R, 2)
    M = np.eye(N) + R

    def gram_fn(y0):
        d = np.exp(0.5 * H.log_diag(y0))
        return d[:, :, None] * M[None] * d[:, None, :]
    return pm.BundleMetricField(model, H.grid, k, gram_fn=gram_fn, label="random dense")


def run_geometry_suite(seed=config.MC_SEED, grid_spec=None):
    """Rows of (name, value, bound, ok) covering the bundle-level properties."""
    rows = []
    for g in extremal_gaps(seed):
        rows.append({"name": f"H - hilb(fs(H)) psd r={g['r']} k={g['k']} {g['kind']}",
                     "value": g["min_eig"], "bound": -1e-9, "ok": g["min_eig"] >= -1e-9})

    m10 = pm.SplitModel((1, 0))
    crit = pm.critical_metric(m10, 2)
    target = 1e-2
    pert = pm.conformal_perturbation(crit, 0, target / pm.delta_residual(
        pm.conformal_perturbation(crit, 0, 1.0)))
    for label, H in (("critical", crit), ("perturbed", pert)):
        for rb in pm.ray_residual_bound(H, (0.0, 1.0, 4.0, 16.0)):
            rows.append({"name": f"ray residual {label} s={rb.s:g}", "value": rb.residual,
                         "bound": rb.bound, "ok": rb.ok})

    m01 = pm.SplitModel((0, 1))
    for c in pm.offdiagonal_scaling(pm.offdiagonal_test_metric(m01), (0.0, 1.0, 2.0, 4.0)):
        v = max(c.upper, c.lower)
        rows.append({"name": f"offdiagonal scaling s={c.s:g}", "value": v, "bound": 1e-4,
                     "ok": v <= 1e-4})

    rng = np.random.default_rng([int(seed), 300])
    for degrees in ((1, 0), (0, 1, 2)):
        model = pm.SplitModel(degrees)
        for k, l in ((1, 2), (1, 3), (2, 2)):
            fields = [pm.critical_metric(model, k), random_dense_field(model, k, rng)]
            dom, gap = submultiplicative_domination(degrees, k, l, fields)
            rows.append({"name": f"filtration domination {degrees} k={k} l={l}",
                         "value": float(dom), "bound": 1.0, "ok": dom})
            rows.append({"name": f"weight operator domination {degrees} k={k} l={l}",
                         "value": gap, "bound": -config.LOEWNER_TOL, "ok": gap >= -config.LOEWNER_TOL})

    # FS/Hilb round trip: a diagnostic trend, not a rate
    dists = [pm.fs_round_trip_distance(m10, k) for k in (1, 2, 4, 8)]
    mono = all(b < a for a, b in zip(dists, dists[1:]))
    rows.append({"name": "fs/hilb round trip decreasing k=1,2,4,8", "value": dists[-1],
                 "bound": dists[0], "ok": mono, "asserted": False})

    for form in generated_forms(grid_spec):
        w = pm.wzw_functional(form, 0.5)
        err = abs(w.signed - (sum(form.model.degrees) - 0.5 * form.model.r))
        rows.append({"name": f"signed integral {form.model.degrees} {form.label}", "value": err,
                     "bound": config.CHERN_WEIL_TOL, "ok": err <= config.CHERN_WEIL_TOL})
    return rows


def generated_forms(grid_spec=None):
    """A representative set of forms produced by the pipeline."""
    out = []
    for degrees in ((0, 0), (1, 0), (-1, 1), (0, 1, 2)):
        model, grid = pm.model_new(degrees, grid_spec)
        out.append(pm.reference_potential(model, 1, grid))
        for k in (1, 2):
            crit = pm.critical_metric(model, k, grid)
            for s in (0.0, 4.0):
                out.append(pm.dequantize(model, k, s, crit))
        pert = pm.conformal_perturbation(pm.critical_metric(model, 2, grid), 0, 0.3)
        out.append(pm.dequantize(model, 2, 1.0, pert))
    return out
