"""Harder-Narasimhan slope measures of split bundles over P^1.

With the base form normalized to total mass one, the slope of O(a) is a, and
Sym^k(O(a_1) + ... + O(a_r)) splits as the sum of O(alpha . a) over
exponents |alpha| = k.  The rescaled slope measures eta_k converge to the
push-forward of the uniform probability measure on the (r-1)-simplex under
x -> sum_i x_i a_i.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from math import comb, factorial

import numpy as np
from scipy import optimize
from scipy.interpolate import BSpline

from . import config
from .flagcore import multi_indices


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class SlopeVector:
    slopes: tuple

    def __post_init__(self):
        s = tuple(float(x) for x in self.slopes)
        if not all(np.isfinite(s)):
            raise ValueError("slopes must be finite")
        if list(s) != sorted(s):
            raise ValueError("slopes must be sorted non-decreasing")
        object.__setattr__(self, "slopes", s)

    def __len__(self):
        return len(self.slopes)

    def __iter__(self):
        return iter(self.slopes)

    def as_array(self):
        return np.array(self.slopes)


@dataclass(frozen=True)
class DiscreteMeasure:
    locations: tuple
    weights: tuple

    def __post_init__(self):
        x = np.asarray(self.locations, dtype=float).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if x.size != w.size or x.size == 0:
            raise ValueError("need one weight per atom")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")
        order = np.argsort(x, kind="stable")
        object.__setattr__(self, "locations", tuple(x[order]))
        object.__setattr__(self, "weights", tuple(w[order]))

    @property
    def atoms(self):
        return list(zip(self.locations, self.weights))

    @property
    def support(self):
        return self.locations[0], self.locations[-1]


@dataclass(frozen=True)
class SimplexPushforwardMeasure:
    """Law of sum_i mu_i X_i for X uniform on the standard simplex."""

    mu: SlopeVector

    def __post_init__(self):
        mu = self.mu if isinstance(self.mu, SlopeVector) else SlopeVector(sorted(self.mu))
        if len(mu) < 1:
            raise ValueError("need at least one coefficient")
        object.__setattr__(self, "mu", mu)

    @property
    def r(self):
        return len(self.mu)

    @property
    def support(self):
        return self.mu.slopes[0], self.mu.slopes[-1]

    @property
    def is_point_mass(self):
        lo, hi = self.support
        return hi - lo <= 1e-14 * max(1.0, abs(lo), abs(hi))

    def _spline(self):
        knots = np.array(self.mu.slopes)
        return BSpline.basis_element(knots, extrapolate=False)

    def density(self, x):
        """Density (r >= 2, non-degenerate): (r-1)/(max-min) times the B-spline."""
        if self.is_point_mass:
            raise ValueError("point mass has no density")
        lo, hi = self.support
        x = np.asarray(x, dtype=float)
        inside = (x >= lo) & (x <= hi)
        out = np.zeros_like(x)
        out[inside] = np.nan_to_num(self._spline()(x[inside])) * (self.r - 1) / (hi - lo)
        return out

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.support
        if self.is_point_mass:
            return (x >= lo).astype(float)
        anti = self._spline().antiderivative()
        xc = np.clip(x, lo, hi)
        val = np.nan_to_num(anti(xc)) * (self.r - 1) / (hi - lo)
        return np.where(x >= hi, 1.0, np.where(x < lo, 0.0, np.clip(val, 0.0, 1.0)))

    def sample(self, n, rng):
        X = rng.dirichlet(np.ones(self.r), size=n)
        return X @ self.mu.as_array()


def _point(m):
    """Degenerate simplex measures become explicit point masses."""
    if isinstance(m, SimplexPushforwardMeasure) and m.is_point_mass:
        return DiscreteMeasure((m.support[0],), (1.0,))
    return m


# ---------------------------------------------------------------------------
# Slopes and measures


def split_sym_slopes(degrees, k):
    """Slopes alpha . a over |alpha| = k, sorted."""
    a = np.asarray(degrees, dtype=float)
    if a.size < 1 or k < 1:
        raise ValueError("need r >= 1 and k >= 1")
    N = comb(k + a.size - 1, a.size - 1)
    if N > config.SYM_DIM_CAP:
        raise ValueError(f"dim Sym^{k} = {N} exceeds cap {config.SYM_DIM_CAP}")
    return SlopeVector(tuple(np.sort(multi_indices(a.size, k) @ a)))


def eta_k(slopes, k):
    s = np.asarray(slopes.slopes if isinstance(slopes, SlopeVector) else slopes, dtype=float)
    if s.size == 0:
        raise ValueError("empty slope vector")
    return DiscreteMeasure(tuple(s / k), tuple(np.full(s.size, 1.0 / s.size)))


def eta_limit(degrees):
    return SimplexPushforwardMeasure(SlopeVector(tuple(sorted(float(a) for a in degrees))))


def complete_homogeneous(mu, p):
    """h_0..h_p of the variables mu via the generating function prod 1/(1 - mu_i z)."""
    h = np.zeros(p + 1)
    h[0] = 1.0
    for m in mu:
        for j in range(1, p + 1):
            h[j] += m * h[j - 1]
    return h


def moment(m, p):
    p = int(p)
    if p < 0 or p > config.MOMENT_DEGREE_CAP:
        raise ValueError(f"moment degree must lie in [0, {config.MOMENT_DEGREE_CAP}]")
    m = _point(m)
    if isinstance(m, DiscreteMeasure):
        return float(np.dot(m.weights, np.asarray(m.locations) ** p))
    r = m.r
    h = complete_homogeneous(m.mu.slopes, p)[p]
    return float(factorial(p) * factorial(r - 1) / factorial(p + r - 1) * h)


def _gauss_pieces(breaks, f, order):
    x, w = np.polynomial.legendre.leggauss(order)
    a, b = breaks[:-1], breaks[1:]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    pts = mid[:, None] + half[:, None] * x[None, :]
    return float(np.sum(half[:, None] * w[None, :] * f(pts)))


def _adaptive_pieces(breaks, f, start_order, rtol=config.QUAD_REL_TOL, max_order=256):
    """Gauss-Legendre on fixed pieces with order doubling until two rules agree."""
    order = start_order
    prev = _gauss_pieces(breaks, f, order)
    while order < max_order:
        order *= 2
        cur = _gauss_pieces(breaks, f, order)
        if abs(cur - prev) <= rtol * max(abs(cur), 1e-300) or abs(cur - prev) < 1e-15:
            return cur
        prev = cur
    raise QuadratureError(f"Gauss-Legendre did not converge to rtol {rtol}")


def abs_moment(m, t):
    """Integral of |x - t| against the measure."""
    t = float(t)
    m = _point(m)
    if isinstance(m, DiscreteMeasure):
        return float(np.dot(m.weights, np.abs(np.asarray(m.locations) - t)))
    lo, hi = m.support
    if m.r == 2:
        mean = 0.5 * (lo + hi)
        if t <= lo:
            return mean - t
        if t >= hi:
            return t - mean
        return ((t - lo) ** 2 + (hi - t) ** 2) / (2 * (hi - lo))
    knots = np.unique(np.array(m.mu.slopes))
    breaks = np.unique(np.concatenate([knots, [min(max(t, lo), hi)]]))
    return _adaptive_pieces(breaks, lambda x: np.abs(x - t) * m.density(x), m.r + 1)


def abs_moment_mc(m, t, n=config.MC_SAMPLES, seed=config.MC_SEED):
    """Monte Carlo estimate and its standard error."""
    rng = np.random.default_rng(seed)
    y = np.abs(m.sample(n, rng) - t)
    return float(y.mean()), float(y.std(ddof=1) / np.sqrt(n))


def moment_mc(m, p, n=config.MC_SAMPLES, seed=config.MC_SEED):
    rng = np.random.default_rng(seed)
    y = m.sample(n, rng) ** p
    return float(y.mean()), float(y.std(ddof=1) / np.sqrt(n))


def _cdf_fn(m):
    if isinstance(m, DiscreteMeasure):
        x = np.asarray(m.locations)
        c = np.cumsum(m.weights)

        def F(y):
            idx = np.searchsorted(x, y, side="right")
            return np.where(idx > 0, c[np.maximum(idx - 1, 0)], 0.0)
        return F, list(x), 0
    return m.cdf, list(m.mu.slopes), m.r - 1


def wasserstein1(m1, m2):
    """Integral of |F1 - F2| (CDF distance).

    On each interval between breakpoints both CDFs are polynomials, so the
    integrand is split at sign changes of F1 - F2 and integrated by a
    Gauss rule that is exact for the polynomial degree at hand.
    """
    m1, m2 = _point(m1), _point(m2)
    F1, b1, d1 = _cdf_fn(m1)
    F2, b2, d2 = _cdf_fn(m2)
    breaks = np.unique(np.array(b1 + b2, dtype=float))
    if breaks.size < 2:
        return 0.0
    deg = max(d1, d2)
    order = max(2, deg // 2 + 2)
    gx, gw = np.polynomial.legendre.leggauss(order)
    total = 0.0
    for a, b in zip(breaks[:-1], breaks[1:]):
        eps = 1e-13 * max(1.0, abs(a), abs(b))
        def diff(y):
            return F1(np.atleast_1d(y)) - F2(np.atleast_1d(y))
        pts = [a]
        if deg >= 1:
            probe = np.linspace(a + eps, b - eps, 4 * deg + 3)
            vals = diff(probe)
            for i in range(probe.size - 1):
                if vals[i] == 0.0:
                    pts.append(probe[i])
                elif vals[i] * vals[i + 1] < 0:
                    pts.append(optimize.brentq(lambda y: diff(y)[0], probe[i], probe[i + 1],
                                               xtol=1e-15))
        pts.append(b)
        pts = np.unique(pts)
        for c, e in zip(pts[:-1], pts[1:]):
            mid, half = 0.5 * (c + e), 0.5 * (e - c)
            y = mid + half * gx
            # keep the nodes strictly inside so step CDFs take their interior value
            total += half * float(np.dot(gw, np.abs(diff(y))))
    return float(total)


# ---------------------------------------------------------------------------
# Functional-level quantities


def rhs_main_theorem(degrees, t):
    """(n + 1) * integral |x - t| d eta^HN, n = r - 1 the fiber dimension."""
    return len(degrees) * abs_moment(eta_limit(degrees), t)


def hhat0_formula(degrees):
    """(n + 1) * integral over x >= 0 of x d eta^HN."""
    m = eta_limit(degrees)
    return len(degrees) * 0.5 * (moment(m, 1) + abs_moment(m, 0.0))


def _degree_counts(degrees, k):
    """Multiplicities of each summand degree of Sym^k E, by dynamic programming."""
    a = [int(x) for x in degrees]
    r = len(a)
    N = comb(k + r - 1, r - 1)
    if N > config.SYM_DIM_CAP:
        raise ValueError(f"dim Sym^{k} = {N} exceeds cap {config.SYM_DIM_CAP}")
    # shift every degree by -min(a) so that indices stay non-negative;
    # poly[j, e] counts exponents of total degree j with shifted alpha . a = e
    base = min(a)
    shifted = [ai - base for ai in a]
    width = k * max(shifted) + 1
    poly = np.zeros((k + 1, width), dtype=np.int64)
    poly[0, 0] = 1
    for s in shifted:
        for j in range(1, k + 1):
            if s:
                poly[j, s:] += poly[j - 1, :-s]
            else:
                poly[j] += poly[j - 1]
    return np.arange(width) + k * base, poly[k]


def hhat_exact(degrees, q, k_max):
    """(dim Y)!/k^dim Y * h^q(Y, L^k) for k = 1..k_max, with dim Y = r."""
    if q not in (0, 1):
        raise ValueError("q must be 0 or 1")
    r = len(degrees)
    out = []
    for k in range(1, int(k_max) + 1):
        d, mult = _degree_counts(degrees, k)
        if q == 0:
            h = np.maximum(d + 1, 0)
        else:
            h = np.maximum(-d - 1, 0)
        out.append(factorial(r) / k**r * float(np.dot(mult, h)))
    return np.array(out)


def convergence_table(degrees, ks):
    """Rows (k, moment1, wasserstein1, hhat0_partial, hhat1_partial)."""
    lim = eta_limit(degrees)
    kmax = max(ks)
    h0 = hhat_exact(degrees, 0, kmax)
    h1 = hhat_exact(degrees, 1, kmax)
    rows = []
    for k in ks:
        ek = eta_k(split_sym_slopes(degrees, k), k)
        rows.append({"k": int(k), "moment1": moment(ek, 1),
                     "wasserstein1": wasserstein1(ek, lim),
                     "hhat0_partial": float(h0[k - 1]), "hhat1_partial": float(h1[k - 1])})
    return rows


def write_csv(path, rows):
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
