"""Torus-reduced geometry of X = P(E*) -> P^1 for split E = O(a_1) + ... + O(a_r).

Coordinates
-----------
Base: y0 = log|z|^2 and u = |z|^2 / (1 + |z|^2), the moment coordinate of the
Fubini-Study form of mass one, so du = u(1 - u) dy0 is that form.

Fiber: Y_j = log|w_j|^2 in the chart w_0 = 1.  Torus-invariant metrics on
L^k are ``exp(-k f)`` with a unit potential

    f(y0, Y) = (1/d) log sum_alpha exp(alpha . Y + b_alpha(y0)),   |alpha| = d,

which is the shape of every Fubini-Study potential of a diagonal metric on
the direct image.  Quadrature runs in (u, x) with x the fiber moment
coordinate of f (x = grad_Y f), where the fiber volume of f becomes the
uniform probability measure on the simplex.  For the standard Fubini-Study
metric x_j = |w_j|^2 / sum |w_i|^2.

In these coordinates the base-contraction of the horizontal part of
omega = dd^c f is the Schur complement of the fiber block of Hess f divided
by u(1 - u), and

    WZW = (n + 1) * int_0^1 du int_simplex |horizontal trace - t| dx.

Derivatives in y0 are central differences with Richardson extrapolation.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import comb, factorial
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp, roots_jacobi, roots_legendre

from . import config
from . import flagcore as fc
from .hnmeasure import abs_moment, eta_k, split_sym_slopes


class PositivityError(RuntimeError):
    pass


class ConvergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Model and grid


@dataclass(frozen=True)
class SplitModel:
    degrees: tuple

    def __post_init__(self):
        d = tuple(int(a) for a in self.degrees)
        if len(d) < 2:
            raise ValueError("the model needs rank r >= 2")
        object.__setattr__(self, "degrees", d)

    @property
    def r(self):
        return len(self.degrees)

    @property
    def n(self):
        return self.r - 1

    def frame(self, k):
        """Monomial frame of E_k = Sym^k E: exponents (N_k, r) and slopes alpha . a."""
        N = comb(k + self.r - 1, self.r - 1)
        if k < 1 or N > config.NK_CAP:
            raise ValueError(f"N_{k} = {N} outside [1, {config.NK_CAP}]")
        expo = fc.multi_indices(self.r, k)
        return expo, (expo @ np.array(self.degrees)).astype(float)

    def n_k(self, k):
        return comb(k + self.r - 1, self.r - 1)

    def hn_filtration(self, k):
        return fc.Filtration.coordinate(self.frame(k)[1])


def simplex_rule(n, m):
    """Collapsed Gauss-Jacobi rule for the uniform probability on the n-simplex.

    Returns points (Q, n + 1) with barycentric coordinates (x_0, ..., x_n)
    and weights summing to one.
    """
    if n == 0:
        return np.ones((1, 1)), np.ones(1)
    xis, ws = [], []
    for i in range(1, n + 1):
        s, w = roots_jacobi(m, n - i, 0)
        xis.append(0.5 * (s + 1.0))
        ws.append(w)
    grids = np.meshgrid(*xis, indexing="ij")
    wgrid = np.ones_like(grids[0])
    for i, w in enumerate(ws):
        shape = [1] * n
        shape[i] = m
        wgrid = wgrid * w.reshape(shape)
    xi = np.stack([g.ravel() for g in grids], axis=1)
    X = np.zeros((xi.shape[0], n + 1))
    rest = np.ones(xi.shape[0])
    for i in range(n):
        X[:, i + 1] = rest * xi[:, i]
        rest = rest * (1.0 - xi[:, i])
    X[:, 0] = rest
    w = wgrid.ravel()
    return X, w / w.sum()


@dataclass(frozen=True, eq=False)
class RadialGrid:
    base_u: np.ndarray
    base_w: np.ndarray
    fiber_x: np.ndarray
    fiber_w: np.ndarray

    @property
    def base_y0(self):
        return np.log(self.base_u) - np.log1p(-self.base_u)

    @property
    def g2(self):
        """Density u(1 - u) of the base form in the log-radial coordinate."""
        return self.base_u * (1.0 - self.base_u)

    @property
    def shape(self):
        return self.base_u.size, self.fiber_w.size


def make_grid(n, spec=None, base_nodes=None, fiber_nodes=None):
    spec = spec or config.GridSpec()
    nb = base_nodes or spec.base_nodes
    nf = fiber_nodes or spec.fiber_nodes
    if nb < config.MIN_NODES or nf < config.MIN_NODES:
        raise ValueError(f"need at least {config.MIN_NODES} nodes per dimension")
    s, w = roots_legendre(nb)
    X, wx = simplex_rule(n, nf)
    return RadialGrid(0.5 * (s + 1.0), 0.5 * w, X, wx)


def model_new(degrees, grid_spec=None):
    model = SplitModel(tuple(degrees))
    return model, make_grid(model.n, grid_spec)


# ---------------------------------------------------------------------------
# Finite differences in y0


def _shifted(fn, y0, h):
    m = y0.size
    vals = fn(np.concatenate([y0 + h, y0 - h]))
    return vals[:m], vals[m:]


def y0_derivatives(fn, y0, h0=config.FD_STEP, tol=config.FD_REL_TOL,
                   max_halvings=config.FD_MAX_HALVINGS):
    """Value, first and second derivative of ``fn`` at the points ``y0``.

    Central differences with steps h0 / 2^j, extrapolated by a Richardson
    table until the change between successive diagonal entries is below
    ``tol`` relative to the size of the derivative.
    """
    y0 = np.asarray(y0, dtype=float)
    f0 = fn(y0)
    T1, T2 = [], []
    best = None
    for j in range(max_halvings + 1):
        h = h0 / 2**j
        fp, fm = _shifted(fn, y0, h)
        row1 = [(fp - fm) / (2 * h)]
        row2 = [(fp - 2 * f0 + fm) / h**2]
        for m in range(1, j + 1):
            c = 4.0**m - 1.0
            row1.append(row1[m - 1] + (row1[m - 1] - T1[j - 1][m - 1]) / c)
            row2.append(row2[m - 1] + (row2[m - 1] - T2[j - 1][m - 1]) / c)
        T1.append(row1)
        T2.append(row2)
        if j >= 2:
            e1 = np.abs(row1[-1] - T1[j - 1][-1])
            e2 = np.abs(row2[-1] - T2[j - 1][-1])
            # entries near zero are judged against the scale of the whole row
            s1 = np.abs(row1[-1]) + 1e-3 * np.max(np.abs(row1[-1])) + 1e-12
            s2 = np.abs(row2[-1]) + 1e-3 * np.max(np.abs(row2[-1])) + 1e-12
            err = max(np.max(e1 / s1), np.max(e2 / s2))
            if err <= tol:
                return f0, row1[-1], row2[-1]
            # once roundoff dominates, smaller steps only make things worse
            if best is not None and err > 4 * best[0] and best[0] <= 10 * tol:
                return f0, best[1], best[2]
            if best is None or err < best[0]:
                best = (err, row1[-1], row2[-1])
    raise ConvergenceError("Richardson refinement did not reach the target error")


# ---------------------------------------------------------------------------
# Bundle metrics on E_k


@dataclass(frozen=True, eq=False)
class BundleMetricField:
    """Hermitian metric on E_k in the monomial frame, as a function of y0.

    Diagonal fields are stored as ``log h(y0) = log_const + log_fn(y0)``;
    dense fields through ``gram_fn(y0) -> (m, N, N)``.
    """

    model: SplitModel
    grid: RadialGrid
    k: int
    log_const: Optional[np.ndarray] = None
    log_fn: Optional[Callable] = None
    gram_fn: Optional[Callable] = None
    label: str = ""

    def __post_init__(self):
        if (self.log_fn is None) == (self.gram_fn is None):
            raise ValueError("give exactly one of log_fn (diagonal) or gram_fn (dense)")
        if self.log_fn is not None and self.log_const is None:
            object.__setattr__(self, "log_const", np.zeros(self.model.n_k(self.k)))

    @property
    def diagonal(self):
        return self.log_fn is not None

    @cached_property
    def frame(self):
        return self.model.frame(self.k)

    @property
    def exponents(self):
        return self.frame[0]

    @property
    def slopes(self):
        return self.frame[1]

    def log_diag(self, y0):
        if not self.diagonal:
            raise ValueError("field is not diagonal")
        return self.log_const[None, :] + self.log_fn(np.atleast_1d(y0))

    def gram(self, y0):
        y0 = np.atleast_1d(np.asarray(y0, dtype=float))
        if self.diagonal:
            h = np.exp(self.log_diag(y0))
            out = np.zeros(h.shape + (h.shape[1],), dtype=complex)
            idx = np.arange(h.shape[1])
            out[:, idx, idx] = h
            return out
        return np.asarray(self.gram_fn(y0), dtype=complex)

    @cached_property
    def values(self):
        """Gram matrices at the base nodes, shape (nb, N, N)."""
        return self.gram(self.grid.base_y0)

    def products(self):
        return [fc.HermitianProduct(G) for G in self.values]


def _fs_log(y0):
    """log(1 + |z|^2) as a function of y0."""
    return np.logaddexp(0.0, y0)


def _log_factorials(expo):
    from scipy.special import gammaln
    return np.sum(gammaln(expo + 1.0), axis=1)


def critical_metric(model, k, grid=None):
    """Direct sum of Fubini-Study metrics on the summands O(alpha . a) of E_k.

    The constants alpha! n! / (k + n)! make this the fiberwise L^2 metric of
    the reference potential, so its Fubini-Study potential is the reference
    up to the constant log N_k / k.
    """
    grid = grid or make_grid(model.n)
    expo, slopes = model.frame(k)
    const = _log_factorials(expo) + np.log(factorial(model.n)) - np.log(factorial(k + model.n))
    return BundleMetricField(model, grid, k, log_const=const,
                             log_fn=lambda y0: -np.outer(_fs_log(y0), slopes),
                             label=f"critical(k={k})")


def conformal_perturbation(H, index, eps, profile=None):
    """Multiply one diagonal entry by exp(eps * profile(u)); default profile sin(pi u)."""
    if not H.diagonal:
        raise ValueError("perturbation defined for diagonal fields")
    profile = profile or (lambda u: np.sin(np.pi * u))
    base = H.log_fn
    mask = np.zeros(H.model.n_k(H.k))
    mask[index] = 1.0

    def log_fn(y0):
        u = 1.0 / (1.0 + np.exp(-y0))
        return base(y0) + eps * np.outer(profile(u), mask)
    return BundleMetricField(H.model, H.grid, H.k, log_const=H.log_const, log_fn=log_fn,
                             label=f"{H.label}*exp({eps} f)")


def ray_field(H, s):
    """Geodesic ray of the HN filtration (weights = slopes) applied pointwise."""
    s = float(s)
    if s == 0.0:
        return H
    if H.diagonal:
        # the ray of a diagonal product along a coordinate flag rescales each entry
        return BundleMetricField(H.model, H.grid, H.k, log_const=H.log_const - s * H.slopes,
                                 log_fn=H.log_fn, label=f"{H.label}|ray s={s}")
    F = H.model.hn_filtration(H.k)

    def gram_fn(y0):
        G = H.gram(y0)
        return np.array([fc.geodesic_ray(fc.HermitianProduct(g), F, s).gram for g in G])
    return BundleMetricField(H.model, H.grid, H.k, gram_fn=gram_fn,
                             label=f"{H.label}|ray s={s}")


def bundle_curvature(H):
    """Curvature density (i/2pi) R / omega_B at the base nodes, shape (nb, N, N).

    With G(y0) the Gram matrix, R = dbar(G^-1 dG) and the density is
    G^-1 (G' G^-1 G' - G'') / (u (1 - u)).
    """
    return curvature_at(H, H.grid.base_y0)


def curvature_at(H, y0, tol=config.FD_REL_TOL):
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    u = 1.0 / (1.0 + np.exp(-y0))
    g2 = u * (1.0 - u)
    if H.diagonal:
        _, _, l2 = y0_derivatives(H.log_fn, y0, tol=tol)
        K = -l2 / g2[:, None]
        out = np.zeros(K.shape + (K.shape[1],))
        idx = np.arange(K.shape[1])
        out[:, idx, idx] = K
        return out.astype(complex)
    N = H.model.n_k(H.k)
    m = y0.size
    # a constant frame change per node, T^H G T with unit diagonal, keeps
    # entries of very different size equally well resolved by the stencil
    T = 1.0 / np.sqrt(np.real(np.diagonal(H.gram(y0), axis1=1, axis2=2)))

    def flat(y):
        Tm = np.tile(T, (len(y) // m, 1))
        G = H.gram(y) * Tm[:, :, None] * Tm[:, None, :]
        return np.concatenate([G.real.reshape(len(y), -1), G.imag.reshape(len(y), -1)], axis=1)

    f0, f1, f2 = y0_derivatives(flat, y0, tol=tol)

    def unflat(a):
        return (a[:, :N * N] + 1j * a[:, N * N:]).reshape(-1, N, N)
    G, G1, G2 = unflat(f0), unflat(f1), unflat(f2)
    out = np.empty_like(G)
    for i in range(m):
        X = np.linalg.solve(G[i], G1[i])
        K = np.linalg.solve(G[i], G1[i] @ X - G2[i]) / g2[i]
        out[i] = (T[i][:, None] * K) / T[i][None, :]
    return out


def _node_eigs(H, K, t):
    """Real eigenvalues of K - t at each node (self-adjoint w.r.t. H)."""
    if H.diagonal:
        return np.real(np.diagonal(K, axis1=1, axis2=2)) - t
    out = []
    for G, Kb in zip(H.values, K):
        P = fc.HermitianProduct(G)
        out.append(fc.spectrum(Kb - t * np.eye(Kb.shape[0]), P))
    return np.array(out)


def hym_functional(H, t, norm="operator", curvature=None):
    """L^1 norm over the base of (curvature density - t Id).

    ``norm='operator'`` uses the largest absolute eigenvalue, ``norm='trace'``
    the sum of absolute eigenvalues.
    """
    K = bundle_curvature(H) if curvature is None else curvature
    ev = np.abs(_node_eigs(H, K, t))
    if norm == "operator":
        pointwise = ev.max(axis=1)
    elif norm == "trace":
        pointwise = ev.sum(axis=1)
    else:
        raise ValueError("norm must be 'operator' or 'trace'")
    return float(np.dot(H.grid.base_w, pointwise))


@dataclass(frozen=True)
class DeltaCheck:
    ok: bool
    residual: float
    delta: float


def delta_residual(H, curvature=None):
    """L^1 (operator norm) distance between curvature and the HN weight operator."""
    K = bundle_curvature(H) if curvature is None else curvature
    if H.diagonal:
        D = np.real(np.diagonal(K, axis1=1, axis2=2)) - H.slopes[None, :]
        return float(np.dot(H.grid.base_w, np.abs(D).max(axis=1)))
    F = H.model.hn_filtration(H.k)
    vals = []
    for G, Kb in zip(H.values, K):
        P = fc.HermitianProduct(G)
        vals.append(fc.operator_norm(Kb - fc.weight_operator(P, F), P))
    return float(np.dot(H.grid.base_w, vals))


def is_delta_approx(H, delta, curvature=None):
    res = delta_residual(H, curvature)
    return DeltaCheck(bool(res <= delta), res, float(delta))


# ---------------------------------------------------------------------------
# Fibered forms


@dataclass(frozen=True)
class FiberSolution:
    Y: np.ndarray        # (m, Q, r) fiber log coordinates, Y_0 = 0
    lse: np.ndarray      # (m, Q)   d * f at the point
    p: np.ndarray        # (m, Q, N) softmax weights of the monomials
    hess: np.ndarray     # (m, Q, n, n) fiber Hessian of f in free coordinates


def _legendre_solve(expo, B, X, d):
    """Points Y with grad_Y f = X for f = (1/d) LSE(alpha . Y + b).

    expo (N, r); B (m, N); X (Q, r) simplex points.  Damped Newton on the
    strictly convex function f(Y) - X . Y in the free coordinates Y_1..Y_n.
    """
    m, N = B.shape
    Q, r = X.shape
    n = r - 1
    E = expo[:, 1:].astype(float)                          # (N, n)
    Xf = np.broadcast_to(X[None, :, 1:], (m, Q, n))
    # pure powers d e_j balance against each other at the initial guess
    pure = [int(np.flatnonzero((expo[:, j] == d))[0]) for j in range(r)]
    bp = B[:, pure]                                        # (m, r)
    y = (np.log(X[None, :, 1:]) - np.log(X[None, :, :1])
         - (bp[:, None, 1:] - bp[:, None, :1]) / d)
    y = np.array(np.broadcast_to(y, (m, Q, n)))

    def state(y):
        logits = y @ E.T + B[:, None, :]
        lse = logsumexp(logits, axis=-1)
        p = np.exp(logits - lse[..., None])
        return lse, p

    lse, p = state(y)
    for _ in range(config.NEWTON_MAXITER):
        mean = p @ E / d
        g = mean - Xf
        gmax = np.max(np.abs(g))
        second = np.einsum("mqa,aj,ak->mqjk", p, E, E)
        hess = (second - d * d * mean[..., :, None] * mean[..., None, :]) / d
        if gmax < config.NEWTON_TOL:
            # two undamped polishing steps push the residual to roundoff
            for _ in range(2):
                y = y - np.linalg.solve(hess, g[..., None])[..., 0]
                lse, p = state(y)
                mean = p @ E / d
                g = mean - Xf
                second = np.einsum("mqa,aj,ak->mqjk", p, E, E)
                hess = (second - d * d * mean[..., :, None] * mean[..., None, :]) / d
            break
        step = np.linalg.solve(hess, g[..., None])[..., 0]
        if gmax < 1e-6:
            # quadratic regime; the objective decrease is below its roundoff
            y = y - step
            lse, p = state(y)
            continue
        obj = lse / d - np.sum(Xf * y, axis=-1)
        slope = np.sum(g * step, axis=-1)
        t = np.ones((m, Q))
        for _ in range(40):
            y_new = y - t[..., None] * step
            lse_new, p_new = state(y_new)
            obj_new = lse_new / d - np.sum(Xf * y_new, axis=-1)
            bad = obj_new > obj - 1e-4 * t * slope + 1e-15 * np.abs(obj)
            if not np.any(bad):
                break
            t = np.where(bad, 0.5 * t, t)
        y, lse, p = y_new, lse_new, p_new
    else:
        raise ConvergenceError("fiber Legendre inversion did not converge")
    Y = np.concatenate([np.zeros((m, Q, 1)), y], axis=-1)
    return FiberSolution(Y, lse, p, hess)


@dataclass(frozen=True, eq=False)
class FiberedForm:
    """Torus-invariant metric exp(-k f) on L^k with unit potential f.

    f(y0, Y) = (1/d) log sum_alpha exp(alpha . Y + b_alpha(y0)) with
    b = coeff_const + coeff_fn(y0) and d = |alpha|.
    """

    model: SplitModel
    grid: RadialGrid
    k: int
    exponents: np.ndarray
    coeff_const: np.ndarray
    coeff_fn: Callable
    label: str = ""

    def __post_init__(self):
        E = np.asarray(self.exponents)
        if E.ndim != 2 or E.shape[1] != self.model.r or np.any(E < 0):
            raise ValueError("exponents must be non-negative of shape (N, r)")
        d = E.sum(axis=1)
        if np.any(d != d[0]) or d[0] < 1:
            raise ValueError("exponents must share one positive degree")
        # the pure powers make the fiber potential strictly convex and proper
        if not all(np.any(E[:, j] == d[0]) for j in range(E.shape[1])):
            raise ValueError("exponents must include every pure power")

    @property
    def d(self):
        return int(self.exponents[0].sum())

    def coeffs(self, y0):
        return self.coeff_const[None, :] + self.coeff_fn(np.atleast_1d(y0))

    def solve(self, y0, X=None):
        X = self.grid.fiber_x if X is None else X
        return _legendre_solve(self.exponents, self.coeffs(y0), X, self.d)

    @cached_property
    def _fields(self):
        y0 = self.grid.base_y0
        sol = self.solve(y0)
        _, b1, b2 = y0_derivatives(self.coeff_fn, y0)
        ev_min = np.linalg.eigvalsh(sol.hess)[..., 0]
        if np.min(ev_min) <= config.POSITIVITY_TOL:
            i, q = np.unravel_index(np.argmin(ev_min), ev_min.shape)
            raise PositivityError(
                f"fiber Hessian not positive at u={self.grid.base_u[i]:.6g}, "
                f"x={self.grid.fiber_x[q]}: min eigenvalue {ev_min[i, q]:.3e}")
        p = sol.p
        d = self.d
        E = self.exponents[:, 1:].astype(float)
        Eb2 = np.einsum("mqa,ma->mq", p, b2)
        # variance of b' left after regressing on the exponents (Schur complement)
        mean_a = p @ E
        mean_b = np.einsum("mqa,ma->mq", p, b1)
        cov_ab = np.einsum("mqa,aj,ma->mqj", p, E, b1) - mean_a * mean_b[..., None]
        cov_aa = d * sol.hess
        beta = np.linalg.solve(cov_aa, cov_ab[..., None])[..., 0]
        e = b1[:, None, :] - beta @ E.T
        mean_e = np.sum(p * e, axis=-1)
        var_e = np.sum(p * e * e, axis=-1) - mean_e**2
        htrace = (Eb2 + np.maximum(var_e, 0.0)) / (d * self.grid.g2[:, None])
        xstd = np.exp(sol.Y - logsumexp(sol.Y, axis=-1, keepdims=True))
        density = np.linalg.det(sol.hess) / np.prod(xstd, axis=-1)
        return {"horizontal_trace": htrace, "fiber_density": density,
                "potential": self.k * sol.lse / d, "Y": sol.Y, "x_std": xstd}

    @property
    def horizontal_trace(self):
        return self._fields["horizontal_trace"]

    @property
    def potential(self):
        return self._fields["potential"]

    def check_positive(self):
        self._fields
        return True

    def potential_at(self, y0, Y):
        """Unit potential f at base points y0 (m,) and fiber log coordinates Y (m, Q, r)."""
        B = self.coeffs(y0)
        return logsumexp(Y @ self.exponents.T.astype(float) + B[:, None, :], axis=-1) / self.d


def reference_potential(model, k=1, grid=None):
    """Metric on L induced by the direct sum of Fubini-Study metrics on E.

    Unit potential f = log sum_j |w_j|^2 (1 + |z|^2)^{a_j}.
    """
    grid = grid or make_grid(model.n)
    a = np.array(model.degrees, dtype=float)
    return FiberedForm(model, grid, int(k), np.eye(model.r, dtype=np.int64), np.zeros(model.r),
                       lambda y0: np.outer(_fs_log(y0), a), label=f"reference(k={k})")


def fs_potential(model, H, k):
    """Fubini-Study potential exp(-phi) = 1 / sum_j |sigma_j|^2, sigma_j H-orthonormal.

    For a diagonal metric on E_k this is phi = log sum_alpha |w^alpha|^2 / h_alpha.
    """
    if isinstance(H, fc.HermitianProduct):
        G = H.gram
        if np.max(np.abs(G - np.diag(np.diag(G)))) > 1e-12 * np.max(np.abs(G)):
            raise ValueError("torus-invariant forms need a diagonal metric")
        const = np.log(np.real(np.diag(G)))
        H = BundleMetricField(model, make_grid(model.n), k, log_const=const,
                              log_fn=lambda y0: np.zeros((len(y0), const.size)),
                              label="constant")
    if not H.diagonal:
        raise ValueError("torus-invariant forms need a diagonal metric")
    if H.k != k:
        raise ValueError("metric level and power disagree")
    log_fn = H.log_fn
    return FiberedForm(model, H.grid, int(k), H.exponents, -H.log_const,
                       lambda y0: -log_fn(y0), label=f"FS[{H.label}]")


def fs_round_trip_distance(model, k, grid=None):
    """sup |(1/k) FS(Hilb_k(h)) - h| over the grid, h the reference potential."""
    h = reference_potential(model, 1, grid)
    g = fs_potential(model, hilb_metric(model, h, k), k)
    y0 = h.grid.base_y0
    Y = h.solve(y0).Y
    return float(np.max(np.abs(g.potential_at(y0, Y) - h.potential_at(y0, Y))))


def fs_identity_residual(form, H):
    """max |sum_alpha |w^alpha|^2_{FS(H)} / h_alpha - 1| over the grid.

    With an orthonormal basis w^alpha / sqrt(h_alpha) this is the defining
    identity of the Fubini-Study metric.
    """
    y0 = form.grid.base_y0
    sol = form.solve(y0)
    logh = H.log_diag(y0)
    terms = sol.Y @ H.exponents.T.astype(float) - logh[:, None, :] - (form.k / form.d) * sol.lse[..., None]
    return float(np.max(np.abs(np.exp(logsumexp(terms, axis=-1)) - 1.0)))


# ---------------------------------------------------------------------------
# Quantization


def _hilb_log_norms(form, expo, K, y0, X=None, W=None):
    """log of int |w^alpha|^2 exp(-K f) over the fiber, volume (dd^c f)^n."""
    X = form.grid.fiber_x if X is None else X
    W = form.grid.fiber_w if W is None else W
    sol = form.solve(y0, X)
    logint = sol.Y @ expo.T.astype(float) - (K / form.d) * sol.lse[..., None]
    return logsumexp(logint + np.log(W)[None, :, None], axis=1)


def hilb_metric(model, form, k, check=True):
    """Fiberwise L^2 metric on E_k from the metric exp(-k f), volume (dd^c f)^n."""
    expo, _ = model.frame(k)
    form.check_positive()
    fn = lambda y0: _hilb_log_norms(form, expo, k, y0)  # noqa: E731
    if check:
        grid = form.grid
        nf = int(round(grid.fiber_w.size ** (1.0 / model.n)))
        Xf, Wf = simplex_rule(model.n, nf + nf // 2)
        probe = grid.base_y0[[0, grid.base_y0.size // 2, -1]]
        a = fn(probe)
        b = _hilb_log_norms(form, expo, k, probe, Xf, Wf)
        rel = np.max(np.abs(np.expm1(a - b)))
        if rel > config.HILB_REFINE_TOL:
            raise ConvergenceError(f"fiber quadrature changed by {rel:.2e} under refinement")
    return BundleMetricField(model, form.grid, k, log_const=np.zeros(expo.shape[0]),
                             log_fn=fn, label=f"Hilb_{k}[{form.label}]")


def fiber_fs_hilb(H, k, r, l=None, n_angle=32, fiber_nodes=32):
    """Gram of Hilb_l(FS(H)^{l/k}) on one fiber against the unit Fubini-Study volume.

    ``H`` is any product on Sym^k C^r in the monomial basis (dense allowed);
    the fiber integral runs over simplex x angle coordinates.  With
    ``l = k`` this is the matrix compared with H in the extremal inequality
    H >= Hilb(FS(H)).
    """
    l = k if l is None else l
    n = r - 1
    expo_k = fc.multi_indices(r, k)
    expo_l = fc.multi_indices(r, l)
    X, wx = simplex_rule(n, fiber_nodes)
    th = 2 * np.pi * np.arange(n_angle) / n_angle
    grids = np.meshgrid(*([th] * n), indexing="ij")
    TH = np.stack([g.ravel() for g in grids], axis=1)          # (A, n)
    wa = np.full(TH.shape[0], 1.0 / TH.shape[0])
    # w_j = sqrt(x_j) e^{i theta_j}, theta_0 = 0
    amp = np.sqrt(X)                                           # (Q, r)
    phase = np.concatenate([np.zeros((TH.shape[0], 1)), TH], axis=1)
    w = amp[:, None, :] * np.exp(1j * phase)[None, :, :]       # (Q, A, r)
    vk = np.prod(w[..., None, :] ** expo_k[None, None], axis=-1)   # (Q, A, Nk)
    vl = np.prod(w[..., None, :] ** expo_l[None, None], axis=-1)
    Ginv = np.linalg.inv(H.gram if isinstance(H, fc.HermitianProduct) else H)
    # sum_j |sigma_j|^2 = v^T G^-1 conj(v) when |c|^2 = c^H G c
    bergman = np.real(np.einsum("qaj,jk,qak->qa", vk, Ginv, vk.conj()))
    weight = (wx[:, None] * wa[None, :]) * bergman ** (-l / k)
    return np.einsum("qa,qai,qaj->ij", weight, vl.conj(), vl)


def _mult_map(r, k, l):
    """0/1 matrix of Sym^l(Sym^k C^r) -> Sym^{kl} C^r on monomial bases."""
    expo_k = fc.multi_indices(r, k)
    Nk = expo_k.shape[0]
    expo_l = fc.multi_indices(Nk, l)            # multisets of l monomials
    target = fc.multi_indices(r, k * l)
    index = {tuple(int(v) for v in e): i for i, e in enumerate(target)}
    cols = expo_l @ expo_k                      # merged exponent of each product
    P = np.zeros((target.shape[0], expo_l.shape[0]))
    for j, e in enumerate(cols):
        P[index[tuple(int(v) for v in e)], j] = 1.0
    return P, expo_l


def mult_quotient_gram(G, r, k, l):
    """Quotient of Sym^l G through multiplication Sym^l(Sym^k) -> Sym^{kl}.

    A torus rescaling w_j -> e^{c_j} w_j commutes with the multiplication map,
    so c is fitted to the diagonal of G first and undone at the end; this keeps
    Sym^l well conditioned at nodes where the summands differ by many orders.
    """
    G = np.asarray(G, dtype=complex)
    P, _ = _mult_map(r, k, l)
    expo_k = fc.multi_indices(r, k).astype(float)
    c = np.linalg.lstsq(expo_k, -0.5 * np.log(np.real(np.diag(G))), rcond=None)[0]
    d = np.exp(expo_k @ c)
    S = fc.sym_metric(fc.HermitianProduct(G * d[:, None] * d[None, :]), l)
    Q = fc.quotient_metric(S, P).gram
    dkl = np.exp(fc.multi_indices(r, k * l).astype(float) @ c)
    return Q / dkl[:, None] / dkl[None, :]


def mult_quotient_metric(H, l):
    """[Sym^l H] on E_{kl}, pointwise over the base."""
    model, k, r = H.model, H.k, H.model.r
    fc._check_cap(model.n_k(k), l)
    model.frame(k * l)
    P, expo_l = _mult_map(r, k, l)
    if H.diagonal:
        # Sym^l of diag(h) is diag(beta!/l! h^beta); the quotient through a 0/1
        # map is diagonal with 1/h_gamma = sum over preimages of 1/h_beta
        logD = _log_factorials(expo_l) - np.log(float(factorial(l)))
        owner = np.argmax(P, axis=0)
        order = np.argsort(owner, kind="stable")
        starts = np.searchsorted(owner[order], np.arange(P.shape[0]))
        expo_l_f = expo_l.astype(float)

        def log_fn(y0):
            lh = H.log_diag(y0)
            vals = -(logD[None, :] + lh @ expo_l_f.T)
            vals = vals[:, order]
            out = np.array([-np.logaddexp.reduce(vals[:, s:e], axis=1)
                            for s, e in zip(starts, list(starts[1:]) + [vals.shape[1]])]).T
            return out
        return BundleMetricField(model, H.grid, k * l, log_const=np.zeros(P.shape[0]),
                                 log_fn=log_fn, label=f"[Sym^{l} {H.label}]")

    def gram_fn(y0):
        return np.array([mult_quotient_gram(G, r, k, l) for G in H.gram(y0)])
    return BundleMetricField(model, H.grid, k * l, gram_fn=gram_fn, label=f"[Sym^{l} {H.label}]")


@dataclass(frozen=True)
class RatioInterval:
    lo: float
    hi: float

    @property
    def width(self):
        """Radius of the smallest interval centred at 1 that contains [lo, hi]."""
        return max(self.hi - 1.0, 1.0 - self.lo)

    def contains_one(self, slack=config.RATIO_SLACK):
        """lo <= 1 <= hi up to slack."""
        return self.lo - slack <= 1.0 <= self.hi + slack

    def near_one(self, slack=config.RATIO_SLACK):
        """Distance from 1 to the interval is at most width + slack.

        Implied by the definition of width; kept as an explicit guard against
        non-finite or inverted intervals.
        """
        dist = max(self.lo - 1.0, 1.0 - self.hi, 0.0)
        return bool(self.lo <= self.hi and dist <= self.width + slack)


def quotient_vs_hilb_ratio(model, H, k, l):
    """Range of eigenvalues of [Sym^l H] against Hilb_{kl}(FS(H)^{1/k}), over k^m l^n."""
    A = mult_quotient_metric(H, l)
    B = hilb_metric(model, fs_potential(model, H, k), k * l)
    scale = float(k) * float(l) ** model.n
    if A.diagonal and B.diagonal:
        y0 = H.grid.base_y0
        ratios = np.exp(A.log_diag(y0) - B.log_diag(y0)) / scale
    else:
        from scipy.linalg import eigh
        ratios = np.array([eigh(a, b, eigvals_only=True) for a, b in zip(A.values, B.values)]) / scale
    return RatioInterval(float(np.min(ratios)), float(np.max(ratios)))


# ---------------------------------------------------------------------------
# Functionals


@dataclass(frozen=True)
class CurvatureFields:
    horizontal_trace: np.ndarray
    fiber_density: np.ndarray


def line_curvature(form):
    f = form._fields
    return CurvatureFields(f["horizontal_trace"], f["fiber_density"])


@dataclass(frozen=True)
class WZWValue:
    value: float
    signed: float


def wzw_functional(form, t):
    """(n + 1) * integral of |horizontal trace - t| against omega^n and the base form."""
    h = form.horizontal_trace
    r = form.model.r
    W = form.grid.base_w[:, None] * form.grid.fiber_w[None, :]
    return WZWValue(float(r * np.sum(W * np.abs(h - t))), float(r * np.sum(W * (h - t))))


def hermite_einstein_residual(model, form, lam):
    return wzw_functional(form, lam).value


def dequantize(model, k, s, H0):
    """Unit potential of FS(ray(H0, s))^{1/k}; positivity is checked."""
    form = fs_potential(model, ray_field(H0, s), k)
    form.check_positive()
    return form


def hym_on_hilb(model, hpot, k, t):
    """(1/(k N_k)) HYM_{tk}(E_k, Hilb_k(h)) with the trace norm."""
    H = hilb_metric(model, hpot, k)
    return hym_functional(H, t * k, norm="trace") / (k * model.n_k(k))


def hym_lower_bound(model, k, t):
    """integral |x - t| d eta_k, the lower bound for (1/(k N_k)) HYM_{tk}."""
    return abs_moment(eta_k(split_sym_slopes(model.degrees, k), k), t)


def ray_bound_constant(N):
    """Factor N^3 8^(N + 4) in the residual bound along rays."""
    return float(N) ** 3 * 8.0 ** (N + 4)


# ---------------------------------------------------------------------------
# Export


def form_rows(form, field="horizontal_trace"):
    """Rows (u, x_1, ..., x_n, value) for CSV export."""
    vals = form._fields[field]
    u = form.grid.base_u
    X = form.grid.fiber_x[:, 1:]
    rows = []
    for i in range(u.size):
        for q in range(X.shape[0]):
            rows.append([float(u[i])] + [float(v) for v in X[q]] + [float(vals[i, q])])
    return rows


def model_to_json(model, grid_spec=None):
    import json
    spec = grid_spec or config.GridSpec()
    return json.dumps({"degrees": list(model.degrees),
                       "grid_spec": {"base_nodes": spec.base_nodes, "fiber_nodes": spec.fiber_nodes}})


# ---------------------------------------------------------------------------
# Checks along rays


def offdiagonal_test_metric(model, eps=0.2, profile=None):
    """Level-1 metric critical_metric + eps * profile(u) on the (0, 1) entries.

    Only meaningful for r = 2; the default profile sin(pi u) keeps it
    positive for eps < 1/2.
    """
    if model.r != 2:
        raise ValueError("off-diagonal test metric is defined for r = 2")
    H = critical_metric(model, 1)
    profile = profile or (lambda u: np.sin(np.pi * u))

    def gram_fn(y0):
        u = 1.0 / (1.0 + np.exp(-y0))
        G = np.zeros((y0.size, 2, 2), dtype=complex)
        h = np.exp(H.log_diag(y0))
        G[:, 0, 0], G[:, 1, 1] = h[:, 0], h[:, 1]
        c = eps * profile(u) * np.sqrt(h[:, 0] * h[:, 1])
        G[:, 0, 1] = G[:, 1, 0] = c
        return G
    return BundleMetricField(model, H.grid, 1, gram_fn=gram_fn, label=f"offdiag(eps={eps})")


def _filtered_frame(G, slopes):
    """Columns: H-orthogonal frame adapted to the slope filtration (higher slope first kept)."""
    order = np.argsort(-slopes, kind="stable")
    P = np.eye(G.shape[0], dtype=complex)[:, order]
    for j in range(1, P.shape[1]):
        for i in range(j):
            v = P[:, i]
            P[:, j] -= v * (v.conj() @ G @ P[:, j]) / (v.conj() @ G @ v)
    inv = np.argsort(order)
    return P[:, inv]


@dataclass(frozen=True)
class ScalingCheck:
    s: float
    upper: float      # |K_s[i, j] e^{s(l_j - l_i)} - K_0[i, j]| / |K_0[i, j]|, i below j in weight
    lower: float      # |K_s[j, i] - K_0[j, i]| / |K_0[j, i]|


def offdiagonal_scaling(H0, s_values):
    """Off-diagonal curvature blocks along the ray, in the frame adapted at s = 0.

    In a frame that is H0-orthogonal and adapted to the slope filtration the
    ray acts by diag(exp(-s l_i)), so the block from the higher-weight summand
    to the lower one picks up exp(-s (l_j - l_i)) and the other block stays.
    """
    slopes = H0.slopes
    y0 = H0.grid.base_y0
    K0 = curvature_at(H0, y0)
    G0 = H0.gram(y0)
    frames = [_filtered_frame(G, slopes) for G in G0]
    Kf0 = np.array([np.linalg.solve(P, K @ P) for P, K in zip(frames, K0)])
    i, j = (0, 1) if slopes[0] < slopes[1] else (1, 0)
    out = []
    for s in s_values:
        Ks = curvature_at(ray_field(H0, s), y0)
        Kf = np.array([np.linalg.solve(P, K @ P) for P, K in zip(frames, Ks)])
        scale = np.exp(s * (slopes[j] - slopes[i]))
        a, b = Kf0[:, i, j], Kf0[:, j, i]
        mask_a = np.abs(a) > 1e-6 * np.abs(a).max()
        mask_b = np.abs(b) > 1e-6 * np.abs(b).max()
        up = np.abs(Kf[:, i, j] * scale - a)[mask_a] / np.abs(a[mask_a])
        lo = np.abs(Kf[:, j, i] - b)[mask_b] / np.abs(b[mask_b])
        out.append(ScalingCheck(float(s), float(up.max()), float(lo.max())))
    return out


@dataclass(frozen=True)
class RayBound:
    s: float
    residual: float
    bound: float

    @property
    def ok(self):
        return self.residual <= self.bound


def ray_residual_bound(H0, s_values, floor=config.FD_REL_TOL):
    """Residual along the ray against delta0 * N^3 8^(N+4); delta0 is floored at the FD noise."""
    d0 = max(delta_residual(H0), floor)
    c = ray_bound_constant(H0.model.n_k(H0.k))
    return [RayBound(float(s), delta_residual(ray_field(H0, s)), d0 * c) for s in s_values]
