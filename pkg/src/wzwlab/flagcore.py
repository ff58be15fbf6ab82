"""Hermitian linear algebra of filtrations.

Conventions
-----------
A Hermitian product is stored by its Gram matrix ``G`` in a fixed reference
basis, so that ``<x, y> = x^H G y``.  Endomorphisms act on coefficient
vectors.  Matrix functions are evaluated after whitening by the Cholesky
factor ``G = L L^H``; in whitened coordinates ``L^H x`` the product is the
standard one and H-self-adjoint operators become Hermitian matrices.

A filtration is a decreasing family of subspaces with increasing jumps
``lam_1 < ... < lam_q``; ``subspaces[i]`` spans the piece of weight
``>= lam_i`` and ``subspaces[0]`` is the whole space.
"""

from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass
from functools import cached_property
from math import comb, factorial

import numpy as np
import scipy.linalg as sla

from . import config


def _scale(M):
    return max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0


def _orth(S, tol=config.RANK_TOL):
    """Orthonormal basis (Euclidean) of the column span of S."""
    S = np.atleast_2d(S)
    if S.shape[1] == 0:
        return np.zeros((S.shape[0], 0), dtype=complex)
    U, sv, _ = np.linalg.svd(S, full_matrices=False)
    if sv.size == 0 or sv[0] == 0:
        return np.zeros((S.shape[0], 0), dtype=complex)
    rank = int(np.sum(sv > tol * sv[0]))
    return U[:, :rank]


def _rank(S, tol=config.RANK_TOL):
    return _orth(S, tol).shape[1]


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True, eq=False)
class HermitianProduct:
    """Positive-definite Hermitian product given by its Gram matrix."""

    gram: np.ndarray

    def __post_init__(self):
        G = np.array(self.gram, dtype=complex)
        if G.ndim != 2 or G.shape[0] != G.shape[1] or G.shape[0] == 0:
            raise ValueError("gram must be a non-empty square matrix")
        if np.max(np.abs(G - G.conj().T)) > config.HERMITIAN_TOL * _scale(G):
            raise ValueError("gram is not Hermitian")
        G = 0.5 * (G + G.conj().T)
        ev = np.linalg.eigvalsh(G)
        if not (ev[-1] > 0 and ev[0] > config.PD_REL_TOL * ev[-1]):
            raise ValueError(
                f"gram is not positive definite (eigenvalues {ev[0]:.3e} .. {ev[-1]:.3e})")
        G.setflags(write=False)
        object.__setattr__(self, "gram", G)

    @property
    def dim(self):
        return self.gram.shape[0]

    @cached_property
    def chol(self):
        """Lower Cholesky factor L with gram = L L^H."""
        return np.linalg.cholesky(self.gram)

    def whiten(self, A):
        """Matrix of the endomorphism A in an H-orthonormal basis."""
        L = self.chol
        return L.conj().T @ A @ np.linalg.inv(L.conj().T)

    def unwhiten(self, B):
        L = self.chol
        return np.linalg.inv(L.conj().T) @ B @ L.conj().T

    def inner(self, x, y):
        return np.vdot(x, self.gram @ y)

    def to_json(self):
        return json.dumps({"dim": self.dim, "gram": _complex_rows(self.gram)})

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        return cls(_rows_complex(data["gram"]))

    @classmethod
    def identity(cls, dim):
        return cls(np.eye(dim))


@dataclass(frozen=True, eq=False)
class Filtration:
    """Decreasing filtration with strictly increasing jump values.

    Coincident jumps on input are merged (the larger subspace is kept) with a
    warning; unsorted input is sorted.
    """

    jumps: tuple
    subspaces: tuple

    def __post_init__(self):
        jumps = [float(j) for j in self.jumps]
        subs = [np.atleast_2d(np.array(S, dtype=complex)) for S in self.subspaces]
        if len(jumps) != len(subs) or not jumps:
            raise ValueError("need one subspace basis per jump")
        if not all(np.isfinite(jumps)):
            raise ValueError("jumps must be finite")
        dim = subs[0].shape[0]
        for S in subs:
            if S.shape[0] != dim:
                raise ValueError("subspace bases live in different ambient spaces")
            if S.shape[1] == 0 or _rank(S) != S.shape[1]:
                raise ValueError("degenerate filtration basis (not full column rank)")
        order = sorted(range(len(jumps)), key=lambda i: jumps[i])
        jumps = [jumps[i] for i in order]
        subs = [subs[i] for i in order]
        scale = max(1.0, max(abs(j) for j in jumps))
        merged_j, merged_s = [], []
        for j, S in zip(jumps, subs):
            if merged_j and abs(j - merged_j[-1]) <= config.JUMP_MERGE_TOL * scale:
                warnings.warn(f"coincident jump {j!r}: merging subspaces", stacklevel=3)
                if S.shape[1] > merged_s[-1].shape[1]:
                    merged_s[-1] = S
                continue
            merged_j.append(j)
            merged_s.append(S)
        if merged_s[0].shape[1] != dim:
            raise ValueError("lowest piece of the filtration must be the whole space")
        for a, b in zip(merged_s, merged_s[1:]):
            if b.shape[1] >= a.shape[1]:
                raise ValueError("subspace dimensions must strictly decrease")
            Qa = _orth(a)
            if np.linalg.norm(b - Qa @ (Qa.conj().T @ b)) > 1e-9 * max(1.0, np.linalg.norm(b)):
                raise ValueError("subspaces are not nested")
        for S in merged_s:
            S.setflags(write=False)
        object.__setattr__(self, "jumps", tuple(merged_j))
        object.__setattr__(self, "subspaces", tuple(merged_s))

    @property
    def dim(self):
        return self.subspaces[0].shape[0]

    @property
    def dims(self):
        return [S.shape[1] for S in self.subspaces]

    @cached_property
    def _orth_bases(self):
        return [_orth(S) for S in self.subspaces]

    def weight_spectrum(self):
        dims = self.dims + [0]
        w = []
        for lam, d0, d1 in zip(self.jumps, dims, dims[1:]):
            w.extend([lam] * (d0 - d1))
        return WeightSpectrum(tuple(w))

    def level(self, lam, tol=1e-12):
        """Orthonormal basis of the piece F_lam (left-continuous)."""
        scale = max(1.0, abs(lam))
        for i, j in enumerate(self.jumps):
            if j >= lam - tol * scale:
                return self._orth_bases[i]
        return np.zeros((self.dim, 0), dtype=complex)

    @classmethod
    def from_weighted_basis(cls, basis, weights):
        """F_lam = span of the basis vectors of weight >= lam."""
        basis = np.atleast_2d(np.array(basis, dtype=complex))
        weights = np.asarray(weights, dtype=float)
        if basis.shape[1] != weights.size or _rank(basis) != basis.shape[0]:
            raise ValueError("need a basis of the ambient space with one weight per vector")
        scale = max(1.0, float(np.max(np.abs(weights))))
        values = []
        for w in np.sort(weights):
            if not values or w - values[-1] > config.JUMP_MERGE_TOL * scale:
                values.append(float(w))
        subs = [basis[:, weights >= v - config.JUMP_MERGE_TOL * scale] for v in values]
        return cls(tuple(values), tuple(subs))

    @classmethod
    def coordinate(cls, weights):
        weights = np.asarray(weights, dtype=float)
        return cls.from_weighted_basis(np.eye(weights.size), weights)

    def to_json(self):
        return json.dumps({"jumps": list(self.jumps),
                           "subspaces": [_complex_rows(S) for S in self.subspaces]})

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        return cls(tuple(data["jumps"]), tuple(_rows_complex(S) for S in data["subspaces"]))


@dataclass(frozen=True)
class WeightSpectrum:
    weights: tuple

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        if list(w) != sorted(w):
            raise ValueError("weights must be sorted non-decreasing")
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True, eq=False)
class LinearSurjection:
    matrix: np.ndarray

    def __post_init__(self):
        p = np.atleast_2d(np.array(self.matrix, dtype=complex))
        if p.shape[0] > p.shape[1] or _rank(p) != p.shape[0]:
            raise ValueError("surjection must have full row rank")
        p.setflags(write=False)
        object.__setattr__(self, "matrix", p)

    @property
    def shape(self):
        return self.matrix.shape


def _complex_rows(M):
    M = np.atleast_2d(M)
    return [[[float(z.real), float(z.imag)] for z in row] for row in M]


def _rows_complex(rows):
    return np.array([[complex(re, im) for re, im in row] for row in rows])


def _as_surjection(p):
    return p if isinstance(p, LinearSurjection) else LinearSurjection(p)


# ---------------------------------------------------------------------------
# Adapted bases, weight operators, rays


def adapted_frame(H, F):
    """H-orthonormal basis adapted to F, with its weights (non-decreasing).

    Pieces are processed from the top of the filtration down; inside each
    graded piece the basis comes from Gram-Schmidt on the given spanning
    vectors in order, so the completion is deterministic.
    """
    if H.dim != F.dim:
        raise ValueError("dimension mismatch between product and filtration")
    Lh = H.chol.conj().T
    Q = np.zeros((H.dim, 0), dtype=complex)
    blocks = []
    dims = F.dims + [0]
    for i in range(len(F.jumps) - 1, -1, -1):
        need = dims[i] - dims[i + 1]
        W = Lh @ F.subspaces[i]
        new = []
        for c in W.T:
            v = c.copy()
            for _ in range(2):
                v = v - Q @ (Q.conj().T @ v)
            nv = np.linalg.norm(v)
            if nv > 1e-8 * max(np.linalg.norm(c), 1e-300):
                v = v / nv
                Q = np.column_stack([Q, v])
                new.append(v)
            if len(new) == need:
                break
        if len(new) != need:
            raise ValueError("degenerate filtration basis for this product")
        blocks.append((F.jumps[i], np.array(new).T))
    blocks.reverse()
    Qw = np.column_stack([b for _, b in blocks])
    weights = np.concatenate([[lam] * b.shape[1] for lam, b in blocks])
    E = sla.solve_triangular(Lh, Qw, lower=False)
    return E, weights


def adapted_basis(H, F):
    return adapted_frame(H, F)[0]


def weight_operator(H, F):
    """Operator with eigenvalue lam_i on the i-th adapted basis vector."""
    E, lam = adapted_frame(H, F)
    return (E * lam) @ (E.conj().T @ H.gram)


def geodesic_ray(H, F, s):
    """Product making exp(s lam_i / 2) e_i orthonormal."""
    s = float(s)
    if not np.isfinite(s):
        raise ValueError("s must be finite")
    if s == 0.0:
        return H
    E, lam = adapted_frame(H, F)
    GE = H.gram @ E
    G = (GE * np.exp(-s * lam)) @ GE.conj().T
    return HermitianProduct(0.5 * (G + G.conj().T))


def ray_log_velocity(H, F):
    """G^{-1} dG/ds along the ray; constant in s and equal to -A(H, F)."""
    return -weight_operator(H, F)


def geodesic_segment(H0, H1, s):
    """Point at parameter s on the symmetric-space geodesic from H0 to H1."""
    if H0.dim != H1.dim:
        raise ValueError("dimension mismatch")
    s = float(s)
    if s == 0.0:
        return H0
    if s == 1.0:
        return H1
    L = H0.chol
    Li = sla.solve_triangular(L, np.eye(H0.dim), lower=True)
    M = Li @ H1.gram @ Li.conj().T
    ev, U = np.linalg.eigh(0.5 * (M + M.conj().T))
    Ms = (U * ev**s) @ U.conj().T
    G = L @ Ms @ L.conj().T
    return HermitianProduct(0.5 * (G + G.conj().T))


# ---------------------------------------------------------------------------
# Non-Archimedean weights and domination


def na_weight(F, v, tol=1e-10):
    """sup{lam : v in F_lam}; +inf for the zero vector."""
    v = np.asarray(v, dtype=complex).ravel()
    nv = np.linalg.norm(v)
    if nv == 0:
        return np.inf
    bases = F._orth_bases
    for i in range(len(F.jumps) - 1, -1, -1):
        Q = bases[i]
        if np.linalg.norm(v - Q @ (Q.conj().T @ v)) <= tol * nv:
            return F.jumps[i]
    return F.jumps[0]


def dominates(F1, F2, tol=1e-9):
    """True iff w_F1 <= w_F2 everywhere, i.e. F1_lam is inside F2_lam for all lam."""
    if F1.dim != F2.dim:
        raise ValueError("filtrations on different spaces")
    for lam in sorted(set(F1.jumps) | set(F2.jumps)):
        Q1 = F1.level(lam)
        Q2 = F2.level(lam)
        if Q1.shape[1] == 0:
            continue
        if Q1.shape[1] > Q2.shape[1]:
            return False
        if np.linalg.norm(Q1 - Q2 @ (Q2.conj().T @ Q1)) > tol:
            return False
    return True


# ---------------------------------------------------------------------------
# Quotients


def quotient_metric(H, p):
    """Gram of the quotient norm inf{|g| : p g = f}, i.e. (p G^-1 p^H)^-1."""
    p = _as_surjection(p).matrix
    if p.shape[1] != H.dim:
        raise ValueError("surjection does not start from the product's space")
    X = np.linalg.solve(H.gram, p.conj().T)
    G = np.linalg.inv(p @ X)
    return HermitianProduct(0.5 * (G + G.conj().T))


def adjoint_section(H, p):
    """The H-adjoint p^*: Q -> V, a right inverse of p onto ker(p)^perp."""
    p = _as_surjection(p).matrix
    X = np.linalg.solve(H.gram, p.conj().T)
    return X @ np.linalg.inv(p @ X)


def quotient_filtration(F, p):
    """Image filtration: the weight of f is the max weight of its preimages."""
    p = _as_surjection(p).matrix
    if p.shape[1] != F.dim:
        raise ValueError("surjection does not start from the filtration's space")
    jumps, subs = [], []
    for lam, S in zip(F.jumps, F.subspaces):
        img = _orth(p @ S)
        if img.shape[1] == 0:
            break
        if subs and img.shape[1] == subs[-1].shape[1]:
            jumps[-1], subs[-1] = lam, img
        else:
            jumps.append(lam)
            subs.append(img)
    return Filtration(tuple(jumps), tuple(subs))


def restrict_operator(A, p, H):
    """A|_Q = p A p^*, with p^* the H-adjoint section."""
    _check_self_adjoint(A, H)
    p = _as_surjection(p)
    return p.matrix @ A @ adjoint_section(H, p)


def _check_self_adjoint(A, H):
    A = np.asarray(A)
    GA = H.gram @ A
    if np.max(np.abs(GA - GA.conj().T)) > 1e-8 * _scale(GA):
        raise ValueError("operator is not Hermitian with respect to the product")


# ---------------------------------------------------------------------------
# Symmetric powers


def multi_indices(d, l):
    """Exponent vectors of degree-l monomials in d variables.

    Order: x_1^l, x_1^{l-1} x_2, ..., x_d^l (reverse lexicographic on
    exponents), matching ``itertools.combinations_with_replacement``.
    """
    out = np.zeros((comb(d + l - 1, l), d), dtype=np.int64)
    for row, c in enumerate(itertools.combinations_with_replacement(range(d), l)):
        for i in c:
            out[row, i] += 1
    return out


def sym_dim(d, l):
    return comb(d + l - 1, l)


def _check_cap(d, l, cap=config.SYM_DIM_CAP):
    N = sym_dim(d, l)
    if N > cap:
        raise ValueError(f"dim Sym^{l} of a {d}-dimensional space is {N} > cap {cap}")
    return N


def _monomial_index(expo):
    return {tuple(int(v) for v in e): i for i, e in enumerate(expo)}


def induced_sym_map(M, l):
    """Matrix of Sym^l(M) on monomial coefficient vectors.

    Column beta holds the expansion of prod_j (M e_j)^{beta_j}.
    """
    M = np.asarray(M, dtype=complex)
    d_out, d_in = M.shape
    _check_cap(d_in, l)
    _check_cap(d_out, l)
    cols = list(itertools.combinations_with_replacement(range(d_in), l))
    J = np.array(cols, dtype=np.int64).reshape(len(cols), l)
    P = np.ones((1, len(cols)), dtype=complex)
    expo_prev = np.zeros((1, d_out), dtype=np.int64)
    for m in range(l):
        expo_next = multi_indices(d_out, m + 1)
        index = _monomial_index(expo_next)
        Pn = np.zeros((len(expo_next), len(cols)), dtype=complex)
        factor = M[:, J[:, m]]                      # (d_out, ncols)
        for i in range(d_out):
            target = []
            for e in expo_prev:
                e2 = e.copy()
                e2[i] += 1
                target.append(index[tuple(int(v) for v in e2)])
            Pn[np.array(target)] += P * factor[i][None, :]
        P, expo_prev = Pn, expo_next
    return P


def _sym_standard_weights(d, l):
    expo = multi_indices(d, l)
    fact = np.array([np.prod([factorial(int(a)) for a in e]) for e in expo], dtype=float)
    return fact / factorial(l)


def sym_metric(H, l):
    """Gram of Sym^l H on the monomial basis.

    For an H-orthonormal basis v_i the vectors sqrt(l!/alpha!) v^alpha are
    orthonormal.
    """
    if l < 1:
        raise ValueError("l must be >= 1")
    if l == 1:
        return H
    _check_cap(H.dim, l)
    S = induced_sym_map(H.chol.conj().T, l)
    D = _sym_standard_weights(H.dim, l)
    G = S.conj().T @ (D[:, None] * S)
    return HermitianProduct(0.5 * (G + G.conj().T))


def sym_operator(A, l, H=None):
    """Derivation induced by A on Sym^l; eigenvalues alpha . lambda."""
    A = np.asarray(A, dtype=complex)
    if H is not None:
        _check_self_adjoint(A, H)
    elif np.max(np.abs(A - A.conj().T)) > 1e-8 * _scale(A):
        raise ValueError("operator is not Hermitian")
    d = A.shape[0]
    _check_cap(d, l)
    expo = multi_indices(d, l)
    index = _monomial_index(expo)
    N = len(expo)
    out = np.zeros((N, N), dtype=complex)
    for col, beta in enumerate(expo):
        for j in np.nonzero(beta)[0]:
            for i in range(d):
                if A[i, j] == 0:
                    continue
                e = beta.copy()
                e[j] -= 1
                e[i] += 1
                out[index[tuple(int(v) for v in e)], col] += beta[j] * A[i, j]
    return out


def sym_filtration(F, l):
    """Sym^l F: the monomial v^alpha in an adapted basis has weight alpha . lambda."""
    if l < 1:
        raise ValueError("l must be >= 1")
    if l == 1:
        return F
    E, lam = adapted_frame(HermitianProduct.identity(F.dim), F)
    _check_cap(F.dim, l)
    expo = multi_indices(F.dim, l)
    basis = induced_sym_map(E, l)
    return Filtration.from_weighted_basis(basis, expo @ lam)


# ---------------------------------------------------------------------------
# Norms and orders


def trace_abs_norm(A, H):
    """tr|A| computed with respect to H (sum of singular values after whitening)."""
    A = np.asarray(A, dtype=complex)
    if not np.any(A):
        return 0.0
    return float(np.sum(np.linalg.svd(H.whiten(A), compute_uv=False)))


def operator_norm(A, H):
    A = np.asarray(A, dtype=complex)
    if not np.any(A):
        return 0.0
    return float(np.linalg.svd(H.whiten(A), compute_uv=False)[0])


def loewner_gap(A, B, H):
    """Smallest eigenvalue of B - A for operators self-adjoint w.r.t. H.

    A <= B in the H-Loewner order iff the result is >= 0.
    """
    C = H.whiten(np.asarray(B) - np.asarray(A))
    return float(np.linalg.eigvalsh(0.5 * (C + C.conj().T))[0])


def gram_gap(H1, H2):
    """Smallest eigenvalue of gram(H1) - gram(H2); >= 0 iff H1 >= H2."""
    G1 = H1.gram if isinstance(H1, HermitianProduct) else np.asarray(H1)
    G2 = H2.gram if isinstance(H2, HermitianProduct) else np.asarray(H2)
    D = G1 - G2
    return float(np.linalg.eigvalsh(0.5 * (D + D.conj().T))[0])


def spectrum(A, H):
    """Real spectrum of an H-self-adjoint operator, ascending."""
    C = H.whiten(np.asarray(A, dtype=complex))
    return np.linalg.eigvalsh(0.5 * (C + C.conj().T))
