import json
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wzwlab import flagcore as fc
from wzwlab import suites

from conftest import seeds

I2 = fc.HermitianProduct.identity(2)


def _diag_flag(a, b):
    # 1-dim piece span(e1 + e2) with weight b, whole space weight a
    return fc.Filtration((a, b), (np.eye(2), np.array([[1.0], [1.0]])))


# --- types ----------------------------------------------------------------


def test_product_rejects_non_hermitian_and_indefinite():
    with pytest.raises(ValueError):
        fc.HermitianProduct(np.array([[1.0, 1.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        fc.HermitianProduct(np.diag([1.0, -1.0]))
    with pytest.raises(ValueError):
        fc.HermitianProduct(np.diag([1.0, 1e-14]))


def test_product_json_roundtrip():
    H = fc.HermitianProduct(np.array([[2.0, 1j], [-1j, 3.0]]))
    H2 = fc.HermitianProduct.from_json(H.to_json())
    assert np.array_equal(H.gram, H2.gram)
    assert json.loads(H.to_json())["gram"][0][1] == [0.0, 1.0]


def test_filtration_validation_and_merge():
    with pytest.raises(ValueError):
        fc.Filtration((0.0, 1.0), (np.eye(2)[:, :1], np.eye(2)))
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        F = fc.Filtration((0.0, 1.0, 1.0), (np.eye(3), np.eye(3)[:, 1:], np.eye(3)[:, 2:]))
    assert w and F.jumps == (0.0, 1.0) and F.dims == [3, 2]


def test_filtration_json_roundtrip():
    F = _diag_flag(0.0, 1.0)
    G = fc.Filtration.from_json(F.to_json())
    assert G.jumps == F.jumps and G.dims == F.dims


def test_surjection_rank():
    with pytest.raises(ValueError):
        fc.LinearSurjection(np.array([[1.0, 1.0], [2.0, 2.0]]))


# --- adapted bases and weight operators ------------------------------------


def test_adapted_basis_examples():
    assert np.allclose(fc.adapted_basis(I2, fc.Filtration.coordinate([0, 1])), np.eye(2))
    B = fc.adapted_basis(I2, _diag_flag(0.0, 1.0))
    # Gram-Schmidt oracle: top piece first, then its orthogonal complement
    v1 = np.array([1, 1]) / np.sqrt(2)
    v2 = np.array([1, -1]) / np.sqrt(2)
    cols = {tuple(np.round(np.abs(c), 12)) for c in B.T}
    assert cols == {tuple(np.round(np.abs(v1), 12)), tuple(np.round(np.abs(v2), 12))}
    B = fc.adapted_basis(fc.HermitianProduct(np.diag([4.0, 1.0])), fc.Filtration.coordinate([0, 1]))
    assert np.allclose(np.abs(B), np.diag([0.5, 1.0]))


def test_weight_operator_examples():
    F = fc.Filtration((2.5,), (np.eye(3),))
    assert np.allclose(fc.weight_operator(fc.HermitianProduct.identity(3), F), 2.5 * np.eye(3))
    assert np.allclose(fc.weight_operator(I2, _diag_flag(0.0, 1.0)), 0.5 * np.ones((2, 2)))


@given(seeds(), st.integers(1, 6))
def test_weight_spectrum_identity(rng, d):
    H, F = suites.rand_product(rng, d), suites.rand_filtration(rng, d)
    ev = fc.spectrum(fc.weight_operator(H, F), H)
    assert np.allclose(ev, F.weight_spectrum().weights, atol=1e-9)


@given(seeds(), st.integers(1, 5))
def test_completion_independence(rng, d):
    # different bases of the same filtration give the same operator
    H = suites.rand_product(rng, d)
    w = suites.rand_weights(rng, d)
    B = suites.rand_matrix(rng, d, d)
    F1 = fc.Filtration.from_weighted_basis(B, w)
    # mix each vector with vectors of weight >= its own
    B2 = B.copy()
    for i in range(d):
        up = [j for j in range(d) if w[j] >= w[i]]
        B2[:, i] = B[:, up] @ suites.rand_matrix(rng, len(up), 1)[:, 0]
    if np.linalg.matrix_rank(B2) < d:
        return
    F2 = fc.Filtration.from_weighted_basis(B2, w)
    assert np.allclose(fc.weight_operator(H, F1), fc.weight_operator(H, F2), atol=1e-8)


# --- rays and segments ------------------------------------------------------


def test_ray_examples():
    F = fc.Filtration.coordinate([0.0, 1.0, 3.0])
    H = fc.HermitianProduct.identity(3)
    assert fc.geodesic_ray(H, F, 0.0) is H
    s = 0.7
    assert np.allclose(fc.geodesic_ray(H, F, s).gram, np.diag(np.exp(-s * np.array([0, 1, 3]))))


@given(seeds(), st.integers(1, 5), st.floats(0, 3), st.floats(0, 3))
def test_ray_semigroup(rng, d, s, t):
    H, F = suites.rand_product(rng, d), suites.rand_filtration(rng, d)
    a = fc.geodesic_ray(fc.geodesic_ray(H, F, s), F, t).gram
    b = fc.geodesic_ray(H, F, s + t).gram
    assert np.max(np.abs(a - b)) <= 1e-10 * max(1.0, np.max(np.abs(b)))


def test_segment_examples():
    H0 = fc.HermitianProduct.identity(2)
    H1 = fc.HermitianProduct(np.diag([np.exp(-2.0), 1.0]))
    assert fc.geodesic_segment(H0, H1, 0.0) is H0
    assert fc.geodesic_segment(H0, H1, 1.0) is H1
    assert np.allclose(fc.geodesic_segment(H0, H1, 0.5).gram, np.diag([np.exp(-1.0), 1.0]))
    with pytest.raises(ValueError):
        fc.geodesic_segment(H0, fc.HermitianProduct.identity(3), 0.5)


@given(seeds(), st.integers(1, 5), st.floats(0.01, 0.99))
def test_segment_follows_ray(rng, d, s):
    H, F = suites.rand_product(rng, d), suites.rand_filtration(rng, d)
    T = 2.0
    a = fc.geodesic_segment(H, fc.geodesic_ray(H, F, T), s).gram
    b = fc.geodesic_ray(H, F, s * T).gram
    assert np.allclose(a, b, atol=1e-9 * max(1.0, np.max(np.abs(b))))


# --- weights and domination -------------------------------------------------


def test_na_weight_examples():
    F = fc.Filtration.coordinate([0.0, 1.0])
    assert fc.na_weight(F, np.zeros(2)) == np.inf
    assert fc.na_weight(F, [0, 1]) == 1.0
    assert fc.na_weight(F, [1, 1]) == 0.0


def test_na_weight_axioms(rng):
    F = suites.rand_filtration(rng, 4)
    for _ in range(50):
        u, v = suites.rand_matrix(rng, 4, 1)[:, 0], suites.rand_matrix(rng, 4, 1)[:, 0]
        c = complex(*rng.standard_normal(2))
        assert fc.na_weight(F, c * u) == pytest.approx(fc.na_weight(F, u))
        assert fc.na_weight(F, u + v) >= min(fc.na_weight(F, u), fc.na_weight(F, v)) - 1e-12


def test_dominates_examples():
    F = suites.rand_filtration(np.random.default_rng(1), 3)
    assert fc.dominates(F, F)
    a, b = fc.Filtration.coordinate([0, 1]), fc.Filtration.coordinate([0, 2])
    assert fc.dominates(a, b) and not fc.dominates(b, a)


# --- quotients ----------------------------------------------------------------


def test_quotient_metric_examples():
    H = fc.HermitianProduct(np.array([[2.0, 0.5], [0.5, 1.0]]))
    assert np.allclose(fc.quotient_metric(H, np.eye(2)).gram, H.gram)
    assert np.allclose(fc.quotient_metric(I2, [[1.0, 0.0]]).gram, [[1.0]])
    assert np.allclose(fc.quotient_metric(I2, [[1.0, 1.0]]).gram, [[0.5]])
    with pytest.raises(ValueError):
        fc.quotient_metric(I2, [[1.0, 1.0], [1.0, 1.0]])


@given(seeds(), st.integers(2, 5))
def test_quotient_metric_is_minimal_norm(rng, d):
    # brute-force oracle: norm of the minimal preimage by least squares
    H = suites.rand_product(rng, d)
    q = int(rng.integers(1, d))
    p = suites.rand_surjection(rng, q, d)
    f = suites.rand_matrix(rng, q, 1)[:, 0]
    L = H.chol
    # minimize |L^H g| subject to p g = f: g = L^-H y with (p L^-H) y = f
    M = p @ np.linalg.inv(L.conj().T)
    y = np.linalg.lstsq(M, f, rcond=None)[0]
    QH = fc.quotient_metric(H, p)
    assert np.real(f.conj() @ QH.gram @ f) == pytest.approx(np.linalg.norm(y) ** 2, rel=1e-8)


def test_quotient_filtration_examples():
    F = suites.rand_filtration(np.random.default_rng(2), 3)
    G = fc.quotient_filtration(F, np.eye(3))
    assert G.jumps == F.jumps and G.dims == F.dims
    G = fc.quotient_filtration(fc.Filtration.coordinate([0.0, 1.0]), [[0.0, 1.0]])
    assert G.jumps == (1.0,)


@given(seeds(), st.integers(2, 6))
def test_quotient_jumps_subset(rng, d):
    F = suites.rand_filtration(rng, d)
    q = int(rng.integers(1, d))
    G = fc.quotient_filtration(F, suites.rand_surjection(rng, q, d))
    assert set(G.jumps) <= set(F.jumps)
    assert sum(1 for _ in G.weight_spectrum().weights) == q


def test_adjoint_section_is_right_inverse(rng):
    H = suites.rand_product(rng, 4)
    p = suites.rand_surjection(rng, 2, 4)
    assert np.allclose(p @ fc.adjoint_section(H, p), np.eye(2))


def test_restrict_operator_examples():
    A = fc.weight_operator(I2, fc.Filtration.coordinate([0, 1]))
    assert np.allclose(fc.restrict_operator(A, np.eye(2), I2), A)
    p = np.array([[1.0, 1.0]]) / np.sqrt(2)
    assert np.allclose(fc.restrict_operator(np.diag([1.0, 0.0]), p, I2), [[0.5]])


# --- symmetric powers ---------------------------------------------------------


def test_multi_index_order():
    assert fc.multi_indices(2, 2).tolist() == [[2, 0], [1, 1], [0, 2]]
    assert fc.sym_dim(3, 2) == 6


def test_sym_metric_examples():
    assert np.allclose(fc.sym_metric(I2, 2).gram, np.diag([1.0, 0.5, 1.0]))
    H = fc.HermitianProduct(np.diag([2.0, 3.0]))
    assert fc.sym_metric(H, 1) is H or np.allclose(fc.sym_metric(H, 1).gram, H.gram)
    assert np.allclose(fc.sym_metric(H, 2).gram, np.diag([4.0, 3.0, 9.0]))


@given(seeds(), st.integers(1, 3), st.integers(1, 3))
def test_sym_metric_orthonormal_monomials(rng, d, l):
    # sqrt(l!/alpha!) v^alpha is orthonormal for an H-orthonormal basis v
    from math import factorial
    H = suites.rand_product(rng, d)
    V = np.linalg.inv(H.chol.conj().T)           # columns H-orthonormal
    S = fc.induced_sym_map(V, l)
    expo = fc.multi_indices(d, l)
    c = np.array([np.sqrt(factorial(l) / np.prod([factorial(int(a)) for a in e])) for e in expo])
    M = (S * c).conj().T @ fc.sym_metric(H, l).gram @ (S * c)
    assert np.allclose(M, np.eye(len(expo)), atol=1e-9)


def test_sym_operator_examples(rng):
    assert np.allclose(fc.sym_operator(np.eye(3), 2), 2 * np.eye(6))
    assert np.allclose(fc.sym_operator(np.diag([1.0, 0.0]), 2), np.diag([2.0, 1.0, 0.0]))
    A = suites.rand_matrix(rng, 3, 3)
    A = A + A.conj().T
    for l in (1, 2, 3):
        assert np.trace(fc.sym_operator(A, l)) == pytest.approx(
            l * np.trace(A) * fc.sym_dim(3, l) / 3)


def test_sym_operator_rejects_non_hermitian():
    with pytest.raises(ValueError):
        fc.sym_operator(np.array([[0.0, 1.0], [0.0, 0.0]]), 2)


def test_sym_filtration_examples(rng):
    F = fc.Filtration((1.5,), (np.eye(2),))
    assert fc.sym_filtration(F, 3).jumps == (4.5,)
    S = fc.sym_filtration(fc.Filtration.coordinate([0.0, 1.0]), 2)
    assert S.jumps == (0.0, 1.0, 2.0) and S.dims == [3, 2, 1]
    F = suites.rand_filtration(rng, 3)
    E, lam = fc.adapted_frame(fc.HermitianProduct.identity(3), F)
    S = fc.sym_filtration(F, 2)
    basis = fc.induced_sym_map(E, 2)
    for e, col in zip(fc.multi_indices(3, 2), basis.T):
        assert fc.na_weight(S, col) == pytest.approx(float(e @ lam))


def test_sym_cap():
    with pytest.raises(ValueError):
        fc.sym_metric(fc.HermitianProduct.identity(40), 5)


# --- norms ------------------------------------------------------------------


def test_trace_norm_examples():
    assert fc.trace_abs_norm(np.zeros((2, 2)), I2) == 0.0
    assert fc.trace_abs_norm(np.diag([1.0, -2.0]), I2) == pytest.approx(3.0)


@given(seeds(), st.integers(1, 6))
def test_trace_norm_triangle(rng, d):
    H = suites.rand_product(rng, d)
    A, B = suites.rand_matrix(rng, d, d), suites.rand_matrix(rng, d, d)
    assert fc.trace_abs_norm(A + B, H) <= fc.trace_abs_norm(A, H) + fc.trace_abs_norm(B, H) + 1e-10


@given(seeds(), st.integers(1, 6))
def test_trace_norm_matches_eigen_oracle(rng, d):
    # for H-self-adjoint A the trace norm is the sum of |eigenvalues|
    H, F = suites.rand_product(rng, d), suites.rand_filtration(rng, d)
    A = fc.weight_operator(H, F)
    assert fc.trace_abs_norm(A, H) == pytest.approx(np.sum(np.abs(np.linalg.eigvals(A))), rel=1e-9,
                                                    abs=1e-12)


# --- suite properties (smaller counts than the CLI run) -------------------


@pytest.mark.parametrize("name", list(suites.FLAG_PROPERTIES))
def test_flag_property_sample(name):
    fn = suites.FLAG_PROPERTIES[name]
    for i in range(60):
        out = fn(np.random.default_rng([7, i]), 6)
        assert out.ok, (name, i, out)
