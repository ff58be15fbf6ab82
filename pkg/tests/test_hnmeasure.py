from itertools import product
from math import factorial

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wzwlab import hnmeasure as hm


def _w1_grid(m1, m2, n=400_001):
    # oracle: Riemann sum of |F1 - F2| on a fine grid
    lo = min(m1.support[0], m2.support[0]) - 1e-9
    hi = max(m1.support[1], m2.support[1]) + 1e-9
    x = np.linspace(lo, hi, n)

    def cdf(m, x):
        if isinstance(m, hm.DiscreteMeasure):
            loc, w = np.asarray(m.locations), np.asarray(m.weights)
            return (x[:, None] >= loc[None, :]) @ w
        return m.cdf(x)
    return float(np.trapezoid(np.abs(cdf(m1, x) - cdf(m2, x)), x))


def _hh_brute(degrees, k):
    # oracle: enumerate all exponents of Sym^k by brute force
    r = len(degrees)
    h0 = h1 = 0
    for alpha in product(range(k + 1), repeat=r):
        if sum(alpha) != k:
            continue
        d = int(np.dot(alpha, degrees))
        h0 += max(d + 1, 0)
        h1 += max(-d - 1, 0)
    c = factorial(r) / k**r
    return c * h0, c * h1


# --- types and validation -----------------------------------------------------


def test_slope_vector_validation():
    with pytest.raises(ValueError):
        hm.SlopeVector((1.0, 0.0))
    with pytest.raises(ValueError):
        hm.SlopeVector((0.0, np.nan))


def test_discrete_measure_validation():
    with pytest.raises(ValueError):
        hm.DiscreteMeasure((0.0, 1.0), (0.6, 0.6))
    m = hm.DiscreteMeasure((1.0, 0.0), (0.25, 0.75))
    assert m.atoms == [(0.0, 0.75), (1.0, 0.25)]


def test_split_sym_slopes_examples():
    assert hm.split_sym_slopes((0, 1), 1).slopes == (0.0, 1.0)
    assert hm.split_sym_slopes((0, 1), 2).slopes == (0.0, 1.0, 2.0)
    assert hm.split_sym_slopes((0, 0, 0), 3).slopes == (0.0,) * 10
    with pytest.raises(ValueError):
        hm.split_sym_slopes((), 1)
    with pytest.raises(ValueError):
        hm.split_sym_slopes((0, 1, 2), 500)


def test_eta_k_examples():
    m = hm.eta_k(hm.split_sym_slopes((0, 1), 2), 2)
    assert m.atoms == [(0.0, 1 / 3), (0.5, 1 / 3), (1.0, 1 / 3)]
    with pytest.raises(ValueError):
        hm.eta_k((), 1)


# --- limiting measure -----------------------------------------------------------


def test_limit_density_and_cdf():
    m = hm.eta_limit((0, 1))
    assert np.allclose(m.density([0.2, 0.7]), 1.0)
    assert m.cdf(0.3) == pytest.approx(0.3)
    m = hm.eta_limit((0, 1, 2))
    # order-3 B-spline on knots 0, 1, 2: density 1 - |x - 1|
    x = np.array([0.25, 1.0, 1.5])
    assert np.allclose(m.density(x), 1 - np.abs(x - 1))
    assert hm.eta_limit((3, 3)).is_point_mass


@given(st.lists(st.integers(-3, 3), min_size=2, max_size=5))
def test_limit_cdf_matches_monte_carlo(degrees):
    m = hm.eta_limit(degrees)
    if m.is_point_mass:
        return
    xs = m.sample(40_000, np.random.default_rng(3))
    for q in np.linspace(*m.support, 7)[1:-1]:
        emp = np.mean(xs <= q)
        assert abs(emp - float(m.cdf(q))) <= 5 * np.sqrt(0.25 / xs.size)


# --- moments ---------------------------------------------------------------------


def test_moment_examples():
    assert hm.moment(hm.eta_limit((0, 1)), 2) == pytest.approx(1 / 3)
    assert hm.moment(hm.eta_limit((2, 2)), 5) == pytest.approx(32.0)
    with pytest.raises(ValueError):
        hm.moment(hm.eta_limit((0, 1)), 13)


@pytest.mark.parametrize("degrees", [(0, 1), (-1, 1), (0, 1, 2), (-2, 0, 1, 3)])
@pytest.mark.parametrize("p", [1, 2, 3])
def test_moment_vs_monte_carlo(degrees, p):
    m = hm.eta_limit(degrees)
    mean, se = hm.moment_mc(m, p, n=200_000, seed=11)
    assert abs(hm.moment(m, p) - mean) <= 4 * se + 1e-12


def test_first_moment_is_mean_degree():
    for k in (1, 3, 8):
        m = hm.eta_k(hm.split_sym_slopes((0, 1, 2, 5), k), k)
        assert hm.moment(m, 1) == pytest.approx(2.0)


def test_abs_moment_examples():
    m = hm.eta_limit((0, 1))
    assert hm.abs_moment(m, 0.5) == pytest.approx(0.25)
    assert hm.abs_moment(m, -1.0) == pytest.approx(1.5)
    assert hm.abs_moment(hm.eta_limit((-1, 1)), 0.0) == pytest.approx(0.5)
    assert hm.abs_moment(hm.DiscreteMeasure((0.0, 1.0), (0.5, 0.5)), 0.5) == 0.5


@pytest.mark.parametrize("degrees", [(0, 1, 2), (-1, 0, 0, 2), (0, 0, 1, 1, 3)])
@pytest.mark.parametrize("t", [-0.5, 0.3, 1.0])
def test_abs_moment_vs_monte_carlo(degrees, t):
    m = hm.eta_limit(degrees)
    mean, se = hm.abs_moment_mc(m, t, n=200_000, seed=5)
    assert abs(hm.abs_moment(m, t) - mean) <= 4 * se


@given(st.lists(st.integers(-3, 3), min_size=2, max_size=4), st.floats(-4, 4), st.floats(-4, 4))
def test_abs_moment_lipschitz_and_convex(degrees, t1, t2):
    m = hm.eta_limit(degrees)
    f1, f2 = hm.abs_moment(m, t1), hm.abs_moment(m, t2)
    assert abs(f1 - f2) <= abs(t1 - t2) + 1e-9
    fm = hm.abs_moment(m, 0.5 * (t1 + t2))
    assert fm <= 0.5 * (f1 + f2) + 1e-9
    assert f1 >= abs(hm.moment(m, 1) - t1) - 1e-9


# --- Wasserstein distance -----------------------------------------------------------


def test_w1_examples():
    a = hm.DiscreteMeasure((0.0,), (1.0,))
    b = hm.DiscreteMeasure((1.5,), (1.0,))
    assert hm.wasserstein1(a, b) == pytest.approx(1.5)
    m = hm.eta_limit((0, 1))
    assert hm.wasserstein1(m, m) == 0.0
    # atom at 1/2 against the uniform law: 1/4
    assert hm.wasserstein1(hm.DiscreteMeasure((0.5,), (1.0,)), m) == pytest.approx(0.25)


@pytest.mark.parametrize("degrees,k", [((0, 1), 3), ((-1, 1), 5), ((0, 1, 2), 4), ((0, 2, 3), 2)])
def test_w1_vs_grid_oracle(degrees, k):
    ek = hm.eta_k(hm.split_sym_slopes(degrees, k), k)
    lim = hm.eta_limit(degrees)
    assert hm.wasserstein1(ek, lim) == pytest.approx(_w1_grid(ek, lim), abs=2e-6)


@pytest.mark.parametrize("degrees", [(0, 1), (-1, 1), (0, 1, 2)])
def test_w1_rate(degrees):
    lim = hm.eta_limit(degrees)
    for k in (1, 2, 4, 8, 16, 32, 64):
        ek = hm.eta_k(hm.split_sym_slopes(degrees, k), k)
        assert hm.wasserstein1(ek, lim) <= 1.0 / k


@given(st.lists(st.integers(-2, 2), min_size=2, max_size=4), st.integers(1, 12))
def test_w1_symmetric_and_bounded(degrees, k):
    ek = hm.eta_k(hm.split_sym_slopes(degrees, k), k)
    lim = hm.eta_limit(degrees)
    d = hm.wasserstein1(ek, lim)
    assert d == pytest.approx(hm.wasserstein1(lim, ek), abs=1e-12)
    # first moments agree, and |x - t| is 1-Lipschitz
    for t in (-1.0, 0.0, 0.7):
        assert abs(hm.abs_moment(ek, t) - hm.abs_moment(lim, t)) <= d + 1e-9


# --- functional-level values -------------------------------------------------------------


def test_rhs_examples():
    assert hm.rhs_main_theorem((0, 0), 0.5) == pytest.approx(1.0)
    assert hm.rhs_main_theorem((1, 0), 0.5) == pytest.approx(0.5)
    assert hm.rhs_main_theorem((-1, 1), 0.0) == pytest.approx(1.0)


def test_hhat0_formula_examples():
    assert hm.hhat0_formula((1, 0)) == pytest.approx(1.0)
    assert hm.hhat0_formula((-1, 1)) == pytest.approx(0.5)
    assert hm.hhat0_formula((0, 0)) == pytest.approx(0.0)


@pytest.mark.parametrize("degrees", [(1, 0), (-1, 1), (0, 1, 2), (-2, 1, 1)])
def test_hhat_exact_vs_brute_force(degrees):
    h0, h1 = hm.hhat_exact(degrees, 0, 12), hm.hhat_exact(degrees, 1, 12)
    for k in range(1, 13):
        b0, b1 = _hh_brute(degrees, k)
        assert h0[k - 1] == pytest.approx(b0) and h1[k - 1] == pytest.approx(b1)


def test_hhat_exact_values():
    assert hm.hhat_exact((1, 0), 0, 100)[-1] == pytest.approx(1.0302)
    # (1, 0): error is exactly 3/k + 2/k^2
    k = np.arange(1, 201)
    assert np.allclose(hm.hhat_exact((1, 0), 0, 200) - 1.0, 3 / k + 2 / k**2)
    with pytest.raises(ValueError):
        hm.hhat_exact((1, 0), 2, 3)


def test_riemann_roch_difference():
    # h0 - h1 is the Euler characteristic; its leading term is the degree sum
    for degrees in ((1, 0), (-1, 1), (2, -1)):
        k = np.arange(1, 101)
        diff = hm.hhat_exact(degrees, 0, 100) - hm.hhat_exact(degrees, 1, 100)
        assert np.all(np.abs(diff - sum(degrees)) <= 5 / k + 1e-12)


def test_convergence_table_columns(tmp_path):
    rows = hm.convergence_table((0, 1), [1, 2, 4])
    assert [r["k"] for r in rows] == [1, 2, 4]
    assert all(r["moment1"] == pytest.approx(0.5) for r in rows)
    hm.write_csv(tmp_path / "t.csv", rows)
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == \
        "k,moment1,wasserstein1,hhat0_partial,hhat1_partial"
