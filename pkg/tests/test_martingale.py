import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seqlimits import maps, martingale
from seqlimits.transfer import IntervalSystem, PulledBack

from conftest import interval_seq

V = maps.TrigObservable(cos=((1, 0.2),))


def doubling_with(obs, G=1024):
    return PulledBack(IntervalSystem(interval_seq(maps.doubling(), obs=obs), G))


def test_zero_observable():
    sys = doubling_with(maps.TrigObservable())
    dec = martingale.decompose(sys, (0, 20))
    assert max(np.abs(u).max() for u in dec.u) == 0 and max(np.abs(M).max() for M in dec.M) == 0


def test_doubling_cos_is_martingale(doubling_sys):
    dec = martingale.decompose(doubling_sys, (0, 30))
    assert dec.sup_u < 1e-10
    for k, M in enumerate(dec.M):
        np.testing.assert_allclose(M, dec.ftilde[k], atol=1e-10)


def test_coboundary_decomposition():
    sys = doubling_with(maps.CoboundaryObservable(V))
    dec = martingale.decompose(sys, (0, 30))
    v = V(sys.nodes(0))
    # u_j = +v for j >= 1; M_0 = -v (the initial term), M_j = 0 afterwards
    for u in dec.u[1:]:
        np.testing.assert_allclose(u, v, atol=1e-12)
    assert max(np.abs(M).max() for M in dec.M[1:]) < 1e-8
    assert dec.martingale_residual < 1e-8 and dec.reconstruction_residual < 1e-10


def test_series_matches_recursion(mixed_sys):
    a = martingale.decompose(mixed_sys, (0, 40))
    b = martingale.decompose(mixed_sys, (0, 40), tail_tol=1e-12)
    assert max(np.abs(x - y).max() for x, y in zip(a.u[5:], b.u[5:])) < 1e-9


@pytest.mark.parametrize("fixture", ["doubling_sys", "mixed_sys"])
def test_martingale_property(request, fixture):
    sys = request.getfixturevalue(fixture)
    dec = martingale.decompose(sys, (0, 60))
    assert dec.martingale_residual < 1e-8 and dec.reconstruction_residual < 1e-10


def test_dichotomy_coboundary():
    sys = doubling_with(maps.CoboundaryObservable(V))
    r = martingale.variance_dichotomy(sys, 2000)
    assert r["verdict"] == "bounded"
    assert r["var_s"].max() <= 4 * 0.2 ** 2


def test_dichotomy_doubling(doubling_sys):
    r = martingale.variance_dichotomy(doubling_sys, 1000)
    assert r["verdict"] == "divergent"
    np.testing.assert_allclose(r["var_s"], np.arange(1, 1001) / 2, atol=1e-6)


def test_dichotomy_mixture_slope():
    sys = doubling_with(maps.CoboundaryObservable(V, maps.TrigObservable(cos=((1, 0.1),))))
    r = martingale.variance_dichotomy(sys, 1000)
    assert r["verdict"] == "divergent" and r["slope"] == pytest.approx(0.005, rel=1e-3)


def test_exact_variance_examples(doubling_sys, rademacher):
    const = doubling_with(maps.TrigObservable(const=3.0))
    assert martingale.exact_variance(const, 0, 50) == pytest.approx(0.0, abs=1e-20)
    assert martingale.exact_variance(doubling_sys, 0, 100) == pytest.approx(50.0, abs=1e-6)
    assert martingale.exact_variance(rademacher, 0, 20) == pytest.approx(20.0, abs=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 40), st.integers(1, 60))
def test_variance_additivity(mixed_sys, j, n):
    # Var(S_{j,n}) from the one-pass curve equals the direct call at every prefix
    curve = martingale.variance_curve(mixed_sys, j, n)
    assert curve[-1] == pytest.approx(martingale.exact_variance(mixed_sys, j, n), rel=1e-12)
    assert np.all(curve >= -1e-12)


def test_moment_ratio_gaussian():
    rng = np.random.default_rng(0)
    sums = {n: np.sqrt(n) * 10 * rng.standard_normal(200_000) for n in (16, 64, 256, 1024)}
    r = martingale.moment_ratio(sums)
    for n, q in zip(r["n"], r["ratio"]):
        s = 10 * np.sqrt(n)
        assert q == pytest.approx(3 ** 0.25 * s / (1 + s), rel=0.01)


def test_moment_ratio_bounded():
    rng = np.random.default_rng(1)
    sums = {n: 0.2 * (rng.random(10_000) - 0.5) for n in (16, 256, 4096)}
    r = martingale.moment_ratio(sums)
    assert max(r["ratio"]) < 0.2 and abs(r["slope"]) < 0.01


def test_quadratic_variation_ratio(doubling_sys):
    # Q = cos^2 = 1/2 + cos(4 pi x)/2, Var(S_n Q) = n/8, ratio -> 1/4
    r = martingale.quadratic_variation_ratio(doubling_sys, 0, 400)
    assert r == pytest.approx((400 / 8) / (1 + 200), rel=1e-6)


def test_quadratic_variation_ratio_coboundary():
    sys = doubling_with(maps.CoboundaryObservable(V))
    assert martingale.quadratic_variation_ratio(sys, 1, 50) < 1e-12


def test_burkholder():
    x = np.random.default_rng(2).choice([-1.0, 1.0], size=(20_000, 50))
    r = martingale.burkholder_check(x)
    assert r["pass"] and r["E_half"] == pytest.approx(np.sqrt(50))
