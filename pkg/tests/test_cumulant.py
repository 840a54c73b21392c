import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seqlimits import cumulant, maps, martingale
from seqlimits.sampling import birkhoff_sums
from seqlimits.transfer import IntervalSystem, PulledBack

from conftest import interval_seq


def test_untwisted_triplet(mixed_sys):
    t = cumulant.twisted_triplet(mixed_sys, [0.0], (0, 60))
    np.testing.assert_allclose(t.lambdas, 1.0, atol=1e-12)
    for j in range(20):
        np.testing.assert_allclose(t.h(j)[:, 0], 1.0, atol=1e-12)


@given(st.floats(-1.4, 1.4))
@settings(max_examples=20, deadline=None)
def test_rademacher_eigenvalue(rademacher, t):
    tr = cumulant.twisted_triplet(rademacher, [1j * t], (10, 20))
    np.testing.assert_allclose(tr.lambdas[:, 0], np.cos(t), atol=1e-12)


def test_doubling_log_lambda_curvature(doubling_sys):
    fn = lambda z: np.log(cumulant.twisted_triplet(doubling_sys, z, (60, 61), burn_in=60).lambdas[0])  # noqa: E731
    d2 = cumulant.derivative(fn, 0.0, 2, r=0.2)[0]
    assert d2.real == pytest.approx(0.5, abs=1e-8)
    # lambda(z) has a z^3 term: the third cumulant of cos under doubling is not zero
    d3 = cumulant.derivative(fn, 0.0, 3, r=0.2)[0]
    assert abs(d3) > 1e-3


def test_pi_window_examples(rademacher):
    tr = cumulant.twisted_triplet(rademacher, [0.0, 0.3j, 0.9j], (0, 40))
    pi = cumulant.pi_window(tr, 5, 20)
    np.testing.assert_allclose(pi, 20 * np.log(np.cos([0.0, 0.3, 0.9])), atol=1e-11)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 20), st.integers(1, 15), st.integers(1, 15))
def test_pi_window_additive(mixed_sys, j, a, b):
    tr = _mixed_triplet(mixed_sys)
    whole = cumulant.pi_window(tr, j, a + b)
    parts = cumulant.pi_window(tr, j, a) + cumulant.pi_window(tr, j + a, b)
    np.testing.assert_allclose(whole, parts, atol=1e-12)


_CACHE = {}


def _mixed_triplet(sys):
    if "mixed" not in _CACHE:
        _CACHE["mixed"] = cumulant.twisted_triplet(sys, [0.05, 0.02j], (0, 60), burn_in=0)
    return _CACHE["mixed"]


def test_window_cgf_examples(rademacher):
    assert cumulant.window_cgf(rademacher, 3, 10, 0.0) == 0
    for t in (0.1, 0.7, 1.2):
        assert cumulant.window_cgf(rademacher, 3, 10, 1j * t) == pytest.approx(10 * np.log(np.cos(t)), abs=1e-12)


@pytest.mark.slow
def test_window_cgf_doubling_mc(doubling_sys):
    z, n = 0.01, 50
    exact = cumulant.window_cgf(doubling_sys, 0, n, z).real
    S = birkhoff_sums(doubling_sys, [n], 10 ** 7, seed=9)[n]
    e = np.exp(z * S)
    mc = np.log(e.mean())
    err = e.std() / np.sqrt(e.size) / e.mean()
    assert abs(exact - mc) < 4 * err


def test_lll_gap_examples(rademacher, mixed_sys):
    r = cumulant.lll_gap(rademacher, 0.3j, [0, 10], 50)
    assert r["max"] < 1e-12
    r = cumulant.lll_gap(mixed_sys, 0.0, [0, 10], 40)
    assert r["max"] < 1e-12


def test_lll_gap_flat_tent_doubling():
    seq = interval_seq(maps.tent(), maps.doubling(),
                       schedule=maps.Schedule("seeded", (), 5, 2))
    sys = PulledBack(IntervalSystem(seq, 1024))
    r = cumulant.lll_gap(sys, 0.05, [0, 7, 30], 400)
    assert abs(r["slope"]) < 1e-4


def test_derivative_examples():
    assert cumulant.derivative(lambda z: z ** 2, 0.3, 2)[0] == pytest.approx(2.0, abs=1e-12)
    assert cumulant.derivative(np.exp, 0.0, 3, Q=32, r=0.1)[0] == pytest.approx(1.0, abs=1e-10)
    assert cumulant.derivative(np.exp, 0.0, 3, scheme="fd", h=1e-2)[0] == pytest.approx(1.0, abs=1e-3)


def test_cgf_second_derivative_is_variance(doubling_sys, mixed_sys):
    for sys in (doubling_sys, mixed_sys):
        fn = lambda z: cumulant.window_cgf(sys, 0, 50, z)  # noqa: E731
        d2 = cumulant.derivative(fn, 0.0, 2, r=0.1)[0]
        assert d2.real == pytest.approx(martingale.exact_variance(sys, 0, 50), abs=1e-6)


def test_growth_rademacher_closed_form(rademacher):
    # Lambda~_{0,n}(is) = n log cos s: the k-th derivative in s over sigma^2 = n is n-free
    for k in (3, 4):
        g = cumulant.growth_check(rademacher, [16, 64, 256], k, delta=0.05)
        s = np.linspace(-0.05, 0.05, 2001)
        if k == 3:
            ref = np.abs(2 * np.tan(s) / np.cos(s) ** 2).max()
        else:
            ref = np.abs(-2 / np.cos(s) ** 4 - 4 * np.tan(s) ** 2 / np.cos(s) ** 2).max()
        np.testing.assert_allclose(g["value"], ref, rtol=1e-3)
        assert abs(g["slope"]) < 1e-6


def test_growth_refuses_coboundary():
    obs = maps.CoboundaryObservable(maps.TrigObservable(cos=((1, 0.2),)))
    sys = PulledBack(IntervalSystem(interval_seq(maps.doubling(), obs=obs), 512))
    with pytest.raises(ValueError):
        cumulant.growth_check(sys, [16, 64], 3)


def test_twisted_decay(doubling_sys):
    base = cumulant.twisted_decay(doubling_sys, 0.0, 30, j=5)
    tw = cumulant.twisted_decay(doubling_sys, 0.05, 30, j=5)
    assert base["fit"].rate < 1 and abs(tw["fit"].rate - base["fit"].rate) < 0.1


def test_third_derivative_symmetric(rademacher):
    r = cumulant.third_derivative_window(rademacher, [(0, 10), (5, 30)], [0.0])
    assert r["max_ratio"] < 1e-10


def test_third_derivative_rademacher(rademacher):
    t = np.array([0.1, 0.3])
    r = cumulant.third_derivative_window(rademacher, [(0, 10), (0, 40)], t)
    d3 = np.abs(2 * np.tan(t) / np.cos(t) ** 2).max()
    for j, n, var, val, ratio in r["rows"]:
        assert val == pytest.approx(n * d3, rel=1e-6)
        assert ratio == pytest.approx(n * d3 / (1 + n), rel=1e-6)


def test_out_of_radius():
    with pytest.raises(cumulant.OutOfRadiusError):
        cumulant.derivative(lambda z: 1 / (z - 0.05), 0.0, 2, r=0.1, shrink=0)


def test_operator_algebra(sft3):
    op = cumulant.projection_check(sft3, 100, 20)
    assert max(op.values()) < 1e-12
    ex = cumulant.error_decay_check(sft3, 100, 40, 10, np.random.default_rng(0))
    assert ex["fit"].rate < 1 and ex["fit"].r2 > 0.95
    sr = cumulant.perturbation_check(sft3, 100, 200, 20, np.random.default_rng(1))
    assert sr["pass"]
