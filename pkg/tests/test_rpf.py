import numpy as np
import pytest

from seqlimits import maps, rpf
from seqlimits.transfer import IntervalSystem, verify_sc

from conftest import interval_seq


@pytest.fixture(scope="module")
def raw_mixed():
    return IntervalSystem(interval_seq(maps.doubling(), maps.markov_w()), 1024)


@pytest.mark.parametrize("stage", [maps.doubling(), maps.tent()])
def test_lebesgue_invariant(stage):
    sys = IntervalSystem(interval_seq(stage), 512)
    trip = rpf.forward_density(sys, (0, 5), burn_in=1)
    for j in range(6):
        np.testing.assert_allclose(trip.h(j), 1.0, atol=1e-12)
    assert trip.residual < 1e-12


def test_mixed_doubling_markov_keeps_lebesgue(raw_mixed):
    # both stages preserve Lebesgue measure (inverse slopes 1/3 + 2/3 = 1)
    trip = rpf.forward_density(raw_mixed, (40, 43), burn_in=40)
    for j in range(40, 44):
        np.testing.assert_allclose(trip.h(j), 1.0, atol=1e-12)


def test_distorted_period_densities_match_histogram():
    seq = interval_seq(maps.mobius_distorted(0.5), maps.doubling())
    sys = IntervalSystem(seq, 2048)
    trip = rpf.forward_density(sys, (30, 31), burn_in=30)
    assert np.abs(trip.h(30) - trip.h(31)).max() > 0.02
    assert trip.residual < 1e-10
    # brute force: 12 forward steps of 10^7 uniform points, then 256 bins
    rng = np.random.default_rng(0)
    for j, tgt in ((12, 30), (13, 31)):
        x = rng.random(10_000_000)
        for k in range(j):
            x = maps.apply_map(seq.stage(k), x)
        hist, edges = np.histogram(x, 256, (0, 1), density=True)
        mid = 0.5 * (edges[1:] + edges[:-1])
        h = np.interp(mid, sys.nodes(tgt), trip.h(tgt))
        assert np.mean(np.abs(hist - h)) < 0.01


def test_decay_of_eigen_direction_is_zero(raw_mixed):
    trip = rpf.forward_density(raw_mixed, (0, 30), burn_in=1)
    d = rpf.decay_profile(raw_mixed, trip.h(0), 30, trip)
    assert d["norms"].max() < 1e-9


def test_cos_decay_on_doubling():
    sys = IntervalSystem(interval_seq(maps.doubling()), 2048)
    x = sys.nodes(0)
    # L cos(2 pi x) = 0 exactly; use g = x, whose image is (x - 1/2)/2^n + 1/2
    d = rpf.decay_profile(sys, x, 12, n0=2)
    assert d["fit"].rate == pytest.approx(0.5, abs=0.02)
    d0 = rpf.decay_profile(sys, np.cos(2 * np.pi * x), 5)
    assert d0["norms"].max() < 1e-6


def test_uniqueness_gap_rate():
    sys = IntervalSystem(interval_seq(maps.doubling()), 2048)
    x = sys.nodes(0)
    g0 = 1 + 0.3 * x
    r = rpf.uniqueness_gap(sys, g0 / sys.mean(0, g0), 12, n0=2)
    assert r["fit"].rate == pytest.approx(0.5, abs=0.02)


def test_uniform_decay_mixed(raw_mixed):
    from seqlimits.transfer import random_bv_samples
    samples = random_bv_samples(raw_mixed.nodes(0), 10, np.random.default_rng(3))
    r = rpf.uniform_decay(raw_mixed, samples, 30)
    assert r["fit"].rate < 0.9 and r["fit"].r2 > 0.98


def test_change_reference(raw_mixed):
    trip = rpf.forward_density(raw_mixed, (0, 10), burn_in=1)
    derived = rpf.change_reference(raw_mixed, trip)
    for j in range(8):
        np.testing.assert_allclose(derived.apply(j, derived.ones(j)), 1.0, atol=1e-10)
    a = verify_sc(raw_mixed, 2.0, 10, 20, np.random.default_rng(0))
    b = verify_sc(derived, 2.0, 10, 20, np.random.default_rng(0))
    assert a["pass"] and b["pass"] and b["n_a"] <= a["n_a"] + 1


def test_doubling_change_reference_is_identity():
    sys = IntervalSystem(interval_seq(maps.doubling()), 512)
    trip = rpf.forward_density(sys, (0, 3), burn_in=1)
    derived = rpf.change_reference(sys, trip)
    v = np.sin(2 * np.pi * sys.nodes(0)) + sys.nodes(0)
    np.testing.assert_allclose(derived.apply(0, v), sys.apply(0, v), atol=1e-12)


def test_contraction_diagnostic():
    sys = IntervalSystem(interval_seq(maps.doubling()), 512, order=1)
    r = rpf.contraction_diagnostic(sys, 2.0, 5, 10, np.random.default_rng(4))
    assert r["per_M_contraction"] < 1


def test_equivariance(raw_mixed):
    trip = rpf.forward_density(raw_mixed, (0, 10), burn_in=1)
    assert rpf.equivariance_residual(raw_mixed, trip, 2, 10, np.random.default_rng(1)) < 1e-8


def test_fit_geometric_exact():
    fit = rpf.fit_geometric(3.0 * 0.7 ** np.arange(1, 30), n0=1)
    assert fit.rate == pytest.approx(0.7, rel=1e-10) and fit.r2 == pytest.approx(1.0)
