import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seqlimits import gibbs, maps
from seqlimits.transfer import (IntervalSystem, PulledBack, SingularDensityError, assemble, compose,
                                duality_gap, random_bv_samples, verify_ly, verify_min_implies_sc, verify_sc)

from conftest import interval_seq, sft_seq


@pytest.fixture(scope="module")
def raw_doubling(doubling_seq):
    return IntervalSystem(doubling_seq, 1024)


def test_doubling_preserves_constants(raw_doubling):
    np.testing.assert_allclose(raw_doubling.apply(0, raw_doubling.ones(0)), 1.0, atol=1e-12)


def test_doubling_on_identity(raw_doubling):
    x = raw_doubling.nodes(0)
    np.testing.assert_allclose(raw_doubling.apply(0, x), x / 2 + 0.25, atol=1e-12)


def test_full_shift_matrix():
    M = assemble(maps.full_shift(2)).dense()
    np.testing.assert_allclose(M, 0.5)


def test_compose_single_and_mass(raw_doubling):
    op = raw_doubling.operator(0)
    assert np.array_equal(compose([op]).dense(), op.dense())
    c = compose([raw_doubling.operator(j) for j in range(5)])
    np.testing.assert_allclose(c.apply(raw_doubling.ones(0)), 1.0, atol=1e-11)


def test_golden_mean_growth():
    M = assemble(maps.golden_mean()).dense()
    v = np.ones(2)
    for _ in range(60):
        w = M @ v
        rate = w.sum() / v.sum()
        v = w / w.sum()
    assert rate == pytest.approx((1 + 5 ** 0.5) / 2, rel=1e-12)


@pytest.mark.parametrize("stage", [maps.doubling(), maps.tent()])
def test_lasota_yorke_contraction(stage):
    # order 1 interpolation does not increase variation; order 5 overshoots at the jumps of step samples
    sys = IntervalSystem(interval_seq(stage), 1024, order=1)
    r = verify_ly(sys, 0, 1, 50, np.random.default_rng(0))
    assert r["pass"] and r["rho_hat"] <= 0.5 + 1e-3


def test_covering_doubling(raw_doubling):
    r = verify_sc(raw_doubling, 1.0, 5, 40, np.random.default_rng(1))
    assert r["pass"] and r["n_a"] == 1 and r["alpha_a"] >= 0.25


def test_covering_fails_for_reducible_sft():
    A = np.array([[1, 0], [0, 1]], dtype=np.int8)
    stage = maps.SftStage(A, np.zeros((2, 2)))
    seq = sft_seq(stage)
    with pytest.raises(gibbs.ReducibleError):
        gibbs.build(seq, (0, 20))
    assert not maps.verify_covering(seq, 0, (0,), 10)["pass"]


def test_min_condition_doubling(raw_doubling):
    r = verify_min_implies_sc(raw_doubling, 20, 5)
    assert r["applicable"] and r["delta0"] == pytest.approx(1.0, abs=1e-10)
    assert r["alpha"] == pytest.approx(0.5, abs=1e-10)


def test_pulled_back_is_normalised(mixed_sys):
    for j in range(6):
        np.testing.assert_allclose(mixed_sys.apply(j, mixed_sys.ones(j)), 1.0, atol=1e-10)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 5))
def test_pulled_back_preserves_reference(mixed_sys, seed, j):
    g = random_bv_samples(mixed_sys.nodes(j), 1, np.random.default_rng(seed))[0]
    assert mixed_sys.mean(j + 1, mixed_sys.apply(j, g)) == pytest.approx(mixed_sys.mean(j, g), abs=1e-8)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_duality(raw_doubling, seed):
    rng = np.random.default_rng(seed)
    x = raw_doubling.nodes(0)
    k = rng.integers(1, 4)
    f_next = np.cos(2 * np.pi * k * x)
    g = 1 + 0.5 * np.sin(2 * np.pi * x)
    assert duality_gap(raw_doubling, 0, f_next, g) < 1e-6


def test_singular_initial_density(doubling_seq):
    with pytest.raises(SingularDensityError):
        PulledBack(IntervalSystem(doubling_seq, 256), np.zeros(256))
