import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seqlimits.funcspace import (FieldFunction, GridBasis, WordBasis, bv_norm, cone_check, hilbert_metric,
                                 split_bv, variation)


def grid_fn(fn, G=1024):
    b = GridBasis(G)
    return FieldFunction(b, b.sample(fn))


def test_variation_examples():
    assert variation(grid_fn(lambda x: np.ones_like(x))) == 0.0
    assert variation(grid_fn(lambda x: x)) == pytest.approx(1.0)
    assert variation(grid_fn(lambda x: np.cos(2 * np.pi * x), 4096)) == pytest.approx(4.0, abs=1e-3)
    w = WordBasis(np.array([[0, 0], [0, 1], [1, 0], [1, 1]]))
    assert w.variation(np.ones(4)) == 0.0


def test_bv_norm_examples():
    r = bv_norm(grid_fn(lambda x: np.ones_like(x)))
    assert (r.l1, r.variation, r.sup, r.bv) == pytest.approx((1, 0, 1, 1))
    r = bv_norm(grid_fn(lambda x: x))
    assert (r.l1, r.variation, r.sup, r.bv) == pytest.approx((0.5, 1, 1, 1.5))
    r = bv_norm(grid_fn(lambda x: 0 * x))
    assert (r.l1, r.variation, r.sup, r.bv) == (0, 0, 0, 0)


def test_cone_check_examples():
    assert cone_check(grid_fn(lambda x: np.ones_like(x)), 1.0) == {"member": True, "ratio": 0.0}
    r = cone_check(grid_fn(lambda x: x), 1.0)
    assert not r["member"] and r["ratio"] == pytest.approx(2.0)
    r = cone_check(grid_fn(lambda x: x), 3.0)
    assert r["member"] and r["ratio"] == pytest.approx(2.0)


def test_hilbert_metric_examples():
    assert hilbert_metric([1, 1], [2, 2]) == 0.0
    assert hilbert_metric([1, 2], [2, 1]) == pytest.approx(np.log(4))
    assert hilbert_metric([1, 1, 1], [1, 2, 4]) == pytest.approx(np.log(4))


def test_split_bv_examples():
    g1, g2, r0 = split_bv(grid_fn(lambda x: 0 * x), 1.0)
    assert np.all(g1.values == 0) and np.all(g2.values == 0) and r0 == 0.0
    g = grid_fn(lambda x: np.ones_like(x))
    g1, g2, _ = split_bv(g, 2.0)
    assert cone_check(g1, 2.0)["member"] and cone_check(g2, 2.0)["member"]
    g = grid_fn(lambda x: x - 0.5)
    g1, g2, r0 = split_bv(g, 2.0)
    assert cone_check(g1, 2.0)["member"] and cone_check(g2, 2.0)["member"]
    np.testing.assert_allclose(g1.values - g2.values, g.values, atol=1e-12)
    assert np.isfinite(r0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=12), st.floats(0.5, 10))
def test_split_bv_property(coeffs, a):
    b = GridBasis(256)
    x = b.nodes
    vals = sum(c * np.cos(np.pi * k * x) for k, c in enumerate(coeffs))
    g = FieldFunction(b, vals)
    g1, g2, _ = split_bv(g, a)
    assert cone_check(g1, a)["member"] and cone_check(g2, a)["member"]
    np.testing.assert_allclose(g1.values - g2.values, vals, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.1, 10), min_size=2, max_size=20), st.floats(0.1, 10))
def test_hilbert_metric_projective(f, c):
    f = np.array(f)
    g = f[::-1]
    assert hilbert_metric(f, c * g) == pytest.approx(hilbert_metric(f, g), abs=1e-12)
    assert hilbert_metric(f, f * c) == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.floats(0, 1))
def test_interpolation_exact_for_polynomials(deg, x0):
    b = GridBasis(200, breakpoints=(0.5,))
    p = np.polynomial.Polynomial(np.arange(1, deg + 2, dtype=float))
    vals = b.sample(p)
    if deg <= b.order:
        assert b.interpolate(vals, np.array([x0]))[0] == pytest.approx(p(x0), rel=1e-9, abs=1e-9)


def test_quadrature_integrates_polynomials():
    b = GridBasis(101, breakpoints=(1 / 3,))
    for k in range(6):
        assert b.integrate(b.sample(lambda x: x ** k)) == pytest.approx(1 / (k + 1), rel=1e-11)


def test_word_basis_index_roundtrip():
    words = np.array([[a, b] for a in range(3) for b in range(3) if (a, b) != (1, 1)])
    w = WordBasis(words)
    np.testing.assert_array_equal(w.index(words), np.arange(len(words)))
