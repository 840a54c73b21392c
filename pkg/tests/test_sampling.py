import numpy as np
import pytest

from seqlimits import maps, martingale
from seqlimits.sampling import birkhoff_sums, interval_sums
from seqlimits.transfer import IntervalSystem, PulledBack

from conftest import interval_seq


def test_zero_observable_sums():
    sys = PulledBack(IntervalSystem(interval_seq(maps.doubling(), obs=maps.TrigObservable()), 256))
    s = birkhoff_sums(sys, [5], 1000)[5]
    assert np.all(s == 0)


def test_rademacher_one_step(rademacher):
    s = birkhoff_sums(rademacher, [1], 100_000, seed=1)[1]
    assert set(np.unique(s)) == {-1.0, 1.0}
    assert abs(np.mean(s == 1) - 0.5) < 4 * 0.5 / np.sqrt(s.size)


def test_doubling_variance(doubling_sys):
    s = birkhoff_sums(doubling_sys, [256], 10 ** 6, seed=2)[256]
    assert np.var(s) == pytest.approx(128, rel=0.01)


def test_workers_do_not_change_results(mixed_sys):
    a = interval_sums(mixed_sys, [10, 40], 20_000, seed=4, chunk=5000, workers=1)
    b = interval_sums(mixed_sys, [10, 40], 20_000, seed=4, chunk=5000, workers=2)
    for n in (10, 40):
        assert np.array_equal(a[n], b[n])


def test_general_path_moments():
    # Mobius stages take the general backward sampler; check the first two moments
    seq = interval_seq(maps.mobius_distorted(0.5), maps.doubling())
    sys = PulledBack(IntervalSystem(seq, 2048))
    n = 30
    s = birkhoff_sums(sys, [n], 200_000, seed=5)[n]
    mean = sum(sys.mean(k, sys.observable(k)) for k in range(n))
    var = martingale.exact_variance(sys, 0, n)
    se = np.sqrt(var / s.size)
    assert abs(s.mean() - mean) < 5 * se
    assert np.var(s) == pytest.approx(var, rel=0.02)
