import numpy as np
import pytest

from seqlimits import gibbs, maps
from seqlimits.transfer import IntervalSystem, PulledBack

COS = maps.TrigObservable(cos=((1, 1.0),))


def interval_seq(*stages, pattern=None, obs=COS, schedule=None):
    sch = schedule or maps.Schedule("periodic", pattern or tuple(range(len(stages))))
    return maps.MapSequence(stages, sch, (obs,))


@pytest.fixture(scope="session")
def doubling_seq():
    return interval_seq(maps.doubling())


@pytest.fixture(scope="session")
def doubling_sys(doubling_seq):
    return PulledBack(IntervalSystem(doubling_seq, 1024))


@pytest.fixture(scope="session")
def mixed_sys():
    seq = interval_seq(maps.doubling(), maps.markov_w())
    return PulledBack(IntervalSystem(seq, 1024))


def sft_seq(*stages, values=(1.0, -1.0), pattern=None, horizon=1):
    sch = maps.Schedule("periodic", pattern or tuple(range(len(stages))))
    return maps.MapSequence(stages, sch, (maps.SymbolObservable(values),), mixing_horizon=horizon)


@pytest.fixture(scope="session")
def rademacher():
    seq = sft_seq(maps.full_shift(2))
    g = gibbs.build(seq, (0, 300), burn_in=60)
    return gibbs.GibbsWordSystem(g, 1)


@pytest.fixture(scope="session")
def golden():
    seq = sft_seq(maps.golden_mean(), values=(0.0, 1.0), horizon=2)
    return gibbs.build(seq, (0, 200), burn_in=80)


@pytest.fixture(scope="session")
def sft3():
    rng = np.random.default_rng(11)
    A = [[1, 1, 0], [1, 0, 1], [1, 1, 1]]
    fam = [maps.random_sft_stage(rng, A, 0.5, f"s{k}") for k in range(3)]
    seq = sft_seq(*fam, values=(0.0, 1.0, 2.0), horizon=2)
    return gibbs.build(seq, (0, 300), burn_in=80)


@pytest.fixture(scope="session")
def sft3_words(sft3):
    return gibbs.GibbsWordSystem(sft3, 2)
