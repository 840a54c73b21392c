"""Monte Carlo Birkhoff sums along sequential orbits.

Forward iteration of expanding maps in floating point loses one bit per
step (the doubling orbit of any double reaches 0 within ~53 steps), so
interval orbits are sampled backward, which is exact in law: draw
x_{n-1} from the pushed density rho_{n-1} = L_0^{n-1} rho_0 by rejection,
then for k = n-2, ..., 0 pick the preimage y of x_{k+1} on branch i with
probability rho_k(y) / (|T_k'(y)| rho_{k+1}(x_{k+1})).  Partial sums at
every horizon in ``n_list`` come from the same paths as S_m = R_0 - R_m,
R_k the suffix sums.  SFT paths are sampled forward with the Gibbs
transition tables.

Randomness: chunk c of stream s under root seed r uses
``SeedSequence([r, s, c])``, so results do not depend on how chunks are
distributed over workers.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

import numpy as np

__all__ = ["DensityTable", "interval_sums", "sft_sums", "birkhoff_sums", "chunk_rng"]

_CONST_TOL = 1e-12


def chunk_rng(seed: int, stream: int, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(stream), int(chunk)])))


class DensityTable:
    """Pushed densities rho_j on the grid, with constants stored as None."""

    def __init__(self, pulled, n: int):
        self.nodes = pulled.nodes(0)
        self.rho = []
        for j in range(n):
            r = pulled.density(j)
            self.rho.append(None if np.max(np.abs(r - 1.0)) < _CONST_TOL else np.asarray(r))

    def __call__(self, j: int, x):
        r = self.rho[j]
        return np.ones_like(x) if r is None else np.interp(x, self.nodes, r)

    def sup(self, j: int) -> float:
        r = self.rho[j]
        return 1.0 if r is None else float(r.max())


def _rejection(table: DensityTable, j: int, count: int, rng) -> np.ndarray:
    if table.rho[j] is None:
        return rng.random(count)
    env = table.sup(j)
    out = np.empty(count)
    filled = 0
    tries = 0
    while filled < count:
        m = max(1024, int(1.2 * (count - filled) * env))
        x = rng.random(m)
        keep = x[rng.random(m) * env <= table(j, x)]
        tries += m
        take = keep[:count - filled]
        out[filled:filled + take.size] = take
        filled += take.size
        if tries > 100 * count and filled < count / 100:
            raise ValueError("rejection sampling efficiency below 1%: density too peaked")
    return out


def _affine_full(stage):
    """(slopes, intercepts, cumulative 1/|slope|) if every branch is affine onto [0, 1], else None."""
    from .maps import Affine
    sl, ic = [], []
    for br in stage.branches:
        if not isinstance(br.forward, Affine):
            return None
        lo, hi = br.image
        if lo > 1e-12 or hi < 1 - 1e-12:
            return None
        sl.append(br.forward.slope)
        ic.append(br.forward.intercept)
    sl = np.asarray(sl)
    cum = np.cumsum(1.0 / np.abs(sl))
    return sl, np.asarray(ic), cum / cum[-1]


def _interval_chunk(args):
    seq, table, n_list, count, seed, stream, chunk = args
    rng = chunk_rng(seed, stream, chunk)
    n = max(n_list)
    checkpoints = set(n_list)
    x = _rejection(table, n - 1, count, rng)
    R = np.zeros(count)
    at = {}
    fast = {}
    for k in range(n - 1, -1, -1):
        R += np.asarray(seq.f(k, x), dtype=float)
        if k in checkpoints:
            at[k] = R.copy()
        if k == 0:
            break
        stage = seq.stage(k - 1)
        if table.rho[k - 1] is None:
            key = seq.stage_index(k - 1)
            if key not in fast:
                fast[key] = _affine_full(stage)
            if fast[key] is not None:
                sl, ic, cum = fast[key]
                b = np.searchsorted(cum, rng.random(count) * cum[-1], side="right")
                np.minimum(b, sl.size - 1, out=b)
                x = (x - ic[b]) / sl[b]
                continue
        y, dabs, valid = stage.inverse_arrays(x)
        w = np.where(valid, 1.0 / dabs, 0.0)
        if table.rho[k - 1] is not None:
            w = w * np.where(valid, table(k - 1, y), 0.0)
        c = np.cumsum(w, axis=0)
        u = rng.random(count) * c[-1]
        b = np.minimum((u[None, :] > c).sum(axis=0), stage.branch_count - 1)
        x = y[b, np.arange(count)]
    return {m: R - at.get(m, 0.0) if m < n else R.copy() for m in n_list}


def interval_sums(pulled, n_list, count: int, seed: int = 0, stream: int = 0, chunk: int = 1 << 16,
                  workers: int = 1) -> dict:
    """Samples of S_m = sum_{k<m} f_k(x_k), x_0 ~ rho_0 dm, for every m in n_list."""
    n_list = sorted(int(m) for m in n_list)
    table = DensityTable(pulled, max(n_list))
    sizes = [min(chunk, count - c0) for c0 in range(0, count, chunk)]
    jobs = [(pulled.seq, table, n_list, s, seed, stream, c) for c, s in enumerate(sizes)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_interval_chunk, jobs))
    else:
        parts = [_interval_chunk(a) for a in jobs]
    return {m: np.concatenate([p[m] for p in parts]) for m in n_list}


def _sft_chunk(args):
    gibbs, j0, n_list, count, seed, stream, chunk = args
    rng = chunk_rng(seed, stream, chunk)
    seq = gibbs.seq
    n = max(n_list)
    pi = np.cumsum(gibbs.pi(j0))
    x = np.minimum(np.searchsorted(pi / pi[-1], rng.random(count), side="right"), pi.size - 1)
    S = np.zeros(count)
    out = {}
    for k in range(n):
        S += np.asarray(seq.f(j0 + k, x), dtype=float)
        if k + 1 in n_list:
            out[k + 1] = S.copy()
        if k + 1 == n:
            break
        P = np.cumsum(gibbs.p(j0 + k), axis=1)
        P = P / P[:, -1:]
        u = rng.random(count)
        x = np.minimum((u[:, None] > P[x]).sum(axis=1), P.shape[1] - 1)
    return out


def sft_sums(gibbs, n_list, count: int, seed: int = 0, stream: int = 0, chunk: int = 1 << 16,
             j0: int | None = None, workers: int = 1) -> dict:
    """Samples of S_m = sum_{k<m} f_{j0+k}(x_{j0+k}) under mu_{j0}."""
    n_list = sorted(int(m) for m in n_list)
    j0 = gibbs.window[0] if j0 is None else j0
    sizes = [min(chunk, count - c0) for c0 in range(0, count, chunk)]
    jobs = [(gibbs, j0, set(n_list), s, seed, stream, c) for c, s in enumerate(sizes)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_sft_chunk, jobs))
    else:
        parts = [_sft_chunk(a) for a in jobs]
    return {m: np.concatenate([p[m] for p in parts]) for m in n_list}


def birkhoff_sums(system, n_list, count: int, seed: int = 0, stream: int = 0, chunk: int = 1 << 16,
                  workers: int = 1) -> dict:
    """Dispatch on the system kind: pulled-back interval system or Gibbs word system."""
    if system.kind == "interval":
        return interval_sums(system, n_list, count, seed, stream, chunk, workers)
    return sft_sums(system.gibbs, n_list, count, seed, stream, chunk, workers=workers)
