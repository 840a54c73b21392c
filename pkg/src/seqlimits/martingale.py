"""Martingale-coboundary decomposition, exact variances and the variance dichotomy.

All routines take a pulled-back system (``transfer.PulledBack`` for interval
maps, ``gibbs.GibbsWordSystem`` for SFTs): ``apply`` is L~_j with L~_j 1 = 1,
``weights(j)`` is m~_j, the law of T_0^j under the initial measure.  Centred
observables are f~_j = f_j - m~_j(f_j).

With u_0 = 0 and u_{j+1} = L~_j(u_j + f~_j) one has
u_j = sum_{k=1}^{j} L~_{j-k}^k f~_{j-k} and M_j = f~_j + u_j - u_{j+1} o T_j
satisfies L~_j M_j = 0, so M_j o T_0^j is a reverse martingale difference.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .transfer import fit_line

__all__ = [
    "MartingaleDecomposition", "centered", "decompose", "series_u", "pilot_bound",
    "exact_variance", "variance_curve", "variance_dichotomy",
    "quadratic_variation_ratio", "moment_ratio", "burkholder_check",
]


def centered(system, j: int, f=None) -> np.ndarray:
    f = system.observable(j) if f is None else np.asarray(f)
    return f - system.mean(j, f)


def _sup(v) -> float:
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


def _bv(system, j, v) -> float:
    return float(system.weights(j) @ np.abs(v)) + system.variation(j, v) if system.kind == "interval" \
        else float(np.abs(system.weights(j)) @ np.abs(v)) + system.variation(j, v)


@dataclass
class MartingaleDecomposition:
    window: tuple
    ftilde: list = field(repr=False)
    u: list = field(repr=False)          # u_j for j = J .. n
    M: list = field(repr=False)          # M_j for j = J .. n-1
    tail_tol: float | None = None
    sup_u: float = 0.0
    sup_u_bv: float = 0.0
    martingale_residual: float = 0.0     # max_j ||L~_j M_j||_inf
    reconstruction_residual: float = 0.0

    def table(self, system):
        """Rows (j, ||u_j||_BV, ||M_j||_BV, ||L~_j M_j||_inf)."""
        J = self.window[0]
        rows = []
        for k, M in enumerate(self.M):
            j = J + k
            rows.append((j, _bv(system, j, self.u[k]), _bv(system, j, M), _sup(system.apply(j, M))))
        return rows


def pilot_bound(system, j: int = 0, n_max: int = 60, sample_count: int = 20, rng=None) -> tuple:
    """(C0, delta0) with ||L~_j^n g - m~_j(g)||_BV <= C0 delta0^n ||g||_BV on random BV samples.

    delta0 is the geometric fit of the sample envelope; C0 is the smallest
    prefactor that makes the bound hold at every observed n.
    """
    from .transfer import random_bv_samples
    from .rpf import fit_geometric
    rng = np.random.default_rng(11) if rng is None else rng
    nodes = system.nodes(j)
    if np.ndim(nodes) == 2:
        samples = [rng.standard_normal(system.dim(j)) for _ in range(sample_count)]
    else:
        samples = random_bv_samples(nodes, sample_count, rng)
    V = np.column_stack([g - system.mean(j, g) for g in samples])
    scale = np.array([_bv(system, j, V[:, i]) for i in range(V.shape[1])])
    env = np.zeros(n_max)
    for n in range(n_max):
        V = system.apply(j + n, V)
        env[n] = max(_bv(system, j + n + 1, V[:, i]) / scale[i] for i in range(V.shape[1]))
    fit = fit_geometric(env, 5, 10 * system.dim(j) * np.finfo(float).eps)
    d0 = min(max(fit.rate, 1e-3), 0.999)
    C0 = float(np.max(env / d0 ** np.arange(1, n_max + 1)))
    return C0, d0


def series_u(system, j: int, tail_tol: float = 1e-12, J: int = 0, obs=None, bound=None) -> tuple:
    """u_j by the series sum_k L~_{j-k}^k f~_{j-k}, truncated a priori.

    Single terms can vanish while later ones do not (L cos(2 pi x) = 0 for
    the doubling map), so the cut-off cannot be read off the terms.  It is
    the first k with C0 delta0^k sup_i ||f~_i||_BV < tail_tol, with
    ``bound = (C0, delta0)`` from :func:`pilot_bound` by default.  Terms are
    summed from the largest retained k downward.  Returns (u_j, terms used).
    """
    obs = obs or (lambda k: system.observable(k))
    k_max = j - J
    C0, d0 = pilot_bound(system, J) if bound is None else bound
    fb = max((_bv(system, i, centered(system, i, obs(i))) for i in range(J, j)), default=0.0)
    if fb > 0:
        k_max = min(k_max, max(1, int(np.ceil(np.log(tail_tol / (C0 * fb)) / np.log(d0)))))
    terms = []
    for k in range(1, k_max + 1):
        v = centered(system, j - k, obs(j - k))
        for s in range(j - k, j):
            v = system.apply(s, v)
        terms.append(v)
    u = np.zeros(system.dim(j))
    for v in reversed(terms):
        u = u + v
    return u, len(terms)


def decompose(system, window=(0, 100), tail_tol: float | None = None, obs=None) -> MartingaleDecomposition:
    """Decomposition f~_j = M_j + u_{j+1} o T_j - u_j for j in [J, n).

    The start J is window[0] (u_J = 0).  The default computes u_j by the
    exact recursion; with ``tail_tol`` every u_j is instead the truncated
    series, so the two can be compared.
    """
    J, n = int(window[0]), int(window[1])
    if n <= J:
        raise ValueError("empty window")
    obs = obs or (lambda k: system.observable(k))
    ft = [centered(system, j, obs(j)) for j in range(J, n)]
    u = [np.zeros(system.dim(J))]
    bound = pilot_bound(system, J) if tail_tol is not None else None
    for k, j in enumerate(range(J, n)):
        if tail_tol is None:
            u.append(system.apply(j, u[k] + ft[k]))
        else:
            u.append(series_u(system, j + 1, tail_tol, J, obs, bound)[0])
    M, mres, rres = [], 0.0, 0.0
    for k, j in enumerate(range(J, n)):
        uT = system.compose(j, u[k + 1])
        Mj = ft[k] + u[k] - uT
        M.append(Mj)
        mres = max(mres, _sup(system.apply(j, Mj)))
        rres = max(rres, _sup(ft[k] - (Mj + uT - u[k])))
    sup_u = max(_sup(x) for x in u)
    sup_bv = max(_bv(system, J + k, x) for k, x in enumerate(u))
    return MartingaleDecomposition((J, n), ft, u, M, tail_tol, sup_u, sup_bv, mres, rres)


def variance_curve(system, j: int, n: int, obs=None) -> np.ndarray:
    """Var(S_{j,m}) for m = 1..n in one pass.

    Var = sum_k m~_k(f~_k^2 + 2 f~_k w_k) with w_j = 0 and
    w_{k+1} = L~_k(w_k + f~_k), i.e. w_k = sum_{a<k} L~_a^{k-a} f~_a.
    """
    obs = obs or (lambda k: system.observable(k))
    w = np.zeros(system.dim(j))
    out = np.empty(n)
    total = 0.0
    for k in range(j, j + n):
        f = centered(system, k, obs(k))
        total += float(system.mean(k, f * f + 2.0 * f * w))
        out[k - j] = total
        w = system.apply(k, w + f)
    return out


def exact_variance(system, j: int, n: int, obs=None) -> float:
    """Var_{m_0}(sum_{k=j}^{j+n-1} f_k o T_0^k) by operator covariance sums."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return float(variance_curve(system, j, n, obs)[-1])


def variance_dichotomy(system, n_max: int, tol: float = 1e-6, obs=None) -> dict:
    """Var(S_n) and sum_{j<n} Var(M_j) for n <= n_max; streaming, O(n_max) operator applications.

    Verdict "bounded" iff the martingale variance partial sums grow by less
    than ``tol`` over the last quarter of the window (a heuristic threshold).
    """
    obs = obs or (lambda k: system.observable(k))
    var_s = np.empty(n_max)
    var_m = np.empty(n_max)
    w = np.zeros(system.dim(0))
    u = np.zeros(system.dim(0))
    ts, tm, sup_u = 0.0, 0.0, 0.0
    for k in range(n_max):
        f = centered(system, k, obs(k))
        ts += float(system.mean(k, f * f + 2.0 * f * w))
        u1 = system.apply(k, u + f)
        M = f + u - system.compose(k, u1)
        tm += float(system.mean(k, M * M))
        var_s[k], var_m[k] = ts, tm
        sup_u = max(sup_u, _sup(u1))
        w = system.apply(k, w + f)
        u = u1
    q = max(1, n_max // 4)
    growth = float(var_m[-1] - var_m[-q - 1]) if n_max > q else float(var_m[-1])
    gap = np.abs(np.sqrt(np.maximum(var_s, 0)) - np.sqrt(var_m))
    return {
        "verdict": "bounded" if growth < tol else "divergent",
        "var_s": var_s, "var_m": var_m, "growth_last_quarter": growth,
        "sup_u": sup_u, "l2_gap": float(gap.max()), "l2_gap_ok": bool(gap.max() <= 2 * sup_u + 1e-9),
        "slope": fit_line(np.arange(1, n_max + 1), var_s)[0],
    }


def quadratic_variation_ratio(system, j: int, n: int, dec: MartingaleDecomposition | None = None) -> float:
    """Var(S_{j,n} Q) / (1 + Var(S_{j,n} f)) with Q_k = M_k^2."""
    if dec is None or dec.window[0] > j or dec.window[1] < j + n:
        dec = decompose(system, (0, j + n))
    J = dec.window[0]
    vq = exact_variance(system, j, n, obs=lambda k: dec.M[k - J] ** 2)
    vf = exact_variance(system, j, n)
    return vq / (1.0 + vf)


def moment_ratio(sums: dict, p: float = 4.0) -> dict:
    """||S_n - E S_n||_p / (1 + ||S_n - E S_n||_2) per horizon, with the trend slope against log n.

    ``sums`` maps n to Monte Carlo samples of S_n (for example from
    :func:`seqlimits.sampling.birkhoff_sums`).
    """
    ns = sorted(sums)
    ratios = []
    for n in ns:
        s = np.asarray(sums[n], dtype=float)
        s = s - s.mean()
        ratios.append(float(np.mean(np.abs(s) ** p) ** (1 / p) / (1.0 + np.sqrt(np.mean(s * s)))))
    slope = fit_line(np.log(ns), ratios)[0] if len(ns) > 1 else 0.0
    return {"n": ns, "ratio": ratios, "slope": slope}


def burkholder_check(increments, p: float = 4.0) -> dict:
    """c_p ||E_n||_{p/2}^{1/2} <= ||D_n||_p <= C_p ||E_n||_{p/2}^{1/2} on samples.

    ``increments`` has shape (count, n) with martingale differences along
    each row; D_n is the row sum and E_n the sum of squares.  The constants
    are the classical c_p = 1/(p-1) and C_p = p-1 (Burkholder, p > 1).
    """
    x = np.asarray(increments, dtype=float)
    D = x.sum(axis=1)
    E = (x * x).sum(axis=1)
    lhs = float(np.mean(np.abs(D) ** p) ** (1 / p))
    qv = float(np.mean(E ** (p / 2)) ** (1 / p))
    c, C = 1.0 / (p - 1), p - 1.0
    return {"D_p": lhs, "E_half": qv, "lower": c * qv, "upper": C * qv, "pass": bool(c * qv <= lhs <= C * qv)}
