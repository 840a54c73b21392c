"""Block structure behind the almost sure invariance principle.

Variance-window block plans, the k_n ~ sigma_n^2 band, exact covariances of
block sums, the exact factorisation gap of characteristic functionals
across a gap of k steps, twisted operator norms, and Monte Carlo block
diagnostics.  All exact quantities use the pulled-back operators: for
a < b, Cov(f~_a o T_0^a, g o T_0^b) = m~_b(g L~_a^{b-a} f~_a).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .martingale import centered, variance_curve
from .rpf import fit_geometric
from .transfer import fit_line

__all__ = [
    "BlockSizeError", "BlockPlan", "plan_blocks", "kn_band", "block_cov_decay", "variance_sum_gap",
    "gouzel_gap", "gouzel_profile", "twisted_norm_scan", "block_gaussian_match", "doob_check",
    "block_sums",
]


class BlockSizeError(ValueError):
    """A block overshot 2B before reaching B, or never reached B."""


@dataclass
class BlockPlan:
    B: float
    n: int
    blocks: list                       # (start, end) half-open, left to right
    variances: list = field(default_factory=list)
    partial: bool = False              # last block below B

    @property
    def k_n(self) -> int:
        """Number of closed blocks (the partial block is excluded)."""
        return len(self.blocks) - int(self.partial)

    def rows(self):
        return [(i, s, e, e - s, v, i == len(self.blocks) - 1 and self.partial)
                for i, ((s, e), v) in enumerate(zip(self.blocks, self.variances))]


def plan_blocks(system, n: int, B: float, j0: int = 0, obs=None) -> BlockPlan:
    """Greedy left-to-right blocks: close at the first index where Var(S_I) >= B.

    Block variances are accumulated exactly with the operator recursion
    restarted at each block start.  A closed block above 2B raises
    BlockSizeError (per-step increments too large for B); so does a plan
    with no closed block (bounded variance, e.g. a coboundary).
    """
    if B <= 0:
        raise ValueError("B must be positive")
    blocks, variances = [], []
    s = j0
    w = np.zeros(system.dim(j0))
    var = 0.0
    for k in range(j0, j0 + n):
        f = centered(system, k, None if obs is None else obs(k))
        var += float(system.mean(k, f * f + 2.0 * f * w))
        w = system.apply(k, w + f)
        if var >= B:
            if var > 2 * B:
                raise BlockSizeError(f"block [{s}, {k + 1}) has variance {var:.4g} > 2B = {2 * B:.4g}")
            blocks.append((s, k + 1))
            variances.append(var)
            s = k + 1
            w = np.zeros(system.dim(k + 1))
            var = 0.0
    partial = s < j0 + n
    if partial:
        blocks.append((s, j0 + n))
        variances.append(var)
    if not blocks or (partial and len(blocks) == 1):
        raise BlockSizeError("variance never reaches B: no closed block")
    return BlockPlan(float(B), int(n), blocks, variances, partial)


def kn_band(plans: dict, sigma2: dict | None = None, system=None) -> dict:
    """k_n / sigma_n^2 for plans keyed by n, with the band width max/min.

    sigma_n^2 is taken from ``sigma2`` or computed exactly from ``system``.
    """
    ns = sorted(plans)
    if sigma2 is None:
        var = variance_curve(system, 0, ns[-1])
        sigma2 = {n: float(var[n - 1]) for n in ns}
    ratio = np.array([plans[n].k_n / sigma2[n] for n in ns])
    return {"n": ns, "ratio": ratio, "width": float(ratio.max() / ratio.min())}


def _push(system, a, b, v):
    for k in range(a, b):
        v = system.apply(k, v)
    return v


def _block_tail(system, s, e, obs=None):
    """z_e = sum_{a in [s, e)} L~_a^{e-a} f~_a, the block sum as seen from time e."""
    w = np.zeros(system.dim(s))
    for k in range(s, e):
        w = system.apply(k, w + centered(system, k, None if obs is None else obs(k)))
    return w


def _cov_with_block(system, z, s, e, obs=None):
    """sum_{i in [s, e)} m~_i(f~_i L~^{i-s} z) with z given at time s."""
    tot = 0.0
    for i in range(s, e):
        f = centered(system, i, None if obs is None else obs(i))
        tot += float(system.mean(i, f * z))
        z = system.apply(i, z)
    return tot


def block_cov_decay(system, plan: BlockPlan, k_max: int, obs=None, n0: int = 1) -> dict:
    """|Cov(A_j, A_{j+k})| for closed blocks, envelope over j, geometric fit in k.

    There are k - 1 blocks between I_j and I_{j+k}.
    """
    closed = plan.blocks[:plan.k_n]
    cov = np.full((len(closed), k_max), np.nan)
    for j, (s, e) in enumerate(closed):
        z = _block_tail(system, s, e, obs)
        t = e
        for k in range(1, k_max + 1):
            if j + k >= len(closed):
                break
            s2, e2 = closed[j + k]
            z = _push(system, t, s2, z)
            cov[j, k - 1] = _cov_with_block(system, z, s2, e2, obs)
            z = _push(system, s2, e2, z)
            t = e2
    env = np.nanmax(np.abs(cov), axis=0)
    scale = max(plan.variances[:plan.k_n])
    fit = fit_geometric(env, n0, 1e3 * np.finfo(float).eps * scale)
    return {"cov": cov, "envelope": env, "fit": fit}


def variance_sum_gap(system, plans: dict, obs=None) -> dict:
    """|sum_j Var(A_j) - Var(S_n)| per n with the fitted exponent against V_n = Var(S_n)."""
    ns = sorted(plans)
    var = variance_curve(system, 0, ns[-1], obs)
    V = np.array([var[n - 1] for n in ns])
    gap = np.array([abs(sum(plans[n].variances) - var[n - 1]) for n in ns])
    ok = gap > 0
    expo = fit_line(np.log(V[ok]), np.log(gap[ok]))[0] if ok.sum() > 1 else float("nan")
    return {"n": ns, "V": V, "gap": gap, "exponent": float(expo)}


# ---------------------------------------------------------------------------
# factorisation of characteristic functionals
# ---------------------------------------------------------------------------

def _twisted_group(system, blocks, t, v, obs=None):
    """Apply prod over blocks of L~ twisted by i t_b f~ inside block b (plain L~ between blocks)."""
    cur = blocks[0][0]
    for (s, e), tb in zip(blocks, t):
        v = _push(system, cur, s, v)
        for k in range(s, e):
            f = centered(system, k, None if obs is None else obs(k))
            v = system.apply(k, v * np.exp(1j * tb * f))
        cur = e
    return v, cur


def gouzel_gap(system, left, right_lengths, k: int, t_left, t_right, obs=None) -> dict:
    """Exact |E e^{i(sum t_b A_b)} - E e^{i sum_left} E e^{i sum_right}| across a gap of k steps.

    ``left`` is a list of (start, end) blocks; the right group consists of
    consecutive blocks with ``right_lengths`` starting k steps after the
    last left block.  The gap is computed twice: as joint minus product,
    and as m~(Right((L~^k - Q^k) v)) with Q^k v = m~(v) 1 the projection the
    proof inserts, v the twisted left group applied to 1.
    """
    e = left[-1][1]
    start = e + k
    right, cur = [], start
    for ell in right_lengths:
        right.append((cur, cur + ell))
        cur += ell
    end = cur
    v, _ = _twisted_group(system, left, t_left, system.ones(left[0][0]).astype(complex), obs)
    mv = complex(system.mean(e, v))
    v_gap = _push(system, e, start, v)
    joint_fn, _ = _twisted_group(system, right, t_right, v_gap, obs)
    joint = complex(system.mean(end, joint_fn))
    right_one, _ = _twisted_group(system, right, t_right, system.ones(start).astype(complex), obs)
    right_mean = complex(system.mean(end, right_one))
    product = mv * right_mean
    diff_fn, _ = _twisted_group(system, right, t_right, v_gap - mv * system.ones(start), obs)
    direct = abs(complex(system.mean(end, diff_fn)))
    return {"gap": direct, "joint": joint, "product": product, "cross_check": abs(abs(joint - product) - direct)}


def gouzel_profile(system, left, right_lengths, k_values, t_left, t_right, obs=None, n0: int = 1) -> dict:
    """Gap against k with a geometric fit (values at the roundoff floor are excluded)."""
    k_values = [int(k) for k in k_values]
    gaps = np.array([gouzel_gap(system, left, right_lengths, k, t_left, t_right, obs)["gap"] for k in k_values])
    fit = fit_geometric(gaps, n0, 1e-15, n_start=k_values[0])
    return {"k": k_values, "gap": gaps, "fit": fit}


def twisted_norm_scan(system, t_grid, n_max: int, j_list=(0,), obs=None, max_dim: int = 2048,
                      n0: int = 10) -> dict:
    """sup-induced norms ||L~_{j,it}^n||_inf (max absolute row sum of the exact product).

    Also fits log ||L~^n|| against Var(S_{j,n}) per t for n > n0: the proof's
    envelope C' e^{-t^2 Var / 4} predicts a slope of at most about -t^2 / 4.
    The first n0 steps are skipped because grid operators start with the
    interpolation's Lebesgue constant, not with norm 1.
    """
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    rows = []
    envelope = {}
    for j in j_list:
        d = system.dim(j)
        if d > max_dim:
            raise ValueError(f"dimension {d} above max_dim={max_dim}: use a coarser grid")
        var = variance_curve(system, j, n_max, obs)
        for t in t_grid:
            V = np.eye(d, dtype=complex)
            norms = np.empty(n_max)
            for n in range(n_max):
                f = centered(system, j + n, None if obs is None else obs(j + n))
                V = system.apply(j + n, V * np.exp(1j * t * f)[:, None])
                norms[n] = float(np.max(np.abs(V).sum(axis=1)))
            rows.append((j, float(t), norms))
            if t != 0:
                ok = (norms > 1e-250) & (np.arange(1, n_max + 1) > n0)
                slope, icpt, r2 = fit_line(var[ok], np.log(norms[ok]))
                envelope[(j, float(t))] = {"slope": slope, "r2": r2, "predicted": -t * t / 4}
    sup = max(float(r[2].max()) for r in rows)
    return {"rows": rows, "sup": sup, "envelope": envelope}


# ---------------------------------------------------------------------------
# Monte Carlo diagnostics
# ---------------------------------------------------------------------------

def block_sums(partial_sums: dict, plan: BlockPlan, means=None) -> np.ndarray:
    """Samples of every block sum from Monte Carlo partial sums S_m keyed by block boundaries.

    ``partial_sums[m]`` holds samples of S_m; blocks (s, e) give S_e - S_s
    (S_0 = 0).  Columns are centred by ``means`` (exact block means) or by the
    sample mean.
    """
    cols = []
    for s, e in plan.blocks:
        a = partial_sums[e] - (partial_sums[s] if s > 0 else 0.0)
        cols.append(a)
    X = np.column_stack(cols)
    X = X - (np.asarray(means) if means is not None else X.mean(axis=0))
    return X


def block_gaussian_match(X, variances, closed: int | None = None) -> dict:
    """Skewness, kurtosis and pairwise correlations of block sums (columns of X)."""
    X = np.asarray(X, dtype=float)
    if closed is not None:
        X = X[:, :closed]
        variances = list(variances)[:closed]
    X = X - X.mean(axis=0)
    sd = X.std(axis=0)
    Z = X / sd
    skew = np.mean(Z ** 3, axis=0)
    kurt = np.mean(Z ** 4, axis=0)
    R = np.corrcoef(X, rowvar=False) if X.shape[1] > 1 else np.ones((1, 1))
    off = np.abs(R[~np.eye(R.shape[0], dtype=bool)]) if R.shape[0] > 1 else np.zeros(1)
    N = X.shape[0]
    return {
        "skew": skew, "kurtosis": kurt, "max_abs_skew": float(np.max(np.abs(skew))),
        "max_kurtosis_dev": float(np.max(np.abs(kurt - 3))), "max_abs_corr": float(off.max()),
        "variance_ratio": sd ** 2 / np.asarray(variances),
        # 4-sigma Monte Carlo scales for Gaussian data
        "skew_scale": 4 * np.sqrt(6 / N), "kurtosis_scale": 4 * np.sqrt(24 / N), "corr_scale": 4 / np.sqrt(N),
    }


def doob_check(paths, plan: BlockPlan, p: float = 4.0) -> dict:
    """||max_{m in I} |S_m - S_start|||_p per block, normalised by the block standard deviation.

    ``paths`` has shape (count, n + 1) with column m holding S_m (S_0 = 0).
    """
    P = np.asarray(paths, dtype=float)
    vals = []
    for (s, e), v in zip(plan.blocks[:plan.k_n], plan.variances):
        seg = P[:, s:e + 1] - P[:, s:s + 1]
        seg = seg - seg.mean(axis=0)
        mx = np.max(np.abs(seg), axis=1)
        vals.append(float(np.mean(mx ** p) ** (1 / p)) / np.sqrt(v))
    vals = np.array(vals)
    return {"per_block": vals, "sup": float(vals.max()), "spread": float(vals.max() / vals.min())}
