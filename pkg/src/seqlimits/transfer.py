"""Transfer operators: assembly, composition, discretised systems, hypothesis checks.

Two families of discretised systems share one duck-typed interface used by
every downstream module:

``apply(j, v)``            L_j v  (vectors or column stacks)
``apply_adjoint(j, w)``    the transpose action on dual weight vectors
``weights(j)``             reference functional at time j (m_j(v) = weights @ v)
``compose(j, u)``          u o T_j, from time j+1 values to time j values
``observable(j)``          node/word values of f_j
``variation(j, v)``        variation in the time-j basis

:class:`IntervalSystem` is the raw operator of a sequence of interval maps on
grids; :class:`PulledBack` rescales any raw system by the pushed densities
rho_j = L_0^j rho_0 so that L~_j 1 = 1; the SFT counterpart (normalized Gibbs
operators on word bases) lives in :mod:`seqlimits.gibbs`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .funcspace import GridBasis
from .maps import IntervalStage, MapSequence, SftStage

__all__ = [
    "TransferMatrix", "SingularDensityError", "assemble", "compose",
    "IntervalSystem", "PulledBack", "twisted_apply", "verify_ly", "verify_sc",
    "verify_min_implies_sc", "bound1_profile", "duality_gap",
    "random_bv_samples", "fit_line",
]


class SingularDensityError(ArithmeticError):
    """A density used for normalisation is (numerically) not positive."""


def fit_line(x, y):
    """Least squares y = a + b x; returns (b, a, r2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    A = np.vstack([np.ones_like(x), x]).T
    (a, b), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (a + b * x)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss if ss > 0 else 1.0
    return float(b), float(a), float(r2)


# ---------------------------------------------------------------------------
# single operators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransferMatrix:
    """Finite representation of one L_j (or of a composition L_j^n)."""
    kind: str
    j: int
    matrix: object
    src_basis: object = None
    dst_basis: object = None
    z: complex = 0.0
    steps: int = 1

    def apply(self, v):
        return self.matrix @ v

    def __matmul__(self, v):
        return self.apply(v)

    def dense(self) -> np.ndarray:
        m = self.matrix
        return m.toarray() if sp.issparse(m) else np.asarray(m)

    def to_csv(self, path):
        M = self.dense()
        header = f"kind={self.kind},j={self.j},z={self.z}"
        np.savetxt(path, M.real if np.isrealobj(M) else M, delimiter=",", header=header)


def _interval_matrix(stage: IntervalStage, src: GridBasis, dst: GridBasis) -> sp.csr_matrix:
    """(L g)(x_l) = sum_k g(y_k(x_l)) / |T'(y_k(x_l))| with interpolated g."""
    y, dabs, valid = stage.inverse_arrays(dst.nodes)
    mats = []
    for k in range(stage.branch_count):
        rows = np.flatnonzero(valid[k])
        if rows.size == 0:
            continue
        # the branch domain is exactly piece k of the source basis
        piece = src.piece_of(np.array([0.5 * (stage.branches[k].lo + stage.branches[k].hi)]))[0]
        E = src.eval_matrix(y[k, rows], np.full(rows.size, piece))
        E = sp.diags(1.0 / dabs[k, rows]) @ E
        P = sp.csr_matrix((np.ones(rows.size), (rows, np.arange(rows.size))), shape=(dst.size, rows.size))
        mats.append(P @ E)
    return sp.csr_matrix(sum(mats))


def assemble(stage, src_basis=None, dst_basis=None, kind="raw", context=None, j=0) -> TransferMatrix:
    """Assemble one transfer operator.

    kind: "raw", "normalized", "pulled_back" or "twisted".  ``context`` holds
    what the kind needs: for "pulled_back"/"normalized" the densities
    ``(rho_j, rho_{j+1})`` (and for normalized SFT operators also
    ``lambda_j``); for "twisted" the observable values ``f`` and ``z``.
    """
    context = context or {}
    if isinstance(stage, SftStage):
        raw = stage.weights()
    else:
        raw = _interval_matrix(stage, src_basis, dst_basis)
    if kind == "raw":
        return TransferMatrix("raw", j, raw, src_basis, dst_basis)
    if kind in ("pulled_back", "normalized"):
        rho0, rho1 = (np.asarray(r, dtype=float) for r in context["densities"])
        lam = float(context.get("lam", 1.0))
        if min(rho0.min(), rho1.min()) < 1e-12:
            raise SingularDensityError("normalising density has minimum below 1e-12")
        M = sp.diags(1.0 / (lam * rho1)) @ sp.csr_matrix(raw) @ sp.diags(rho0)
        M = M.toarray() if isinstance(stage, SftStage) else sp.csr_matrix(M)
        return TransferMatrix(kind, j, M, src_basis, dst_basis)
    if kind == "twisted":
        z = complex(context["z"])
        f = np.asarray(context["f"], dtype=float)
        M = sp.csr_matrix(raw) @ sp.diags(np.exp(z * f))
        M = M.toarray() if isinstance(stage, SftStage) else sp.csr_matrix(M)
        return TransferMatrix("twisted", j, M, src_basis, dst_basis, z)
    raise ValueError(f"unknown operator kind {kind!r}")


def compose(ops) -> TransferMatrix:
    """L_j^n = L_{j+n-1} o ... o L_j."""
    ops = list(ops)
    if not ops:
        raise ValueError("nothing to compose")
    for a, b in zip(ops[:-1], ops[1:]):
        if b.j != a.j + a.steps:
            raise ValueError("time indices are not adjacent")
    M = ops[0].matrix
    for op in ops[1:]:
        M = op.matrix @ M
    kinds = {o.kind for o in ops}
    zs = {o.z for o in ops}
    kind = kinds.pop() if len(kinds) == 1 else "mixed"
    z = zs.pop() if len(zs) == 1 else None
    return TransferMatrix(kind, ops[0].j, M, ops[0].src_basis, ops[-1].dst_basis, z,
                          sum(o.steps for o in ops))


# ---------------------------------------------------------------------------
# discretised systems
# ---------------------------------------------------------------------------

class IntervalSystem:
    """Raw transfer operators of an interval-map sequence on uniform grids.

    The basis at time j carries the branch boundaries of T_j as breakpoints.
    Operators and composition matrices are cached per pair of family indices.
    """

    kind = "interval"

    def __init__(self, seq: MapSequence, size: int = 4096, order: int = 5):
        if seq.kind != "interval":
            raise ValueError("IntervalSystem needs interval stages")
        self.seq = seq
        self.size = int(size)
        self.order = int(order)
        self._bases = {}
        self._ops = {}
        self._comp = {}
        self._obs = {}

    def basis(self, j: int) -> GridBasis:
        k = self.seq.stage_index(j)
        if k not in self._bases:
            self._bases[k] = GridBasis(self.size, self.seq.family[k].breakpoints, self.order)
        return self._bases[k]

    def nodes(self, j: int) -> np.ndarray:
        return self.basis(j).nodes

    def dim(self, j: int) -> int:
        return self.size

    def operator(self, j: int) -> TransferMatrix:
        key = self.seq.stage_key(j)
        if key not in self._ops:
            self._ops[key] = assemble(self.seq.stage(j), self.basis(j), self.basis(j + 1), "raw", j=j)
        op = self._ops[key]
        return TransferMatrix("raw", j, op.matrix, op.src_basis, op.dst_basis)

    def matrix(self, j: int):
        return self.operator(j).matrix

    def apply(self, j: int, v):
        return self.matrix(j) @ v

    def apply_adjoint(self, j: int, w):
        return self.matrix(j).T @ w

    def weights(self, j: int) -> np.ndarray:
        return self.basis(j).quad_weights

    def mean(self, j: int, v):
        return self.weights(j) @ v

    def variation(self, j: int, v) -> float:
        return self.basis(j).variation(v)

    def compose_matrix(self, j: int) -> sp.csr_matrix:
        """K with (K u)_i = u(T_j(x_i)) for u given at time j+1 nodes."""
        key = self.seq.stage_key(j)
        if key not in self._comp:
            x = self.nodes(j)
            tx = self.seq.stage(j)(x)
            self._comp[key] = self.basis(j + 1).eval_matrix(tx)
        return self._comp[key]

    def compose(self, j: int, u):
        return self.compose_matrix(j) @ u

    def observable(self, j: int) -> np.ndarray:
        key = (self.seq.stage_index(j), self.seq.observable_index(j))
        if key not in self._obs:
            v = np.asarray(self.seq.f(j, self.nodes(j)), dtype=float)
            v.setflags(write=False)
            self._obs[key] = v
        return self._obs[key]

    def ones(self, j: int) -> np.ndarray:
        return np.ones(self.size)


class PulledBack:
    """L~_j g = L_j(g rho_j) / rho_{j+1} with rho_j = L_0^j rho_0.

    The reference functional at time j is m~_j(g) = m_j(g rho_j), the law of
    T_0^j under the initial measure rho_0 dm_0, so that m~_{j+1}(L~_j g) =
    m~_j(g) and L~_j 1 = 1.
    """

    def __init__(self, raw, rho0=None):
        self.raw = raw
        self.seq = raw.seq
        self.kind = raw.kind
        r0 = raw.ones(0) if rho0 is None else np.asarray(rho0, dtype=float)
        m0 = raw.mean(0, r0)
        if not m0 > 0 or r0.min() < 1e-12 * m0:
            raise SingularDensityError("initial density has minimum below 1e-12")
        self._rho = [r0 / m0]

    def density(self, j: int) -> np.ndarray:
        while len(self._rho) <= j:
            k = len(self._rho) - 1
            r = self.raw.apply(k, self._rho[k])
            if r.min() < 1e-12:
                raise SingularDensityError(f"pushed density at time {k + 1} has minimum {r.min():.3g}")
            self._rho.append(r)
        return self._rho[j]

    def basis(self, j):
        return self.raw.basis(j)

    def nodes(self, j):
        return self.raw.nodes(j)

    def dim(self, j):
        return self.raw.dim(j)

    def ones(self, j):
        return self.raw.ones(j)

    def apply(self, j: int, v):
        r0, r1 = self.density(j), self.density(j + 1)
        if np.ndim(v) == 2:
            return self.raw.apply(j, v * r0[:, None]) / r1[:, None]
        return self.raw.apply(j, v * r0) / r1

    def apply_adjoint(self, j: int, w):
        r0, r1 = self.density(j), self.density(j + 1)
        if np.ndim(w) == 2:
            return self.raw.apply_adjoint(j, w / r1[:, None]) * r0[:, None]
        return self.raw.apply_adjoint(j, w / r1) * r0

    def weights(self, j: int) -> np.ndarray:
        return self.raw.weights(j) * self.density(j)

    def mean(self, j, v):
        return self.weights(j) @ v

    def variation(self, j, v):
        return self.raw.variation(j, v)

    def compose(self, j, u):
        return self.raw.compose(j, u)

    def observable(self, j):
        return self.raw.observable(j)

    def operator(self, j: int) -> TransferMatrix:
        op = self.raw.operator(j)
        ctx = {"densities": (self.density(j), self.density(j + 1))}
        stage = self.seq.stage(j)
        return assemble(stage, op.src_basis, op.dst_basis, "pulled_back", ctx, j=j) \
            if isinstance(stage, SftStage) else TransferMatrix(
                "pulled_back", j,
                sp.diags(1.0 / self.density(j + 1)) @ op.matrix @ sp.diags(self.density(j)),
                op.src_basis, op.dst_basis)


def twisted_apply(system, j: int, v, z, f=None):
    """L_{j,z} v = L_j(v e^{z f_j}); ``z`` may be an array matching the columns of v."""
    f = system.observable(j) if f is None else f
    z = np.asarray(z)
    if z.ndim == 0:
        return system.apply(j, v * np.exp(z * f) if np.ndim(v) == 1 else v * np.exp(z * f)[:, None])
    return system.apply(j, v * np.exp(f[:, None] * z[None, :]))


# ---------------------------------------------------------------------------
# hypothesis diagnostics
# ---------------------------------------------------------------------------

def random_bv_samples(nodes, count: int, rng: np.random.Generator, positive=False):
    """Trigonometric polynomials and random step functions on ``nodes``."""
    out = []
    for s in range(count):
        if s % 2 == 0:
            deg = int(rng.integers(1, 33))
            k = np.arange(1, deg + 1)
            a = rng.standard_normal(deg) / k
            b = rng.standard_normal(deg) / k
            v = (np.cos(2 * np.pi * np.outer(nodes, k)) @ a + np.sin(2 * np.pi * np.outer(nodes, k)) @ b)
        else:
            jumps = np.sort(rng.random(int(rng.integers(1, 31))))
            levels = rng.standard_normal(jumps.size + 1)
            v = levels[np.searchsorted(jumps, nodes)]
        if positive:
            v = v - v.min() + rng.uniform(0.05, 1.0) * (np.ptp(v) + 1.0)
        out.append(v)
    return out


def _apply_n(system, j, v, n):
    for k in range(n):
        v = system.apply(j + k, v)
    return v


def verify_ly(system, j: int = 0, N: int = 1, sample_count: int = 200, rng=None) -> dict:
    """Fit the Lasota-Yorke pair (rho, K) with v(L^N h) <= rho v(h) + K ||h||_1.

    The fit minimises rho + 2 K / R with R the largest variation-to-mass
    ratio among the samples, which makes lowering rho below the true
    contraction never profitable.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    samples = random_bv_samples(system.nodes(j), sample_count, rng)
    w = system.weights(j)
    V, v, l = [], [], []
    for h in samples:
        V.append(system.variation(j + N, _apply_n(system, j, h, N)))
        v.append(system.variation(j, h))
        l.append(float(w @ np.abs(h)))
    V, v, l = map(np.asarray, (V, v, l))
    R = float(np.max(v / l))
    res = linprog(c=[1.0, 2.0 / R], A_ub=-np.vstack([v, l]).T, b_ub=-V,
                  bounds=[(0, None), (0, None)], method="highs")
    rho, K = (float(t) for t in res.x)
    return {"rho_hat": rho, "K_hat": K, "pass": bool(rho < 1)}


def verify_sc(system, a: float, horizon: int, sample_count: int = 100, rng=None, window=(0,)) -> dict:
    """Smallest n <= horizon with min(L_j^n h) >= alpha m_j(h) over cone samples and j in window."""
    rng = np.random.default_rng(0) if rng is None else rng
    worst = np.full(horizon, np.inf)
    offender = [None] * horizon
    for j in window:
        w = system.weights(j)
        nodes = system.nodes(j)
        cands = random_bv_samples(nodes, 4 * sample_count, rng, positive=True)
        cands.append(np.ones(system.dim(j)))
        members = []
        for h in cands:
            mh = float(w @ h)
            if system.variation(j, h) <= a * mh:
                members.append(h / mh)
            if len(members) >= sample_count:
                break
        for h in members:
            v = h
            for n in range(horizon):
                v = system.apply(j + n, v)
                val = float(np.min(np.real(v)))
                if val < worst[n]:
                    worst[n] = val
                    offender[n] = (j, h)
    for n in range(horizon):
        if worst[n] > 0:
            return {"n_a": n + 1, "alpha_a": float(worst[n]), "pass": True}
    return {"n_a": None, "alpha_a": float(worst[-1]), "pass": False, "offender": offender[-1]}


def verify_min_implies_sc(system, horizon: int = 50, sample_count: int = 20, rng=None) -> dict:
    """delta_0 = inf_n min L_0^n 1, sup ||L_0^n 1||, decay on mean-zero samples, alpha = delta_2/2."""
    rng = np.random.default_rng(0) if rng is None else rng
    v = system.ones(0)
    mins, sups = [], []
    for n in range(horizon):
        v = system.apply(n, v)
        mins.append(float(v.min()))
        sups.append(float(np.abs(v).max()))
    delta0 = min(mins)
    if delta0 <= 1e-12:
        return {"applicable": False, "delta0": delta0}
    C = max(max(sups), 1.0)
    delta2 = delta0 / C
    # decay constant on mean-zero samples
    norms = np.zeros(horizon)
    for h in random_bv_samples(system.nodes(0), sample_count, rng):
        h = h - system.mean(0, h) * system.ones(0) / system.mean(0, system.ones(0))
        h0 = system.variation(0, h) + float(system.weights(0) @ np.abs(h))
        g = h
        for n in range(horizon):
            g = system.apply(n, g)
            nb = system.variation(n + 1, g) + float(system.weights(n + 1) @ np.abs(g))
            norms[n] = max(norms[n], nb / h0)
    ns = np.arange(1, horizon + 1)
    keep = norms > 1e-13
    slope, icpt, _ = fit_line(ns[keep], np.log(norms[keep])) if keep.sum() >= 2 else (-np.inf, 0.0, 1.0)
    return {"applicable": True, "delta0": delta0, "sup_norm": C, "delta2": delta2,
            "alpha": delta2 / 2, "decay_rate": float(np.exp(slope)), "C1": float(np.exp(icpt))}


def bound1_profile(system, n_max: int = 200, window=(0,)) -> dict:
    """sup_j ||L_j^n 1||_inf for n <= n_max and the slope of its log against n."""
    prof = np.zeros(n_max)
    for j in window:
        v = system.ones(j)
        for n in range(n_max):
            v = system.apply(j + n, v)
            prof[n] = max(prof[n], float(np.abs(v).max()))
    slope, _, _ = fit_line(np.arange(1, n_max + 1), np.log(prof))
    return {"profile": prof, "sup": float(prof.max()), "slope": slope}


def duality_gap(system, j: int, f_next, g) -> float:
    """|m_j((f o T_j) g) - m_{j+1}(f L_j g)|; f_next given on time j+1 nodes."""
    lhs = system.weights(j) @ (system.compose(j, f_next) * g)
    rhs = system.weights(j + 1) @ (f_next * system.apply(j, g))
    return float(abs(lhs - rhs))
