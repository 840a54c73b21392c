"""Discrete function spaces: grid and word bases, BV norms, cones, Hilbert metric.

Grid functions live on the uniform grid x_i = i/(G-1).  Evaluation away from
the nodes uses local Lagrange interpolation of a fixed order whose stencils
never cross a breakpoint of the basis (the branch boundaries of the stage at
that time), so functions that are smooth on each branch domain are resolved
to high order.  ``order=1`` gives the plain piecewise-linear interpolant,
which is positivity preserving.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

__all__ = [
    "GridBasis", "WordBasis", "FieldFunction", "NormReport", "variation",
    "bv_norm", "cone_check", "hilbert_metric", "split_bv", "lagrange_weights",
]


def lagrange_weights(t, q):
    """Weights of the q-point Lagrange interpolant on nodes 0..q-1 at offsets t."""
    t = np.asarray(t, dtype=float)
    w = np.ones((q,) + t.shape)
    for k in range(q):
        for m in range(q):
            if m != k:
                w[k] *= (t - m) / (k - m)
    return w


class GridBasis:
    """Uniform grid on [0, 1] with branch-aware local interpolation.

    Parameters
    ----------
    size : int
        Number of nodes G (>= 2).
    breakpoints : sequence of float
        Interior points where functions may jump.  Piece k is the half-open
        interval between consecutive breakpoints; a node lying exactly on a
        breakpoint belongs to the piece on its right.
    order : int
        Polynomial degree of the local interpolant.
    """

    kind = "grid"

    def __init__(self, size: int = 4096, breakpoints=(), order: int = 5):
        if size < 2:
            raise ValueError("grid size must be >= 2")
        self.size = int(size)
        self.order = int(order)
        self.h = 1.0 / (self.size - 1)
        self.nodes = np.linspace(0.0, 1.0, self.size)
        bps = sorted(float(b) for b in breakpoints if 0.0 < b < 1.0)
        self.breakpoints = tuple(bps)
        self.edges = np.array([0.0] + bps + [1.0])
        # node index range [first, last] per piece
        first = np.searchsorted(self.nodes, self.edges[:-1] - 1e-13, side="left")
        last = np.searchsorted(self.nodes, self.edges[1:] - 1e-13, side="left") - 1
        last[-1] = self.size - 1
        self._first = first
        self._last = last
        counts = last - first + 1
        if np.any(counts < 2):
            raise ValueError("each piece needs at least two grid nodes")
        self._q = np.minimum(self.order + 1, counts)

    def __repr__(self):
        return f"GridBasis(size={self.size}, breakpoints={self.breakpoints}, order={self.order})"

    def __eq__(self, other):
        return (isinstance(other, GridBasis) and other.size == self.size
                and other.breakpoints == self.breakpoints and other.order == self.order)

    def __hash__(self):
        return hash((self.size, self.breakpoints, self.order))

    @property
    def dim(self) -> int:
        return self.size

    def piece_of(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.edges, x, side="right") - 1
        return np.clip(idx, 0, len(self.edges) - 2)

    def eval_matrix(self, x, pieces=None) -> sp.csr_matrix:
        """Sparse matrix E with (E v)_l = interpolant of node values v at x_l.

        ``pieces`` forces the piece used for each point (needed for limits at
        the closed end of a half-open branch).
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        pieces = self.piece_of(x) if pieces is None else np.broadcast_to(np.asarray(pieces), x.shape)
        rows, cols, vals = [], [], []
        for p in np.unique(pieces):
            m = np.flatnonzero(pieces == p)
            q = int(self._q[p])
            lo, hi = int(self._first[p]), int(self._last[p])
            i = np.floor(x[m] / self.h).astype(np.int64)
            start = np.clip(i - (q - 1) // 2, lo, hi - q + 1)
            t = x[m] / self.h - start
            w = lagrange_weights(t, q)
            for k in range(q):
                rows.append(m)
                cols.append(start + k)
                vals.append(w[k])
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        return sp.csr_matrix((vals, (rows, cols)), shape=(x.size, self.size))

    def interpolate(self, values, x, pieces=None):
        return self.eval_matrix(x, pieces) @ np.asarray(values)

    @cached_property
    def quad_weights(self) -> np.ndarray:
        """Weights w with sum w_i v_i = integral of the interpolant over [0, 1]."""
        knots = np.union1d(self.nodes, self.edges)
        a, b = knots[:-1], knots[1:]
        keep = b - a > 1e-15
        a, b = a[keep], b[keep]
        ng = max(2, (self.order + 2) // 2 + 1)
        gx, gw = np.polynomial.legendre.leggauss(ng)
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        pts = (mid[:, None] + half[:, None] * gx[None, :]).ravel()
        wts = (half[:, None] * gw[None, :]).ravel()
        pieces = np.repeat(self.piece_of(mid), ng)
        E = self.eval_matrix(pts, pieces)
        w = np.asarray(E.T @ wts).ravel()
        w.setflags(write=False)
        return w

    def integrate(self, values):
        return self.quad_weights @ np.asarray(values)

    def variation(self, values) -> float:
        return float(np.abs(np.diff(np.asarray(values), axis=0)).sum(axis=0))

    def sample(self, fn):
        return np.asarray(fn(self.nodes))


class WordBasis:
    """Functions on the admissible words of a fixed depth starting at time j.

    Parameters
    ----------
    words : int array (W, m)
        Admissible words in lexicographic order.
    alpha : float
        Holder exponent of the word metric d(x, y) = 2^{-(common prefix)}.
    """

    kind = "word"

    def __init__(self, words, alpha: float = 1.0):
        words = np.asarray(words, dtype=np.int64)
        if words.ndim != 2:
            raise ValueError("words must be a 2-d array")
        self.words = words
        self.depth = words.shape[1]
        self.alpha = float(alpha)
        self.base = int(words.max()) + 1 if words.size else 1
        codes = self.encode(words)
        order = np.argsort(codes)
        self._codes = codes[order]
        self._pos = order

    def __repr__(self):
        return f"WordBasis(depth={self.depth}, size={self.dim})"

    @property
    def dim(self) -> int:
        return self.words.shape[0]

    def encode(self, words):
        words = np.asarray(words, dtype=np.int64)
        code = np.zeros(words.shape[:-1], dtype=np.int64)
        for k in range(words.shape[-1]):
            code = code * max(self.base, 1) + words[..., k]
        return code

    def index(self, words):
        """Row index of each word; -1 for words not in the basis."""
        words = np.asarray(words, dtype=np.int64)
        if words.size and words.max() >= self.base:
            out = np.full(words.shape[:-1], -1)
            ok = (words < self.base).all(-1)
            out[ok] = self.index(words[ok])
            return out
        codes = self.encode(words)
        k = np.searchsorted(self._codes, codes)
        k = np.clip(k, 0, len(self._codes) - 1)
        found = self._codes[k] == codes
        return np.where(found, self._pos[k], -1)

    @classmethod
    def admissible(cls, adjacencies, d0: int, alpha: float = 1.0):
        """All words w_0..w_{m-1} with A_s[w_s, w_{s+1}] = 1."""
        words = np.arange(d0)[:, None]
        for A in adjacencies:
            A = np.asarray(A)
            nxt = [np.concatenate([np.repeat(w[None], int(A[w[-1]].sum()), 0),
                                   np.flatnonzero(A[w[-1]])[:, None]], axis=1) for w in words]
            words = np.concatenate(nxt, axis=0)
        return cls(words, alpha)

    def variation(self, values) -> float:
        """max_k 2^{alpha k} * max |h(w) - h(w')| over pairs sharing a k-prefix."""
        values = np.asarray(values)
        best = 0.0
        for k in range(self.depth):
            keys = self.encode(self.words[:, :k]) if k else np.zeros(self.dim, dtype=np.int64)
            for key in np.unique(keys):
                v = values[keys == key]
                if v.size < 2:
                    continue
                if np.iscomplexobj(v):
                    spread = float(np.max(np.abs(v[:, None] - v[None, :])))
                else:
                    spread = float(v.max() - v.min())
                best = max(best, spread * 2.0 ** (self.alpha * k))
        return best


@dataclass(frozen=True)
class NormReport:
    l1: float
    variation: float
    sup: float
    bv: float


@dataclass(frozen=True)
class FieldFunction:
    """An element of B_j: values on a grid or word basis at time j."""
    basis: object
    values: np.ndarray
    j: int = 0

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != (self.basis.dim,):
            raise ValueError("values do not match the basis")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        object.__setattr__(self, "values", v)

    def with_values(self, values) -> "FieldFunction":
        return FieldFunction(self.basis, values, self.j)


def _default_weights(basis, weights):
    if weights is not None:
        return np.asarray(weights)
    if basis.kind == "grid":
        return basis.quad_weights
    raise ValueError("word bases need explicit measure weights")


def variation(h: FieldFunction) -> float:
    return float(h.basis.variation(h.values))


def bv_norm(h: FieldFunction, weights=None) -> NormReport:
    w = _default_weights(h.basis, weights)
    l1 = float(w @ np.abs(h.values))
    v = variation(h)
    return NormReport(l1, v, float(np.max(np.abs(h.values))), l1 + v)


def cone_check(h: FieldFunction, a: float, weights=None) -> dict:
    if a <= 0:
        raise ValueError("cone parameter must be positive")
    w = _default_weights(h.basis, weights)
    vals = np.real(h.values)
    mean = float(w @ vals)
    v = variation(h)
    if mean > 0:
        ratio = v / mean
    else:
        ratio = np.inf if v > 0 else 0.0
    member = bool(np.all(vals >= 0) and np.isfinite(ratio) and v <= a * mean * (1 + 1e-12) + 1e-15)
    return {"member": member, "ratio": ratio}


def hilbert_metric(f, g) -> float:
    """log(max f/g / min f/g) on the pointwise-positive cone."""
    f = np.asarray(getattr(f, "values", f), dtype=float)
    g = np.asarray(getattr(g, "values", g), dtype=float)
    if np.any(f <= 0) or np.any(g <= 0):
        raise ValueError("hilbert_metric needs strictly positive inputs")
    r = f / g
    return float(np.log(r.max()) - np.log(r.min()))


def split_bv(g: FieldFunction, a: float, weights=None):
    """g = g1 - g2 with g1 = g + C0, g2 = C0 both in the cone C_a.

    Returns (g1, g2, r0) with r0 = (||g1|| + ||g2||) / ||g|| in BV norm.
    """
    V = 0.0   # variation of the constant function
    if a <= V:
        raise ValueError("cone parameter must exceed the variation of 1")
    rep = bv_norm(g, weights)
    c0 = rep.sup + (1 + a) / (a - V) * rep.bv
    g1 = g.with_values(np.real(g.values) + c0)
    g2 = g.with_values(np.full(g.basis.dim, c0))
    if rep.bv == 0:
        return g1, g2, 0.0 if c0 == 0 else np.inf
    r0 = (bv_norm(g1, weights).bv + bv_norm(g2, weights).bv) / rep.bv
    return g1, g2, r0
