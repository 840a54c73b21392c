"""Sequential Gibbs measures on subshifts of finite type with memory-1 potentials.

For memory-1 potentials the raw operator maps functions of the first symbol to
functions of the first symbol, so the triplet (lambda_j, h_j, nu_j) lives on
the alphabets:

    M_j h_j = lambda_j h_{j+1},   M_j^T nu_{j+1} = lambda_j nu_j,   nu_j(h_j) = 1

with M_j[b, a] = A_j[a, b] exp(phi_j(a, b)).  The Gibbs measure mu_j is the
Markov measure with marginal pi_j = h_j nu_j and transitions
p_j(a -> b) = A_j[a, b] exp(phi_j(a, b)) nu_{j+1}(b) / (lambda_j nu_j(a)).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .funcspace import WordBasis
from .maps import MapSequence, SftStage
from .rpf import fit_geometric

__all__ = [
    "ReducibleError", "GibbsSystem", "build", "cylinder_mass", "gibbs_ratio_check",
    "markov_sample", "TwoSidedObservable", "SinaiReduction", "sinai_reduce",
    "lambda_equivalence", "two_sided_extend", "GibbsWordSystem", "normalized_decay",
    "mixing_check", "birkhoff_gap", "two_sided_mass",
]


class ReducibleError(ValueError):
    """Adjacency products over the mixing horizon are not entrywise positive."""


def mixing_check(seq: MapSequence, window, horizon: int | None = None) -> bool:
    """A_j A_{j+1} ... A_{j+M} > 0 entrywise for every j in the window."""
    M = seq.mixing_horizon if horizon is None else horizon
    for j in range(window[0], window[1] + 1):
        P = np.eye(seq.stage(j, True).alphabet_in, dtype=np.int64)
        for k in range(M + 1):
            P = np.minimum(P @ seq.stage(j + k, True).adjacency.astype(np.int64), 1)
        if not np.all(P > 0):
            return False
    return True


@dataclass
class GibbsSystem:
    seq: MapSequence
    window: tuple                 # (j0, j1): triplet stored for j0 .. j1 + 1
    burn_in: int
    lambdas: list = field(repr=False)
    densities: list = field(repr=False)
    duals: list = field(repr=False)
    residual_h: float = 0.0
    residual_nu: float = 0.0

    def _k(self, j: int) -> int:
        k = j - self.window[0]
        if not 0 <= k < len(self.densities):
            raise IndexError(f"time {j} outside the Gibbs window {self.window}")
        return k

    def stage(self, j: int) -> SftStage:
        return self.seq.stage(j, allow_negative=True)

    def lam(self, j: int) -> float:
        return self.lambdas[self._k(j)]

    def h(self, j: int) -> np.ndarray:
        return self.densities[self._k(j)]

    def nu(self, j: int) -> np.ndarray:
        return self.duals[self._k(j)]

    def pi(self, j: int) -> np.ndarray:
        """Marginal of mu_j on the first symbol."""
        return self.h(j) * self.nu(j)

    def weighted(self, j: int) -> np.ndarray:
        """W[a, b] = A_j[a, b] exp(phi_j(a, b))."""
        st = self.stage(j)
        return st.adjacency * np.exp(st.potential)

    def p(self, j: int) -> np.ndarray:
        """Transition matrix p_j[a, b] of mu_j from coordinate j to j+1."""
        return self.weighted(j) * self.nu(j + 1)[None, :] / (self.lam(j) * self.nu(j)[:, None])

    def reverse(self, j: int) -> np.ndarray:
        """q_j[b, a] = P(x_j = a | x_{j+1} = b) under the two-sided measure."""
        return (self.weighted(j) * self.h(j)[:, None] / (self.lam(j) * self.h(j + 1)[None, :])).T

    def normalized(self, j: int) -> np.ndarray:
        """Matrix of L^_j g = L_j(g h_j) / (lambda_j h_{j+1}) on first-symbol functions."""
        return self.stage(j).weights() * self.h(j)[None, :] / (self.lam(j) * self.h(j + 1)[:, None])

    @property
    def times(self) -> range:
        """Times j with a full step (lambda_j, p_j) available."""
        return range(self.window[0], self.window[1] + 1)


def build(seq: MapSequence, window=(0, 0), burn_in: int = 60, check_mixing: bool = True) -> GibbsSystem:
    """Non-normalised sequential RPF triplet by forward and backward burn-in.

    nu is burned in backward from the uniform vector with lambda_j the
    normaliser that keeps nu_j a probability vector; h is burned in forward
    from the constant 1 and normalised by nu_j(h_j) = 1.  Negative times are
    used when the schedule is two-sided; explicit schedules start at 0.
    """
    if seq.kind != "sft":
        raise ValueError("build needs an SFT sequence")
    if burn_in < 1:
        raise ValueError("burn_in must be >= 1")
    j0, j1 = int(window[0]), int(window[1])
    two = seq.schedule.two_sided
    if j0 < 0 and not two:
        raise IndexError("negative times need a two-sided schedule")
    if check_mixing and not mixing_check(seq, (j0, j1)):
        raise ReducibleError("adjacency products over the mixing horizon are not positive")
    stage = lambda j: seq.stage(j, allow_negative=True)  # noqa: E731
    end = j1 + 1 + burn_in
    if seq.schedule.kind == "explicit":
        end = min(end, len(seq.schedule.pattern) - 1)
        if end < j1 + 1:
            raise IndexError("explicit schedule shorter than the window")
    nu = np.full(stage(end).alphabet_in, 1.0 / stage(end).alphabet_in) if end > j1 + 1 else None
    if nu is None:
        nu = np.full(stage(j1).alphabet_out, 1.0 / stage(j1).alphabet_out)
    for j in range(end - 1, j1, -1):
        nu = stage(j).weights().T @ nu
        nu = nu / nu.sum()
    duals = [nu]
    lams = []
    for j in range(j1, j0 - 1, -1):
        w = stage(j).weights().T @ duals[-1]
        lam = float(w.sum())
        lams.append(lam)
        duals.append(w / lam)
    duals = duals[::-1]
    lams = lams[::-1]
    start = j0 - burn_in if two else max(j0 - burn_in, 0)
    h = np.ones(stage(start).alphabet_in)
    for j in range(start, j0):
        h = stage(j).weights() @ h
        h = h / h.sum()
    dens = []
    for k, j in enumerate(range(j0, j1 + 2)):
        h = h / float(duals[k] @ h)
        dens.append(h)
        if j <= j1:
            h = stage(j).weights() @ h
    res_h = max(float(np.max(np.abs(stage(j).weights() @ dens[k] - lams[k] * dens[k + 1])))
                for k, j in enumerate(range(j0, j1 + 1)))
    res_nu = max(float(np.max(np.abs(stage(j).weights().T @ duals[k + 1] - lams[k] * duals[k])))
                 for k, j in enumerate(range(j0, j1 + 1)))
    if min(float(d.min()) for d in dens) <= 0 or min(float(d.min()) for d in duals) <= 0:
        raise ReducibleError("triplet is not strictly positive")
    return GibbsSystem(seq, (j0, j1), burn_in, lams, dens, duals, res_h, res_nu)


# ---------------------------------------------------------------------------
# cylinders
# ---------------------------------------------------------------------------

def _admissible(sys: GibbsSystem, j: int, word) -> bool:
    for s in range(len(word) - 1):
        A = sys.stage(j + s).adjacency
        if not (0 <= word[s] < A.shape[0] and 0 <= word[s + 1] < A.shape[1]) or A[word[s], word[s + 1]] != 1:
            return False
    return 0 <= word[0] < sys.stage(j).alphabet_in


def cylinder_mass(sys: GibbsSystem, j: int, word, with_flag: bool = False):
    """mu_j([w]) = pi_j(w_0) prod_s p_{j+s}(w_s -> w_{s+1}); 0 for inadmissible words."""
    word = [int(s) for s in word]
    if not word:
        raise ValueError("empty word")
    if not _admissible(sys, j, word):
        return (0.0, False) if with_flag else 0.0
    m = float(sys.pi(j)[word[0]])
    for s in range(len(word) - 1):
        m *= float(sys.p(j + s)[word[s], word[s + 1]])
    return (m, True) if with_flag else m


def _words_with(sys: GibbsSystem, j: int, depth: int):
    """All admissible words of ``depth`` at time j with log mass and Birkhoff sum of phi."""
    d0 = sys.stage(j).alphabet_in
    words = np.arange(d0)[:, None]
    logm = np.log(sys.pi(j))
    sphi = np.zeros(d0)
    for s in range(depth - 1):
        st = sys.stage(j + s)
        a, b = np.nonzero(st.adjacency)
        sel = [np.flatnonzero(a == t) for t in range(st.alphabet_in)]
        rows, nxt = [], []
        for t in range(st.alphabet_in):
            idx = np.flatnonzero(words[:, -1] == t)
            for e in sel[t]:
                rows.append(idx)
                nxt.append(np.full(idx.size, b[e]))
        rows = np.concatenate(rows)
        nxt = np.concatenate(nxt)
        last = words[rows, -1]
        logm = logm[rows] + np.log(sys.p(j + s)[last, nxt])
        sphi = sphi[rows] + st.potential[last, nxt]
        words = np.concatenate([words[rows], nxt[:, None]], axis=1)
    return words, logm, sphi


def gibbs_ratio_check(sys: GibbsSystem, depth_max: int, window=None, stable_from: int | None = None) -> dict:
    """Gibbs ratios mu_j([w]) lambda_{j,r} / exp(S_{j,r} phi(x)) over admissible words w of length r.

    S_{j,r} phi(x) = sum_{s<r} phi(x_s, x_{s+1}) also reads the symbol after
    the word, so the ratio is taken over every admissible next symbol.
    C_hat(d) is the running max over depths <= d of max(ratio, 1/ratio);
    ``drift`` is its change beyond depth ``stable_from`` (default
    max(3, mixing horizon + 2), after which every pair of end symbols is
    reachable).
    """
    if depth_max < 2:
        raise ValueError("depth_max must be >= 2")
    js = list(window) if window is not None else [j for j in sys.times if j + depth_max <= sys.window[1]]
    if not js:
        raise ValueError("window too short for this depth")
    per_depth = []
    C = 0.0
    C_hat = []
    for r in range(1, depth_max + 1):
        lo, hi = np.inf, 0.0
        for j in js:
            words, logm, sphi = _words_with(sys, j, r + 1)
            # mass of the length-r prefix
            logm = logm - np.log(sys.p(j + r - 1)[words[:, -2], words[:, -1]])
            loglam = float(np.sum(np.log([sys.lam(j + s) for s in range(r)])))
            ratio = np.exp(logm + loglam - sphi)
            lo, hi = min(lo, float(ratio.min())), max(hi, float(ratio.max()))
        per_depth.append((r, lo, hi))
        C = max(C, hi, 1.0 / lo)
        C_hat.append(C)
    d0 = max(3, sys.seq.mixing_horizon + 2) if stable_from is None else stable_from
    tail = C_hat[d0 - 1:] if d0 <= depth_max else C_hat[-1:]
    drift = float(max(tail) - min(tail))
    return {"C_hat": C_hat[-1], "C_by_depth": C_hat, "per_depth": per_depth, "drift": drift}


def normalized_decay(sys: GibbsSystem, g, n_max: int, j: int | None = None, n0: int = 5) -> dict:
    """sup |L^_j^n g - mu_j(g)| for a first-symbol function g, with a geometric fit."""
    j = sys.window[0] if j is None else j
    g = np.asarray(g, dtype=float)
    mg = float(sys.pi(j) @ g)
    out = np.empty(n_max)
    v = g
    for n in range(n_max):
        v = sys.normalized(j + n) @ v
        out[n] = float(np.max(np.abs(v - mg)))
    return {"norms": out, "fit": fit_geometric(out, n0, 1e-14 * max(1.0, float(np.abs(g).max())))}


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _draw(cdf, u):
    """Row-wise inverse CDF: cdf (count, d), u (count,)."""
    k = (u[:, None] > cdf).sum(axis=1)
    return np.minimum(k, cdf.shape[1] - 1)


def markov_sample(sys: GibbsSystem, n: int, count: int, rng, j: int | None = None) -> np.ndarray:
    """Paths (count, n) of mu_j on coordinates j .. j+n-1 (Doob-transformed chain)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    j = sys.window[0] if j is None else j
    out = np.empty((count, n), dtype=np.int64)
    cdf0 = np.cumsum(sys.pi(j))
    out[:, 0] = np.minimum(np.searchsorted(cdf0 / cdf0[-1], rng.random(count), side="right"), cdf0.size - 1)
    for s in range(1, n):
        P = np.cumsum(sys.p(j + s - 1), axis=1)
        P = P / P[:, -1:]
        out[:, s] = _draw(P[out[:, s - 1]], rng.random(count))
    return out


# ---------------------------------------------------------------------------
# two-sided shifts: Sinai reduction, consistency
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TwoSidedObservable:
    """psi_j on two-sided words over coordinates j-m .. j+m.

    ``tables[k]`` has shape (d,) * (2m + 1); time j uses tables[j mod len].
    Coordinates are ordered left to right, so index m is coordinate j.
    """
    tables: tuple
    m: int

    def __post_init__(self):
        tabs = tuple(np.asarray(t, dtype=float) for t in self.tables)
        if not tabs:
            raise ValueError("need at least one table")
        for t in tabs:
            if t.ndim != 2 * self.m + 1:
                raise ValueError("table rank must be 2m + 1")
        object.__setattr__(self, "tables", tabs)

    def table(self, j: int) -> np.ndarray:
        return self.tables[j % len(self.tables)]

    def __call__(self, j: int, words) -> np.ndarray:
        """Evaluate psi_j on words (N, 2m+1) over coordinates j-m .. j+m."""
        words = np.asarray(words, dtype=np.int64)
        return self.table(j)[tuple(words.T)]

    @property
    def sup_bound(self) -> float:
        return float(max(np.abs(t).max() for t in self.tables))


@dataclass
class SinaiReduction:
    m: int
    anchors: dict                 # (j, t) -> anchor past (coords j-m .. j-1)
    u: dict                       # j -> table over coords j-m .. j+2m-1
    phi: dict                     # j -> table over coords j .. j+2m
    sup_u: float
    identity_residual: float
    past_dependence: float


def _anchor(seq: MapSequence, j: int, t: int, m: int):
    """Lexicographically minimal admissible past (a_{j-1}, a_{j-2}, ...) leading into t, as coords j-m .. j-1."""
    past = []
    nxt = t
    for k in range(1, m + 1):
        A = seq.stage(j - k, allow_negative=True).adjacency
        cands = np.flatnonzero(A[:, nxt])
        if cands.size == 0:
            raise ValueError(f"no admissible past for symbol {t} at time {j}")
        nxt = int(cands[0])
        past.append(nxt)
    return tuple(past[::-1])


def _path_words(seq: MapSequence, j: int, length: int) -> np.ndarray:
    """Admissible words over coords j .. j+length-1."""
    adj = [seq.stage(j + s, True).adjacency for s in range(length - 1)]
    return WordBasis.admissible(adj, seq.stage(j, True).alphabet_in).words


def _u_values(seq, psi: TwoSidedObservable, j: int, words, anchors) -> np.ndarray:
    """u_j on words over coords j-m .. j+2m-1 (the series stops after m terms)."""
    m = psi.m
    star = words.copy()
    for t in np.unique(words[:, m]):
        sel = words[:, m] == t
        star[sel, :m] = anchors[(j, int(t))]
    total = np.zeros(words.shape[0])
    for k in range(m):
        sl = slice(k, k + 2 * m + 1)
        total += psi(j + k, words[:, sl]) - psi(j + k, star[:, sl])
    return total


def sinai_reduce(seq: MapSequence, psi: TwoSidedObservable, times) -> SinaiReduction:
    """psi_j = u_j - u_{j+1} o sigma + phi_j o pi_j on all admissible words.

    The anchor point for (j, t) is the greedy lexicographically minimal
    admissible past.  u_j depends on coordinates j-m .. j+2m-1 and phi_j on
    j .. j+2m.  ``past_dependence`` is the largest spread of
    psi_j - u_j + u_{j+1} o sigma over words that agree from coordinate j on;
    it must vanish for phi_j to be one-sided.
    """
    m = psi.m
    times = list(times)
    if m == 0:
        phi = {j: psi.table(j).copy() for j in times}
        return SinaiReduction(0, {}, {j: np.zeros(1) for j in times}, phi, 0.0, 0.0, 0.0)
    d = seq.stage(times[0], True).alphabet_in
    anchors = {}
    for j in set(times) | {j + 1 for j in times}:
        for t in range(seq.stage(j, True).alphabet_in):
            anchors[(j, t)] = _anchor(seq, j, t, m)
    u, phi = {}, {}
    sup_u, resid, dep = 0.0, 0.0, 0.0
    shape_u = (d,) * (3 * m)
    for j in times:
        W = _path_words(seq, j - m, 3 * m + 1)          # coords j-m .. j+2m
        uj = _u_values(seq, psi, j, W[:, :3 * m], anchors)
        uj1 = _u_values(seq, psi, j + 1, W[:, 1:], anchors)
        pj = psi(j, W[:, :2 * m + 1])
        val = pj - uj + uj1
        tab = np.full((d,) * (2 * m + 1), np.nan)
        idx = tuple(W[:, m:].T)
        lo = np.full(tab.shape, np.inf)
        hi = np.full(tab.shape, -np.inf)
        np.minimum.at(lo, idx, val)
        np.maximum.at(hi, idx, val)
        ok = np.isfinite(lo)
        dep = max(dep, float(np.max(hi[ok] - lo[ok])) if ok.any() else 0.0)
        tab[ok] = 0.5 * (lo[ok] + hi[ok])
        phi[j] = tab
        ut = np.zeros(shape_u)
        ut[tuple(W[:, :3 * m].T)] = uj
        u[j] = ut
        sup_u = max(sup_u, float(np.abs(uj).max()), float(np.abs(uj1).max()))
        resid = max(resid, float(np.max(np.abs(pj - (uj - uj1 + tab[idx])))))
    return SinaiReduction(m, anchors, u, phi, sup_u, resid, dep)


def birkhoff_gap(seq: MapSequence, psi: TwoSidedObservable, red: SinaiReduction, paths, j0: int = 0) -> np.ndarray:
    """max over n <= N of |S_n psi - S_n phi| per path.

    ``paths`` (count, N + 3m) holds coordinates j0-m .. j0+N+2m-1.
    """
    m = red.m
    paths = np.asarray(paths, dtype=np.int64)
    N = paths.shape[1] - 3 * m
    diff = np.zeros(paths.shape[0])
    best = np.zeros(paths.shape[0])
    for k in range(N):
        j = j0 + k
        a = psi(j, paths[:, k:k + 2 * m + 1])
        b = red.phi[j][tuple(paths[:, k + m:k + 3 * m + 1].T)] if m else red.phi[j][tuple(paths[:, k:k + 1].T)]
        diff += a - b
        best = np.maximum(best, np.abs(diff))
    return best


def lambda_equivalence(lam_a, lam_b, bound: float = 1e6) -> dict:
    """zeta_j = beta_{0,j} / alpha_{0,j}; equivalent iff zeta stays in [1/bound, bound].

    Equivalence is a statement about all j; over a finite window the
    verdict is the heuristic that log zeta stays within log(bound).  The
    least-squares drift of log zeta per step is reported alongside.
    """
    a = np.asarray(lam_a, dtype=float)
    b = np.asarray(lam_b, dtype=float)
    if a.shape != b.shape or np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("sequences must be positive and of equal length")
    logz = np.concatenate([[0.0], np.cumsum(np.log(b) - np.log(a))])
    zeta = np.exp(logz)
    n = np.arange(logz.size)
    drift = float(np.polyfit(n, logz, 1)[0]) if logz.size > 1 else 0.0
    eq = bool(np.max(np.abs(logz)) <= np.log(bound))
    return {"equivalent": eq, "zeta": zeta, "drift": drift,
            "ratio_check": float(np.max(np.abs(a / b - zeta[:-1] / zeta[1:])))}


def two_sided_mass(sys: GibbsSystem, j: int, word, r: int) -> float:
    """Mass of the two-sided cylinder over coords j-r .. j-r+len-1 computed at time j.

    The marginal at coordinate j times the forward transitions to the right
    and the reverse kernel q to the left.
    """
    word = [int(s) for s in word]
    if not 0 <= r < len(word):
        raise ValueError("coordinate j must lie inside the word")
    if not _admissible(sys, j - r, word):
        return 0.0
    mass = cylinder_mass(sys, j, word[r:])
    for s in range(r, 0, -1):
        mass *= float(sys.reverse(j - r + s - 1)[word[s], word[s - 1]])
    return mass


def two_sided_extend(sys: GibbsSystem, count: int = 100, depth_max: int = 8, rng=None) -> dict:
    """Kolmogorov consistency of the two-sided extension on random cylinders.

    A cylinder over coords j-r .. j-r+L-1 has its mass computed at time j
    (marginal at j, forward and reverse kernels) and, after shifting, as the
    one-sided mass mu_{j-r}([w]).
    """
    rng = np.random.default_rng(5) if rng is None else rng
    j0, j1 = sys.window
    worst = 0.0
    checked = 0
    while checked < count:
        L = int(rng.integers(1, depth_max + 1))
        r = int(rng.integers(0, L))
        jr = int(rng.integers(j0, j1 - L + 2))
        j = jr + r
        paths = markov_sample(sys, L, 1, rng, jr)
        w = paths[0]
        a = two_sided_mass(sys, j, w, r)
        b = cylinder_mass(sys, jr, w)
        worst = max(worst, abs(a - b) / max(b, 1e-300))
        checked += 1
    return {"max_gap": worst, "checked": checked}


# ---------------------------------------------------------------------------
# word-basis system (normalised operators with reference mu_j)
# ---------------------------------------------------------------------------

class GibbsWordSystem:
    """Normalised Gibbs operators on functions of the first ``depth`` symbols.

    Reference functionals are the Gibbs masses mu_j([w]); L^_j 1 = 1 and
    mu_{j+1}(L^_j g) = mu_j(g), so this system is its own pulled-back
    system for the initial law mu_0.  ``compose`` is the conditional
    expectation of u o sigma given the first ``depth`` symbols, which is
    exact for u depending on fewer than ``depth`` symbols.
    """

    kind = "sft"

    def __init__(self, gibbs: GibbsSystem, depth: int = 2, alpha: float = 1.0):
        if depth < 1:
            raise ValueError("depth must be >= 1")
        self.gibbs = gibbs
        self.seq = gibbs.seq
        self.depth = int(depth)
        self.alpha = float(alpha)
        self._bases, self._ops, self._comp, self._w = {}, {}, {}, {}

    def _check(self, j):
        lo, hi = self.gibbs.window
        if not lo <= j <= hi - self.depth + 2:
            raise IndexError(f"time {j} outside the usable window")

    def basis(self, j: int) -> WordBasis:
        if j not in self._bases:
            adj = [self.gibbs.stage(j + s).adjacency for s in range(self.depth - 1)]
            self._bases[j] = WordBasis.admissible(adj, self.gibbs.stage(j).alphabet_in, self.alpha)
        return self._bases[j]

    def nodes(self, j: int) -> np.ndarray:
        return self.basis(j).words

    def dim(self, j: int) -> int:
        return self.basis(j).dim

    def ones(self, j: int) -> np.ndarray:
        return np.ones(self.dim(j))

    def weights(self, j: int) -> np.ndarray:
        if j not in self._w:
            self._check(j)
            W = self.nodes(j)
            w = self.gibbs.pi(j)[W[:, 0]].copy()
            for s in range(self.depth - 1):
                w *= self.gibbs.p(j + s)[W[:, s], W[:, s + 1]]
            w.setflags(write=False)
            self._w[j] = w
        return self._w[j]

    def mean(self, j, v):
        return self.weights(j) @ v

    def variation(self, j, v) -> float:
        return self.basis(j).variation(v)

    def matrix(self, j: int) -> sp.csr_matrix:
        if j not in self._ops:
            self._check(j)
            src, dst = self.basis(j), self.basis(j + 1)
            Ahat = self.gibbs.normalized(j).T        # [a, b] weight of a -> b
            rows, cols, vals = [], [], []
            X = dst.words
            for a in range(Ahat.shape[0]):
                ok = self.gibbs.stage(j).adjacency[a, X[:, 0]] == 1
                if not ok.any():
                    continue
                pre = np.concatenate([np.full((int(ok.sum()), 1), a), X[ok, :self.depth - 1]], axis=1)
                c = src.index(pre)
                r = np.flatnonzero(ok)
                rows.append(r)
                cols.append(c)
                vals.append(Ahat[a, X[ok, 0]])
            self._ops[j] = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                         shape=(dst.dim, src.dim))
        return self._ops[j]

    def apply(self, j, v):
        return self.matrix(j) @ v

    def apply_adjoint(self, j, w):
        return self.matrix(j).T @ w

    def compose_matrix(self, j: int) -> sp.csr_matrix:
        if j not in self._comp:
            src, dst = self.basis(j), self.basis(j + 1)
            X = src.words
            P = self.gibbs.p(j + self.depth - 1)
            rows, cols, vals = [], [], []
            for b in range(P.shape[1]):
                ok = P[X[:, -1], b] > 0
                if not ok.any():
                    continue
                nxt = np.concatenate([X[ok, 1:], np.full((int(ok.sum()), 1), b)], axis=1)
                rows.append(np.flatnonzero(ok))
                cols.append(dst.index(nxt))
                vals.append(P[X[ok, -1], b])
            self._comp[j] = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                          shape=(src.dim, dst.dim))
        return self._comp[j]

    def compose(self, j, u):
        return self.compose_matrix(j) @ u

    def observable(self, j: int) -> np.ndarray:
        return np.asarray(self.seq.f(j, self.nodes(j)[:, 0]), dtype=float)

    def density(self, j: int) -> np.ndarray:
        return self.ones(j)
