"""Sequences of expanding maps: interval stages, SFT stages, schedules, observables.

Interval stages are finite unions of monotone C^2 branches on half-open
subintervals of [0, 1]; SFT stages are (adjacency, memory-1 potential) pairs
acting by the left shift.  A :class:`MapSequence` picks a stage and an
observable for every time index through a :class:`Schedule`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Affine", "Mobius", "Polynomial", "Branch", "IntervalStage", "SftStage",
    "Schedule", "TrigObservable", "PolyObservable", "CoboundaryObservable",
    "SymbolObservable", "MapSequence", "stage_at", "apply_map",
    "inverse_branches", "verify_expansion", "verify_covering", "splitmix64",
    "doubling", "tent", "triple", "markov_w", "mobius_distorted",
    "full_shift", "golden_mean", "random_sft_stage",
]

_TOL = 1e-12


# ---------------------------------------------------------------------------
# branch descriptors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Affine:
    """x -> slope * x + intercept."""
    slope: float
    intercept: float = 0.0

    def __call__(self, x):
        return self.slope * np.asarray(x, dtype=float) + self.intercept

    def deriv(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.slope)

    def second(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def inverse(self, y, lo=None, hi=None):
        return (np.asarray(y, dtype=float) - self.intercept) / self.slope

    def abs_deriv_range(self, lo, hi):
        s = abs(self.slope)
        return s, s, 0.0


@dataclass(frozen=True)
class Mobius:
    """x -> (a x + b) / (c x + d); the pole must lie outside the branch domain."""
    a: float
    b: float
    c: float
    d: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return (self.a * x + self.b) / (self.c * x + self.d)

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        return (self.a * self.d - self.b * self.c) / (self.c * x + self.d) ** 2

    def second(self, x):
        x = np.asarray(x, dtype=float)
        det = self.a * self.d - self.b * self.c
        return -2.0 * self.c * det / (self.c * x + self.d) ** 3

    def inverse(self, y, lo=None, hi=None):
        y = np.asarray(y, dtype=float)
        return (self.d * y - self.b) / (self.a - self.c * y)

    def abs_deriv_range(self, lo, hi):
        # |T'| and |T''| are monotone between consecutive poles, so the
        # endpoint values are exact extremes.
        if self.c != 0.0:
            pole = -self.d / self.c
            if lo - _TOL <= pole <= hi + _TOL:
                return 0.0, np.inf, np.inf
        ends = np.array([lo, hi])
        d1 = np.abs(self.deriv(ends))
        d2 = np.abs(self.second(ends))
        return float(d1.min()), float(d1.max()), float(d2.max())


@dataclass(frozen=True)
class Polynomial:
    """x -> sum_k coeffs[k] x^k, monotone on the branch domain."""
    coeffs: tuple

    @property
    def _p(self):
        return np.polynomial.Polynomial(np.asarray(self.coeffs, dtype=float))

    def __call__(self, x):
        return self._p(np.asarray(x, dtype=float))

    def deriv(self, x):
        return self._p.deriv(1)(np.asarray(x, dtype=float))

    def second(self, x):
        return self._p.deriv(2)(np.asarray(x, dtype=float))

    def inverse(self, y, lo=0.0, hi=1.0):
        # safeguarded Newton on a monotone polynomial, vectorised
        y = np.asarray(y, dtype=float)
        p, dp = self._p, self._p.deriv(1)
        inc = dp(0.5 * (lo + hi)) > 0
        a = np.full_like(y, lo)
        b = np.full_like(y, hi)
        x = a + (b - a) * 0.5
        for _ in range(100):
            fx = p(x) - y
            if not inc:
                fx = -fx
            a = np.where(fx < 0, x, a)
            b = np.where(fx >= 0, x, b)
            step = (p(x) - y) / dp(x)
            xn = x - step
            bad = (xn <= a) | (xn >= b) | ~np.isfinite(xn)
            xn = np.where(bad, 0.5 * (a + b), xn)
            if np.max(np.abs(xn - x), initial=0.0) < 1e-15:
                x = xn
                break
            x = xn
        return x

    def abs_deriv_range(self, lo, hi):
        p = self._p
        d1, d2, d3 = p.deriv(1), p.deriv(2), p.deriv(3)
        pts1 = [lo, hi] + [r.real for r in d2.roots() if abs(r.imag) < 1e-12 and lo <= r.real <= hi]
        pts2 = [lo, hi] + [r.real for r in d3.roots() if abs(r.imag) < 1e-12 and lo <= r.real <= hi] \
            if len(p.coef) > 3 else [lo, hi]
        v1 = np.abs(d1(np.array(pts1)))
        v2 = np.abs(d2(np.array(pts2)))
        return float(v1.min()), float(v1.max()), float(v2.max())


@dataclass(frozen=True)
class Branch:
    """A monotone C^2 branch on the half-open domain [lo, hi)."""
    lo: float
    hi: float
    forward: object

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError(f"empty branch domain [{self.lo}, {self.hi})")

    @property
    def increasing(self) -> bool:
        return bool(self.forward.deriv(0.5 * (self.lo + self.hi)) > 0)

    @property
    def image(self) -> tuple[float, float]:
        a, b = float(self.forward(self.lo)), float(self.forward(self.hi))
        return (min(a, b), max(a, b))

    @property
    def derivative_bounds(self) -> tuple[float, float, float]:
        """(inf |T'|, sup |T'|, sup |T''|) on the closed domain."""
        return self.forward.abs_deriv_range(self.lo, self.hi)

    def inverse(self, y):
        return self.forward.inverse(y, self.lo, self.hi)


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IntervalStage:
    """Piecewise expanding map of [0, 1] given by ordered branches."""
    branches: tuple
    name: str = "stage"

    def __post_init__(self):
        br = tuple(self.branches)
        object.__setattr__(self, "branches", br)
        if not br:
            raise ValueError("stage needs at least one branch")
        if abs(br[0].lo) > _TOL or abs(br[-1].hi - 1.0) > _TOL:
            raise ValueError("branch domains must cover [0, 1]")
        for left, right in zip(br[:-1], br[1:]):
            if abs(left.hi - right.lo) > _TOL:
                raise ValueError("branch domains must be contiguous and ordered")

    @property
    def branch_count(self) -> int:
        return len(self.branches)

    @property
    def boundaries(self) -> np.ndarray:
        return np.array([b.lo for b in self.branches] + [1.0])

    @property
    def breakpoints(self) -> tuple:
        """Interior branch boundaries."""
        return tuple(float(b.lo) for b in self.branches[1:])

    def branch_index(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.boundaries, x, side="right") - 1
        return np.clip(idx, 0, self.branch_count - 1)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        idx = self.branch_index(x)
        out = np.empty_like(x)
        for k, br in enumerate(self.branches):
            m = idx == k
            if np.any(m):
                out[m] = br.forward(x[m])
        return out

    def inverse_arrays(self, x):
        """Preimages of every point of ``x`` under every branch.

        Returns ``(y, dabs, valid)`` of shape (d, len(x)); images are treated
        as closed intervals so that endpoint values are limits.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        d = self.branch_count
        y = np.zeros((d, x.size))
        dabs = np.ones((d, x.size))
        valid = np.zeros((d, x.size), dtype=bool)
        for k, br in enumerate(self.branches):
            lo, hi = br.image
            m = (x >= lo - _TOL) & (x <= hi + _TOL)
            if np.any(m):
                yk = np.clip(br.inverse(x[m]), br.lo, br.hi)
                y[k, m] = yk
                dabs[k, m] = np.abs(br.forward.deriv(yk))
                valid[k, m] = True
        return y, dabs, valid


@dataclass(frozen=True)
class SftStage:
    """One step of a sequential subshift: adjacency A (d_in x d_out) and potential phi(a, b)."""
    adjacency: np.ndarray
    potential: np.ndarray
    name: str = "sft"

    def __post_init__(self):
        A = np.asarray(self.adjacency, dtype=np.int8)
        phi = np.asarray(self.potential, dtype=float)
        if A.ndim != 2 or phi.shape != A.shape:
            raise ValueError("adjacency and potential must be matching matrices")
        if not np.all((A == 0) | (A == 1)):
            raise ValueError("adjacency must be 0-1")
        if np.any(A.sum(1) == 0) or np.any(A.sum(0) == 0):
            raise ValueError("every row and column of the adjacency needs a 1")
        if not np.all(np.isfinite(phi[A == 1])):
            raise ValueError("potential must be finite on allowed pairs")
        A.setflags(write=False)
        phi = np.where(A == 1, phi, 0.0)
        phi.setflags(write=False)
        object.__setattr__(self, "adjacency", A)
        object.__setattr__(self, "potential", phi)

    @property
    def alphabet_in(self) -> int:
        return self.adjacency.shape[0]

    @property
    def alphabet_out(self) -> int:
        return self.adjacency.shape[1]

    def weights(self) -> np.ndarray:
        """Raw transfer matrix M[b, a] = A[a, b] exp(phi(a, b))."""
        return (self.adjacency * np.exp(self.potential)).T

    def __call__(self, word):
        return tuple(word)[1:]


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------

_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def splitmix64(x):
    """Vectorised SplitMix64 finaliser on uint64 input."""
    with np.errstate(over="ignore"):
        z = (np.asarray(x, dtype=np.uint64) + np.uint64(0x9E3779B97F4A7C15)) & _M64
        z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _M64
        z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _M64
        return z ^ (z >> np.uint64(31))


@dataclass(frozen=True)
class Schedule:
    """Maps a time index to a family index.

    kind: "periodic" (pattern repeated), "explicit" (finite list) or
    "seeded" (uniform draw from ``size`` members, counter based and stateless).
    """
    kind: str = "periodic"
    pattern: tuple = (0,)
    seed: int = 0
    size: int = 1

    def __post_init__(self):
        object.__setattr__(self, "pattern", tuple(int(p) for p in self.pattern))
        if self.kind not in ("periodic", "explicit", "seeded"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind != "seeded" and not self.pattern:
            raise ValueError("empty schedule pattern")

    @property
    def two_sided(self) -> bool:
        return self.kind != "explicit"

    def indices(self, js):
        js = np.asarray(js, dtype=np.int64)
        if self.kind == "periodic":
            return np.asarray(self.pattern, dtype=np.int64)[np.mod(js, len(self.pattern))]
        if self.kind == "explicit":
            if js.size and (js.min() < 0 or js.max() >= len(self.pattern)):
                raise IndexError("time index outside the explicit schedule")
            return np.asarray(self.pattern, dtype=np.int64)[js]
        key = splitmix64(np.uint64(self.seed & 0xFFFFFFFFFFFFFFFF))
        with np.errstate(over="ignore"):
            h = splitmix64(key ^ js.astype(np.uint64))
        return (h % np.uint64(self.size)).astype(np.int64)

    def index(self, j: int) -> int:
        return int(self.indices(np.array([j]))[0])


# ---------------------------------------------------------------------------
# observables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrigObservable:
    """const + sum a cos(2 pi k x) + sum b sin(2 pi k x)."""
    const: float = 0.0
    cos: tuple = ()      # ((k, a), ...)
    sin: tuple = ()      # ((k, b), ...)

    def __call__(self, x, stage=None):
        x = np.asarray(x, dtype=float)
        out = np.full_like(x, self.const)
        for k, a in self.cos:
            out = out + a * np.cos(2 * np.pi * k * x)
        for k, b in self.sin:
            out = out + b * np.sin(2 * np.pi * k * x)
        return out

    @property
    def sup_bound(self) -> float:
        return abs(self.const) + sum(abs(a) for _, a in self.cos) + sum(abs(b) for _, b in self.sin)


@dataclass(frozen=True)
class PolyObservable:
    coeffs: tuple = (0.0,)

    def __call__(self, x, stage=None):
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), self.coeffs)

    @property
    def sup_bound(self) -> float:
        return float(sum(abs(c) for c in self.coeffs))


@dataclass(frozen=True)
class CoboundaryObservable:
    """f_j = v o T_j - v (+ extra); needs the stage at time j."""
    v: object
    extra: object = None

    def __call__(self, x, stage=None):
        if stage is None:
            raise ValueError("coboundary observable needs the stage")
        out = self.v(stage(x)) - self.v(x)
        if self.extra is not None:
            out = out + self.extra(x)
        return out

    @property
    def sup_bound(self) -> float:
        e = self.extra.sup_bound if self.extra is not None else 0.0
        return 2 * self.v.sup_bound + e


@dataclass(frozen=True)
class SymbolObservable:
    """f(x) = values[x_0] on symbolic space."""
    values: tuple

    def __call__(self, symbols, stage=None):
        return np.asarray(self.values, dtype=float)[np.asarray(symbols, dtype=np.int64)]

    @property
    def sup_bound(self) -> float:
        return float(np.max(np.abs(self.values)))


# ---------------------------------------------------------------------------
# sequences
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MapSequence:
    """Stage family + schedule + observable family + observable schedule."""
    family: tuple
    schedule: Schedule = field(default_factory=Schedule)
    observables: tuple = ()
    observable_schedule: Schedule | None = None
    mixing_horizon: int = 1
    name: str = "sequence"

    def __post_init__(self):
        fam = tuple(self.family)
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "observables", tuple(self.observables))
        kinds = {type(s) for s in fam}
        if len(kinds) != 1:
            raise ValueError("a family must be all interval or all SFT stages")
        if self.schedule.kind == "seeded" and self.schedule.size != len(fam):
            object.__setattr__(self, "schedule", Schedule("seeded", (), self.schedule.seed, len(fam)))
        idx = self.schedule.pattern if self.schedule.kind != "seeded" else range(len(fam))
        if max(idx) >= len(fam) or min(idx) < 0:
            raise ValueError("schedule references a missing stage")
        if self.kind == "sft":
            self._check_alphabets()

    @property
    def kind(self) -> str:
        return "sft" if isinstance(self.family[0], SftStage) else "interval"

    def _check_alphabets(self):
        # consecutive stages must chain: d_out(j) == d_in(j+1)
        sch = self.schedule
        if sch.kind == "periodic":
            pairs = [(sch.pattern[i], sch.pattern[(i + 1) % len(sch.pattern)]) for i in range(len(sch.pattern))]
        elif sch.kind == "explicit":
            pairs = list(zip(sch.pattern[:-1], sch.pattern[1:]))
        else:
            pairs = [(a, b) for a in range(len(self.family)) for b in range(len(self.family))]
        for a, b in pairs:
            if self.family[a].alphabet_out != self.family[b].alphabet_in:
                raise ValueError("incompatible alphabets between consecutive SFT stages")

    def stage_index(self, j: int, allow_negative: bool = False) -> int:
        if j < 0 and not (allow_negative and self.schedule.two_sided):
            raise IndexError("negative time index")
        return self.schedule.index(j)

    def stage(self, j: int, allow_negative: bool = False):
        return self.family[self.stage_index(j, allow_negative)]

    def observable_index(self, j: int, allow_negative: bool = False) -> int:
        if not self.observables:
            raise ValueError("sequence has no observables")
        if self.observable_schedule is None:
            return 0 if len(self.observables) == 1 else self.stage_index(j, allow_negative)
        if j < 0 and not (allow_negative and self.observable_schedule.two_sided):
            raise IndexError("negative time index")
        return self.observable_schedule.index(j)

    def observable(self, j: int, allow_negative: bool = False):
        return self.observables[self.observable_index(j, allow_negative)]

    def f(self, j: int, x):
        """Evaluate f_j at points (interval) or first symbols (SFT)."""
        return self.observable(j)(x, self.stage(j))

    def observable_sup(self) -> float:
        return max(o.sup_bound for o in self.observables)

    def stage_key(self, j: int, allow_negative: bool = False):
        """Hashable key of the data that the time-j operator depends on."""
        return (self.stage_index(j, allow_negative), self.stage_index(j + 1, allow_negative))


def stage_at(seq: MapSequence, j: int):
    return seq.stage(j)


def apply_map(stage, x):
    """T_j(x): a point of [0, 1] for interval stages, the shifted word for SFT stages."""
    if isinstance(stage, SftStage):
        return stage(x)
    out = stage(np.atleast_1d(x))
    return float(out[0]) if np.ndim(x) == 0 else out


def inverse_branches(stage: IntervalStage, x: float):
    """List of (preimage, |T'(preimage)|) over branches whose image contains x."""
    y, d, valid = stage.inverse_arrays(np.array([float(x)]))
    return [(float(y[k, 0]), float(d[k, 0])) for k in range(stage.branch_count) if valid[k, 0]]


def verify_expansion(stage: IntervalStage) -> dict:
    mins, maxs2, lens = [], [], []
    for br in stage.branches:
        lo_d, _, sup_d2 = br.derivative_bounds
        # dense sampling guards against descriptors without exact bounds
        xs = np.linspace(br.lo, br.hi, 2001)
        lo_d = min(lo_d, float(np.abs(br.forward.deriv(xs)).min()))
        sup_d2 = max(sup_d2, float(np.abs(br.forward.second(xs)).max()))
        mins.append(lo_d)
        maxs2.append(sup_d2)
        lens.append(br.hi - br.lo)
    rep = {
        "min_derivative": float(min(mins)),
        "max_second_derivative": float(max(maxs2)),
        "min_branch_length": float(min(lens)),
    }
    rep["pass"] = bool(rep["min_derivative"] > 1 and rep["min_branch_length"] > 0
                       and np.isfinite(rep["max_second_derivative"]))
    return rep


def _merge(intervals):
    ivs = sorted((a, b) for a, b in intervals if b > a)
    out = []
    for a, b in ivs:
        if out and a <= out[-1][1] + _TOL:
            out[-1] = (out[-1][0], max(out[-1][1], b))
        else:
            out.append((a, b))
    return out


def verify_covering(seq: MapSequence, j: int, region, horizon: int) -> dict:
    """Smallest n <= horizon with T_j^n(region) = whole space.

    ``region`` is an interval (lo, hi) for interval sequences and a word
    (tuple of symbols, a cylinder at time j) for SFT sequences.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if seq.kind == "interval":
        image = _merge([tuple(region)])
        if not image:
            raise ValueError("empty region")
        for n in range(1, horizon + 1):
            stage = seq.stage(j + n - 1)
            pieces = []
            for lo, hi in image:
                for br in stage.branches:
                    a, b = max(lo, br.lo), min(hi, br.hi)
                    if b > a:
                        u, v = float(br.forward(a)), float(br.forward(b))
                        pieces.append((min(u, v), max(u, v)))
            image = _merge(pieces)
            if len(image) == 1 and image[0][0] <= _TOL and image[0][1] >= 1 - _TOL:
                return {"n": n, "pass": True, "image": image}
        return {"n": None, "pass": False, "image": image}
    word = tuple(int(s) for s in region)
    if not word:
        raise ValueError("empty region")
    for s in range(len(word) - 1):
        if seq.stage(j + s).adjacency[word[s], word[s + 1]] != 1:
            raise ValueError("inadmissible cylinder")
    current = {word[-1]}
    # after t < len(word) steps the image is the shorter cylinder word[t:]
    offset = len(word) - 1
    for n in range(1, horizon + 1):
        if n <= offset:
            continue
        A = seq.stage(j + n - 1).adjacency
        current = {int(b) for a in current for b in np.flatnonzero(A[a])}
        if len(current) == A.shape[1]:
            return {"n": n, "pass": True, "image": sorted(current)}
    return {"n": None, "pass": False, "image": sorted(current)}


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def doubling() -> IntervalStage:
    return IntervalStage((Branch(0.0, 0.5, Affine(2.0, 0.0)), Branch(0.5, 1.0, Affine(2.0, -1.0))), "doubling")


def tent() -> IntervalStage:
    return IntervalStage((Branch(0.0, 0.5, Affine(2.0, 0.0)), Branch(0.5, 1.0, Affine(-2.0, 2.0))), "tent")


def triple() -> IntervalStage:
    return IntervalStage(tuple(Branch(k / 3, (k + 1) / 3, Affine(3.0, -float(k))) for k in range(3)), "triple")


def markov_w() -> IntervalStage:
    """3x on [0, 1/3), 3/2 (x - 1/3) on [1/3, 1)."""
    return IntervalStage((Branch(0.0, 1 / 3, Affine(3.0, 0.0)),
                          Branch(1 / 3, 1.0, Affine(1.5, -0.5))), "markov_w")


def mobius_distorted(b: float = 0.5) -> IntervalStage:
    """Two full Mobius branches; a non-Lebesgue-preserving doubling-type map.

    Left branch x -> (2 + b) x / (1 + b x), right branch the same shape with
    -b, shifted to [1/2, 1).  Expanding for |b| < 2.
    """
    left = Mobius(2.0 + b, 0.0, b, 1.0)
    # s = x - 1/2: (2 - b) s / (1 - b s)
    right = Mobius(2.0 - b, -(2.0 - b) * 0.5, -b, 1.0 + 0.5 * b)
    return IntervalStage((Branch(0.0, 0.5, left), Branch(0.5, 1.0, right)), "mobius_distorted")


def full_shift(d: int = 2, potential: float | None = None) -> SftStage:
    phi = np.full((d, d), np.log(1.0 / d) if potential is None else potential)
    return SftStage(np.ones((d, d), dtype=np.int8), phi, f"full_shift{d}")


def golden_mean(potential=None) -> SftStage:
    A = np.array([[1, 1], [1, 0]], dtype=np.int8)
    phi = np.zeros((2, 2)) if potential is None else np.asarray(potential, dtype=float)
    return SftStage(A, phi, "golden_mean")


def random_sft_stage(rng: np.random.Generator, adjacency, scale: float = 0.5, name: str = "random") -> SftStage:
    A = np.asarray(adjacency, dtype=np.int8)
    return SftStage(A, scale * rng.standard_normal(A.shape), name)
