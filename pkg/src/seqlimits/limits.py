"""CLT distances between empirical laws of normalised Birkhoff sums and the standard normal.

Empirical CDFs are step functions, so every distance is computed cell by
cell between consecutive order statistics: suprema from one-sided limits at
the jumps, L^p integrals by Gauss-Legendre on each cell (split where the
step crosses Phi), Wasserstein distances through the quantile coupling with
closed forms for p = 1, 2.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, optimize
from scipy.special import ndtr, ndtri

from .transfer import fit_line

__all__ = [
    "normal_cdf", "normal_quantile", "normal_pdf", "SampleSet", "DistanceReport",
    "make_sample_set", "simulate", "kolmogorov", "weighted_distance", "lp_distance",
    "wasserstein", "gaussian_expectation_gap", "TestFunction", "rate_fit",
    "distance_report", "two_sided_gap", "cdf_shift_check", "dkw_error",
]

normal_cdf = ndtr
normal_quantile = ndtri


def normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / np.sqrt(2 * np.pi)


def dkw_error(count: int, level: float = 0.95) -> float:
    """Dvoretzky-Kiefer-Wolfowitz band sqrt(log(2/alpha) / 2N); 1.36/sqrt(N) at 95%."""
    return float(np.sqrt(np.log(2.0 / (1.0 - level)) / (2.0 * count)))


@dataclass
class SampleSet:
    n: int
    values: np.ndarray = field(repr=False)     # sorted draws of S_n-bar / sigma_n
    sigma: float
    seed: int = 0
    init: str = "reference"
    mc_sigma: float = float("nan")              # plug-in standard deviation of S_n-bar

    @property
    def count(self) -> int:
        return int(self.values.size)

    def save(self, path):
        """Binary column file plus JSON sidecar."""
        path = Path(path)
        np.save(path.with_suffix(".npy"), self.values)
        meta = {k: v for k, v in asdict(self).items() if k != "values"}
        meta["count"] = self.count
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, path):
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        meta.pop("count", None)
        return cls(values=np.load(path.with_suffix(".npy")), **meta)


def make_sample_set(sums, mean: float, sigma: float, n: int, seed: int = 0, init: str = "reference",
                    strict: bool = True) -> SampleSet:
    """Sort (S_n - mean) / sigma and validate the SampleSet invariants.

    ``strict`` enforces N >= 10^4 and |sample mean| <= 5 / sqrt(N).
    """
    x = np.asarray(sums, dtype=float) - mean
    mc = float(x.std())
    if sigma <= 0:
        v = np.zeros_like(x) if np.allclose(x, 0) else None
        if v is None:
            raise ValueError("sigma_n must be positive for a non-degenerate sum")
        return SampleSet(n, v, 0.0, seed, init, mc)
    v = np.sort(x / sigma)
    if strict:
        if v.size < 10_000:
            raise ValueError("a SampleSet needs N >= 10^4 draws")
        if abs(v.mean()) > 5.0 / np.sqrt(v.size):
            raise ValueError(f"sample mean {v.mean():.3g} exceeds 5/sqrt(N): centring is wrong")
    return SampleSet(n, v, float(sigma), seed, init, mc)


def simulate(system, n_list, count: int, seed: int = 0, stream: int = 0, init: str = "reference",
             workers: int = 1, strict: bool = True) -> dict:
    """SampleSets for every n in n_list from shared paths; sigma_n from exact operator variances."""
    from .martingale import variance_curve
    from .sampling import birkhoff_sums
    n_list = sorted(int(n) for n in n_list)
    sums = birkhoff_sums(system, n_list, count, seed, stream, workers=workers)
    var = variance_curve(system, 0, n_list[-1])
    means = np.cumsum([system.mean(k, system.observable(k)) for k in range(n_list[-1])])
    return {n: make_sample_set(sums[n], float(means[n - 1]), float(np.sqrt(max(var[n - 1], 0.0))), n,
                               seed, init, strict) for n in n_list}


# ---------------------------------------------------------------------------
# distances
# ---------------------------------------------------------------------------

def _values(s):
    return np.sort(np.asarray(getattr(s, "values", s), dtype=float))


def kolmogorov(s) -> float:
    """sup_t |F_hat(t) - Phi(t)| from both one-sided limits at every jump."""
    x = _values(s)
    N = x.size
    P = ndtr(x)
    i = np.arange(1, N + 1)
    return float(max(np.max(i / N - P), np.max(P - (i - 1) / N)))


def _golden_max(fn, a, b, iters: int = 60):
    """Vectorised golden-section maximisation of fn on [a, b] (per entry)."""
    g = (np.sqrt(5) - 1) / 2
    a, b = np.array(a, dtype=float), np.array(b, dtype=float)
    for _ in range(iters):
        c = b - g * (b - a)
        d = a + g * (b - a)
        left = fn(c) > fn(d)
        b = np.where(left, d, b)
        a = np.where(left, a, c)
    return np.maximum(fn(a), fn(b))


def weighted_distance(s, p: float, with_parts: bool = False):
    """Delta_p = sup_t (1 + |t|^p) |F_hat(t) - Phi(t)| for p > 0; Delta_0 is the Kolmogorov distance.

    Jumps are evaluated from both sides.  Inside a cell F_hat is constant
    while the weight grows, so cells whose endpoint bound can beat the
    running maximum are maximised by golden section on a dense sub-grid.
    Beyond the extreme samples |F_hat - Phi| is a Gaussian tail and the
    weighted tail is maximised analytically (bounded scalar search).
    """
    if p < 0:
        raise ValueError("p must be >= 0")
    if p == 0:
        # Delta_0 is the Kolmogorov distance (weight 1, not 1 + |t|^0 = 2)
        val = kolmogorov(s)
        return {"value": val, "in_sample": val, "tail": 0.0} if with_parts else val
    x = _values(s)
    N = x.size
    P = ndtr(x)
    i = np.arange(1, N + 1)
    w = 1.0 + np.abs(x) ** p
    jumps = float(max(np.max(w * (i / N - P)), np.max(w * (P - (i - 1) / N))))
    best = jumps
    if p > 0 and N > 1:
        a, b = x[:-1], x[1:]
        c = i[:-1] / N
        wmax = 1.0 + np.maximum(np.abs(a), np.abs(b)) ** p
        dmax = np.maximum(np.abs(c - ndtr(a)), np.abs(c - ndtr(b)))
        cand = np.flatnonzero((wmax * dmax > best) & (b > a))
        if cand.size:
            ca, cb, cc = a[cand], b[cand], c[cand]
            fn = lambda t: (1.0 + np.abs(t) ** p) * np.abs(cc - ndtr(t))  # noqa: E731
            # dense sub-grid first so the golden search starts in the right bracket
            grid = np.linspace(0, 1, 17)[:, None]
            pts = ca + grid * (cb - ca)
            vals = (1.0 + np.abs(pts) ** p) * np.abs(cc - ndtr(pts))
            k = np.argmax(vals, axis=0)
            lo = ca + np.maximum(k - 1, 0) / 16 * (cb - ca)
            hi = ca + np.minimum(k + 1, 16) / 16 * (cb - ca)
            best = max(best, float(vals.max()), float(_golden_max(fn, lo, hi).max()))
    # tails beyond the sample range
    right = optimize.minimize_scalar(lambda t: -(1 + abs(t) ** p) * ndtr(-t), bounds=(x[-1], x[-1] + 40),
                                     method="bounded")
    left = optimize.minimize_scalar(lambda t: -(1 + abs(t) ** p) * ndtr(t), bounds=(x[0] - 40, x[0]),
                                    method="bounded")
    tail = float(max(-right.fun, -left.fun, (1 + abs(x[-1]) ** p) * ndtr(-x[-1]),
                     (1 + abs(x[0]) ** p) * ndtr(x[0])))
    val = max(best, tail)
    if with_parts:
        return {"value": val, "in_sample": best, "tail": tail}
    return val


_GX, _GW = np.polynomial.legendre.leggauss(16)


def _cell_integral(a, b, c, p):
    """sum over cells of int_a^b |c - Phi(t)|^p dt, splitting where Phi crosses c."""
    t = ndtri(np.clip(c, 0, 1))
    inside = (t > a) & (t < b)
    lo = np.concatenate([a, t[inside]])
    hi = np.concatenate([np.where(inside, t, b), b[inside]])
    cc = np.concatenate([c, c[inside]])
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    total = 0.0
    for gx, gw in zip(_GX, _GW):
        total += float(np.sum(gw * half * np.abs(cc - ndtr(mid + half * gx)) ** p))
    return total


def lp_distance(s, p: float) -> float:
    """||F_hat - Phi||_{L^p(dx)}: cells by Gauss-Legendre (exact crossing splits), tails by quadrature."""
    if p < 1:
        raise ValueError("p must be >= 1")
    x = _values(s)
    N = x.size
    i = np.arange(1, N)
    a, b = x[:-1], x[1:]
    keep = b > a
    total = _cell_integral(a[keep], b[keep], i[keep] / N, p) if keep.any() else 0.0
    lt, _ = integrate.quad(lambda t: ndtr(t) ** p, -np.inf, x[0], limit=200)
    rt, _ = integrate.quad(lambda t: ndtr(-t) ** p, x[-1], np.inf, limit=200)
    return float((total + lt + rt) ** (1.0 / p))


def wasserstein(s, p: float) -> float:
    """W_p(F_hat, Phi) by the quantile coupling, cell by cell in u.

    Cell i is u in ((i-1)/N, i/N] with Phi^{-1}(u) in (a_i, b_i]; after the
    substitution u = Phi(t) the cell integral is int_a^b |x_i - t|^p phi(t) dt,
    which has closed forms for p = 1 and 2; other p use 16 Gauss-Legendre
    nodes in u per cell.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    x = _values(s)
    N = x.size
    u = np.arange(N + 1) / N
    t = ndtri(u)
    a, b = t[:-1], t[1:]
    pa, pb = normal_pdf(a), normal_pdf(b)
    Fa, Fb = u[:-1], u[1:]
    if p == 1:
        # int_a^b |x - t| phi dt, split at t = x
        m = np.clip(x, a, b)
        pm, Fm = normal_pdf(m), ndtr(m)
        left = x * (Fm - Fa) + (pm - pa)          # int_a^m (x - t) phi
        right = -(x * (Fb - Fm) + (pb - pm))      # int_m^b (t - x) phi
        return float(np.sum(left + right))
    if p == 2:
        with np.errstate(invalid="ignore"):
            ta = np.where(np.isfinite(a), a * pa, 0.0)
            tb = np.where(np.isfinite(b), b * pb, 0.0)
        m0 = Fb - Fa
        m1 = pa - pb
        m2 = m0 + ta - tb
        return float(np.sqrt(max(np.sum(x * x * m0 - 2 * x * m1 + m2), 0.0)))
    mid, half = 0.5 * (Fa + Fb), 0.5 * (Fb - Fa)
    total = 0.0
    for gx, gw in zip(_GX, _GW):
        total += float(np.sum(gw * half * np.abs(x - ndtri(mid + half * gx)) ** p))
    return float(total ** (1.0 / p))


@dataclass(frozen=True)
class TestFunction:
    """h with derivative dh, both vectorised callables; optional breakpoints help the quadrature."""
    __test__ = False
    h: object
    dh: object
    points: tuple = ()


def gaussian_expectation_gap(s, test: TestFunction, s_exp: float) -> dict:
    """|E_hat h - int h dPhi| and H_s(h) = int |h'(x)| / (1 + |x|^s) dx."""
    x = _values(s)

    def quad(fn):
        pts = sorted(test.points)
        edges = [-np.inf] + pts + [np.inf]
        tot, err = 0.0, 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            v, e = integrate.quad(fn, lo, hi, limit=400)
            tot += v
            err += e
        return tot, err

    Hs, herr = quad(lambda t: abs(float(test.dh(t))) / (1 + abs(t) ** s_exp))
    if not np.isfinite(Hs) or herr > 1e-6 * max(1.0, abs(Hs)) + 1e-8:
        raise ValueError("H_s(h) diverges: rejected test function")
    Eh, _ = quad(lambda t: float(test.h(t)) * float(normal_pdf(t)))
    gap = abs(float(np.mean(test.h(x))) - Eh)
    return {"gap": gap, "H_s": Hs, "gaussian_mean": Eh}


def rate_fit(points, n_boot: int = 1000, rng=None) -> dict:
    """Least squares of log distance on log sigma with a residual-bootstrap 95% interval."""
    pts = [(float(s), float(d)) for s, d in points if d > 0 and s > 0]
    if len(pts) < 5:
        raise ValueError("rate_fit needs at least 5 points with positive distance")
    sig = np.array([p[0] for p in pts])
    if np.any(np.diff(sig) <= 0):
        raise ValueError("sigma values must be increasing")
    lx, ly = np.log(sig), np.log([p[1] for p in pts])
    slope, icpt, r2 = fit_line(lx, ly)
    resid = ly - (icpt + slope * lx)
    rng = np.random.default_rng(0) if rng is None else rng
    boots = np.empty(n_boot)
    for b in range(n_boot):
        yb = icpt + slope * lx + rng.choice(resid, resid.size, replace=True)
        boots[b] = fit_line(lx, yb)[0]
    lo, hi = np.percentile(boots, [2.5, 97.5])
    return {"slope": slope, "intercept": icpt, "r2": r2, "ci95": (float(lo), float(hi))}


@dataclass
class DistanceReport:
    n: int
    sigma_n: float
    kolm: float
    d_p1: float
    d_p3: float
    l1: float
    l2: float
    w1: float
    w2: float
    mc_err: float

    FIELDS = ("n", "sigma_n", "kolm", "d_p1", "d_p3", "l1", "l2", "w1", "w2", "mc_err")

    def row(self):
        return [getattr(self, k) for k in self.FIELDS]


def distance_report(s: SampleSet) -> DistanceReport:
    return DistanceReport(s.n, s.sigma, kolmogorov(s), weighted_distance(s, 1), weighted_distance(s, 3),
                          lp_distance(s, 1), lp_distance(s, 2), wasserstein(s, 1), wasserstein(s, 2),
                          dkw_error(s.count))


def two_sided_gap(seq, psi, reduction, paths, j0: int = 0) -> dict:
    """A_hat = max over paths and n of |S_n psi - S_n phi| against the bound 2 sup_u."""
    from .gibbs import birkhoff_gap
    per_path = birkhoff_gap(seq, psi, reduction, paths, j0)
    A = float(per_path.max()) if per_path.size else 0.0
    bound = 2.0 * reduction.sup_u
    return {"A_hat": A, "bound": bound, "pass": bool(A <= bound + 1e-12)}


def cdf_shift_check(eps=None, grid=None) -> float:
    """max over the grid of |Phi(x + eps) - Phi(x)| - eps / sqrt(2 pi) (must be <= 0)."""
    eps = np.geomspace(1e-6, 2.0, 30) if eps is None else np.asarray(eps)
    grid = np.linspace(-10, 10, 4001) if grid is None else np.asarray(grid)
    d = np.abs(ndtr(grid[None, :] + eps[:, None]) - ndtr(grid[None, :])) - eps[:, None] / np.sqrt(2 * np.pi)
    return float(d.max())
