"""Sequential RPF objects for probability-preserving raw operators.

h_j are the equivariant densities obtained by pushing the constant 1 forward
through the sequence, mu_j = h_j dm_j the equivariant measures.  Decay fits are
log-linear least squares after a short transient.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .transfer import SingularDensityError, fit_line, random_bv_samples

__all__ = [
    "RpfTriplet", "GeometricFit", "fit_geometric", "forward_density",
    "decay_profile", "uniqueness_gap", "ReferenceChanged", "change_reference",
    "contraction_diagnostic", "equivariance_residual", "decorrelation_profile",
    "pilot_burn_in", "uniform_decay",
]


@dataclass
class RpfTriplet:
    window: tuple
    lambdas: np.ndarray
    densities: list            # h_j for j = window[0] .. window[1] + 1
    duals: list                # nu_j weight vectors (reference functionals)
    burn_in: int
    residual: float
    start: int = 0

    def h(self, j: int) -> np.ndarray:
        return self.densities[j - self.window[0]]

    def nu(self, j: int) -> np.ndarray:
        return self.duals[j - self.window[0]]

    def table(self):
        """Rows (j, lambda_j, min h_j, max h_j)."""
        rows = []
        for k, j in enumerate(range(self.window[0], self.window[1] + 1)):
            rows.append((j, float(self.lambdas[k]), float(self.densities[k].min()), float(self.densities[k].max())))
        return rows


@dataclass(frozen=True)
class GeometricFit:
    rate: float
    prefactor: float
    r2: float
    used: int
    values: np.ndarray = field(repr=False, default=None)


def fit_geometric(values, n0: int = 5, floor: float = 1e-13, n_start: int = 1) -> GeometricFit:
    """Fit values[n] ~ C delta^n on n >= n0, dropping entries under ``floor``.

    ``values[i]`` corresponds to n = n_start + i.  Entries at the roundoff
    floor carry no information about the rate and are excluded.
    """
    v = np.asarray(values, dtype=float)
    n = np.arange(n_start, n_start + v.size)
    keep = (n >= n0) & (v > floor)
    if keep.sum() < 2:
        return GeometricFit(0.0, float(v.max(initial=0.0)), 1.0, int(keep.sum()), v)
    slope, icpt, r2 = fit_line(n[keep], np.log(v[keep]))
    return GeometricFit(float(np.exp(slope)), float(np.exp(icpt)), r2, int(keep.sum()), v)


def _bv(system, j, v):
    return float(system.weights(j) @ np.abs(v)) + system.variation(j, v)


def forward_density(system, window=(0, 0), burn_in: int = 60, seed=None, dual_burn_in: bool = True) -> RpfTriplet:
    """h_j = normalised L_{j-K}^K 1 over the window.

    Times before 0 are replaced by the rank-one extension A_j g = m(g) 1, so
    the burn-in simply starts at max(j_min - K, 0) from the constant.
    """
    if burn_in < 1:
        raise ValueError("burn_in must be >= 1")
    j0, j1 = int(window[0]), int(window[1])
    start = max(j0 - burn_in, 0)
    h = system.ones(start) if seed is None else np.asarray(seed, dtype=float)
    h = h / system.mean(start, h)
    for j in range(start, j0):
        h = system.apply(j, h)
        h = h / system.mean(j + 1, h)
    dens, lams, duals = [], [], []
    residual = 0.0
    for j in range(j0, j1 + 2):
        if h.min() < 1e-12:
            raise SingularDensityError(f"density minimum {h.min():.3g} at time {j}: covering failure")
        dens.append(h)
        duals.append(system.weights(j))
        if j == j1 + 1:
            break
        Lh = system.apply(j, h)
        lam = system.mean(j + 1, Lh)
        nxt = Lh / lam
        residual = max(residual, _bv(system, j + 1, Lh - lam * nxt))
        lams.append(lam)
        h = nxt
    if dual_burn_in:
        duals = backward_duals(system, (j0, j1 + 1), burn_in)
    return RpfTriplet((j0, j1), np.asarray(lams), dens, duals, burn_in, residual, start)


def backward_duals(system, window, burn_in: int) -> list:
    """nu_j = (L_j^K)^T m_{j+K} over the window: the exact conservation law of the discrete operators.

    In the continuum nu_j = m_j for probability-preserving operators; on a grid
    the quadrature functional is conserved only up to discretisation error,
    and nu_j is the functional that the discrete operators preserve exactly.
    """
    j0, j1 = int(window[0]), int(window[1])
    w = system.weights(j1 + burn_in)
    for j in range(j1 + burn_in - 1, j1 - 1, -1):
        w = system.apply_adjoint(j, w)
    out = [w]
    for j in range(j1 - 1, j0 - 1, -1):
        w = system.apply_adjoint(j, w)
        out.append(w)
    return out[::-1]


def pilot_burn_in(system, tol: float = 1e-12, n_pilot: int = 40, rng=None, cap: int = 400) -> int:
    """K = ceil(log tol / log delta_hat) from a short decay fit."""
    rng = np.random.default_rng(1) if rng is None else rng
    g = random_bv_samples(system.nodes(0), 2, rng)[0]
    prof = decay_profile(system, g, n_pilot)
    d = prof["fit"].rate
    if not 0 < d < 1:
        return cap
    return int(min(cap, max(10, np.ceil(np.log(tol) / np.log(d)))))


def decay_profile(system, g, n_max: int, triplet: RpfTriplet | None = None, j: int = 0, n0: int = 5,
                  floor: float | None = None) -> dict:
    """||L_j^n g - m_j(g) h_{j+n}||_BV for n = 1..n_max with a geometric fit.

    Norms under the rounding floor (default 10 * dim * eps * ||g||_BV, the BV
    norm of node-wise rounding noise with margin) are excluded from the fit.
    """
    if n_max < 2:
        raise ValueError("n_max must be >= 2")
    g = np.asarray(g, dtype=float)
    if triplet is None:
        triplet = forward_density(system, (j, j + n_max), burn_in=max(1, j) if j else 1)
    # the conserved mass of the discrete operators; equals m_j(g) up to quadrature error
    mg = float(triplet.nu(j) @ g) / float(triplet.nu(j) @ triplet.h(j))
    norms = np.empty(n_max)
    v = g
    for n in range(1, n_max + 1):
        v = system.apply(j + n - 1, v)
        norms[n - 1] = _bv(system, j + n, v - mg * triplet.h(j + n))
    scale = max(_bv(system, j, g), 1.0)
    if floor is None:
        floor = 10 * system.dim(j) * np.finfo(float).eps
    return {"norms": norms, "fit": fit_geometric(norms, n0, floor * scale)}


def uniform_decay(system, samples, n_max: int, triplet: RpfTriplet | None = None, j: int = 0,
                  n0: int = 5) -> dict:
    """Operator-norm estimate sup_g ||L_j^n g - m_j(g) h_{j+n}||_BV / ||g||_BV over ``samples``.

    The envelope is what the bound C delta^n controls; per-sample fits are
    returned alongside it.  Individual profiles can carry a multi-rate
    transient (jumps decaying at branch-dependent speeds) that the envelope
    does not.
    """
    if triplet is None:
        triplet = forward_density(system, (j, j + n_max), burn_in=max(1, j) if j else 1)
    env = np.zeros(n_max)
    fits = []
    for g in samples:
        prof = decay_profile(system, g, n_max, triplet, j, n0)
        env = np.maximum(env, prof["norms"] / max(_bv(system, j, g), 1e-300))
        fits.append(prof["fit"])
    floor = 10 * system.dim(j) * np.finfo(float).eps
    return {"envelope": env, "fit": fit_geometric(env, n0, floor), "sample_fits": fits}


def uniqueness_gap(system, g0, n_max: int, triplet: RpfTriplet | None = None, j: int = 0, n0: int = 5) -> dict:
    """||L_j^n g0 - h_{j+n}||_BV for a probability density g0."""
    g0 = np.asarray(g0, dtype=float)
    g0 = g0 / system.mean(j, g0)
    return decay_profile(system, g0, n_max, triplet, j, n0)


class ReferenceChanged:
    """Operators L^mu_j g = L_j(g h_j) / h_{j+1} with reference measures mu_j = h_j m_j."""

    def __init__(self, system, triplet: RpfTriplet):
        self.raw = system
        self.seq = system.seq
        self.kind = system.kind
        self.triplet = triplet
        for h in triplet.densities:
            if h.min() < 1e-12:
                raise SingularDensityError("singular density in change of reference")

    def _h(self, j):
        return self.triplet.h(j)

    def apply(self, j, v):
        h0, h1 = self._h(j), self._h(j + 1)
        if np.ndim(v) == 2:
            return self.raw.apply(j, v * h0[:, None]) / h1[:, None]
        return self.raw.apply(j, v * h0) / h1

    def apply_adjoint(self, j, w):
        h0, h1 = self._h(j), self._h(j + 1)
        return self.raw.apply_adjoint(j, w / h1) * h0

    def weights(self, j):
        return self.raw.weights(j) * self._h(j)

    def mean(self, j, v):
        return self.weights(j) @ v

    def variation(self, j, v):
        return self.raw.variation(j, v)

    def nodes(self, j):
        return self.raw.nodes(j)

    def dim(self, j):
        return self.raw.dim(j)

    def ones(self, j):
        return self.raw.ones(j)

    def compose(self, j, u):
        return self.raw.compose(j, u)

    def observable(self, j):
        return self.raw.observable(j)


def change_reference(system, triplet: RpfTriplet) -> ReferenceChanged:
    return ReferenceChanged(system, triplet)


def contraction_diagnostic(system, a: float, M: int, sample_pairs: int = 20, rng=None, j: int = 0,
                           tol: float = 1e-9) -> dict:
    """Hilbert-metric contraction of L_j^M on positive cone pairs.

    Use a positivity-preserving discretisation (order 1) so images stay in
    the positive cone.
    """
    from .funcspace import hilbert_metric
    rng = np.random.default_rng(2) if rng is None else rng
    w = system.weights(j)
    cands = [h for h in random_bv_samples(system.nodes(j), 8 * sample_pairs, rng, positive=True)
             if system.variation(j, h) <= a * float(w @ h)]
    cands.append(system.ones(j))
    images = []
    for h in cands:
        v = h
        for n in range(M):
            v = system.apply(j + n, v)
        images.append(v)
    R_hat, ratio = 0.0, 0.0
    pairs = 0
    for i in range(len(cands)):
        for k in range(i + 1, len(cands)):
            if pairs >= sample_pairs * 10:
                break
            d0 = hilbert_metric(cands[i], cands[k])
            if d0 <= 1e-14:
                continue
            d1 = hilbert_metric(images[i], images[k])
            R_hat = max(R_hat, d1)
            ratio = max(ratio, d1 / d0)
            pairs += 1
    bound = float(np.tanh(R_hat / 4))
    return {"R_hat": R_hat, "per_M_contraction": ratio, "birkhoff_bound": bound,
            "pairs": pairs, "pass": bool(ratio <= bound + tol)}


def equivariance_residual(system, triplet: RpfTriplet, j: int, count: int = 50, rng=None) -> float:
    """max |mu_j(phi o T_j) - mu_{j+1}(phi)| over random trigonometric phi (evaluated in closed form)."""
    rng = np.random.default_rng(3) if rng is None else rng
    x0, x1 = system.nodes(j), system.nodes(j + 1)
    tx = system.seq.stage(j)(x0)
    w0 = system.weights(j) * triplet.h(j)
    w1 = system.weights(j + 1) * triplet.h(j + 1)
    worst = 0.0
    for _ in range(count):
        deg = int(rng.integers(1, 9))
        a, b = rng.standard_normal(deg), rng.standard_normal(deg)
        k = np.arange(1, deg + 1)

        def phi(x):
            return np.cos(2 * np.pi * np.outer(x, k)) @ a + np.sin(2 * np.pi * np.outer(x, k)) @ b
        worst = max(worst, abs(float(w0 @ phi(tx) - w1 @ phi(x1))))
    return worst


def decorrelation_profile(system, triplet: RpfTriplet, g, f_fn, n_max: int, j: int = 0) -> dict:
    """|m_j(g (f o T_j^n)) - m_j(g) mu_{j+n}(f)| for n = 1..n_max.

    Computed by duality: m_j(g f o T^n) = m_{j+n}(f L^n g).
    """
    g = np.asarray(g, dtype=float)
    mg = system.mean(j, g)
    out = np.empty(n_max)
    v = g
    for n in range(1, n_max + 1):
        v = system.apply(j + n - 1, v)
        f = f_fn(system.nodes(j + n))
        out[n - 1] = abs(system.mean(j + n, f * v) - mg * system.mean(j + n, f * triplet.h(j + n)))
    return {"gaps": out, "fit": fit_geometric(out)}
