"""Twisted transfer operators, window cumulant generating functions and their derivatives.

Everything runs on a pulled-back system (``L~_j 1 = 1``, reference
functionals m~_j) with centred observables f~_j, so the twisted operator is
L~_{j,z} g = L~_j(g e^{z f~_j}) and

    Lambda~_{j,n}(z) = log m~_{j+n}(L~_{j,z}^n 1).

Values of z are handled as columns: one sparse product advances every z at
once.  Logarithms are taken step by step (each factor is close to 1 for
small z), which is the continuous branch vanishing at z = 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial

import numpy as np

from .martingale import centered, variance_curve
from .rpf import fit_geometric
from .transfer import fit_line

__all__ = [
    "OutOfRadiusError", "BranchError", "UnderflowError", "TwistedTriplet", "twisted_triplet",
    "pilot_radius", "pi_window", "window_cgf", "cgf_curve", "lll_gap", "derivative",
    "growth_check", "twisted_decay", "third_derivative_window", "cgf_table",
    "projection_check", "error_decay_check", "perturbation_check", "normalized_matrices",
]


class OutOfRadiusError(ValueError):
    """Twisted eigen-equation residual above tolerance: z outside the perturbative regime."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class BranchError(ValueError):
    """A single-step factor moved too far from 1 to track the logarithm."""


class UnderflowError(ArithmeticError):
    """|E e^{zS}| underflowed."""


def _ftilde(system, k, obs=None):
    return centered(system, k, None if obs is None else obs(k))


def _twist(system, k, V, Z, obs=None):
    """L~_{k,z} applied column-wise: column c uses z = Z[c]."""
    f = _ftilde(system, k, obs)
    return system.apply(k, V * np.exp(np.outer(f, Z)))


def _log_steps(c, tol=np.pi / 2):
    """Principal logs of step factors, refusing steps whose argument exceeds ``tol``."""
    ang = np.abs(np.angle(c))
    if np.any(ang > tol):
        raise BranchError(f"step argument {float(ang.max()):.3g} exceeds {tol:.3g}: refine the path or shrink z")
    return np.log(c)


# ---------------------------------------------------------------------------
# twisted triplets
# ---------------------------------------------------------------------------

@dataclass
class TwistedTriplet:
    z: np.ndarray                      # twist values (one column each)
    window: tuple                      # (J, J_end): h_j for j in [J, J_end], lambda_j for j < J_end
    lambdas: np.ndarray = field(repr=False)    # shape (J_end - J, nz)
    densities: list = field(repr=False)        # h_j, shape (dim, nz)
    duals: list = field(repr=False)            # nu_j weight rows, shape (dim, nz)
    burn_in: int = 0
    residual: float = 0.0             # seed-independence of h at the right end
    eigen_residual: float = 0.0       # max ||L_{j,z} h_j - lambda_j h_{j+1}||_inf

    def h(self, j):
        return self.densities[j - self.window[0]]

    def nu(self, j):
        return self.duals[j - self.window[0]]

    def lam(self, j):
        return self.lambdas[j - self.window[0]]

    def log_lambdas(self) -> np.ndarray:
        """Principal logs of lambda_j(z), the branch vanishing at z = 0 for factors near 1."""
        return _log_steps(self.lambdas)


def twisted_triplet(system, z, window=(0, 100), burn_in: int = 0, tol: float = 1e-8, obs=None,
                    rng=None) -> TwistedTriplet:
    """(lambda_j(z), h_j^(z), nu_j^(z)) over ``window`` for every z in the array ``z``.

    h is pushed forward from the constant 1 at time ``window[0] - burn_in``
    (clipped at 0) with lambda_j = m~_{j+1}(L~_{j,z} h_j), so m~_j(h_j) = 1.
    The same run from a randomly perturbed seed measures seed-independence
    at the right end of the window; above ``tol`` the call raises
    OutOfRadiusError.
    nu is pulled back from m~ at the right end with the same lambdas and
    rescaled so nu_j(h_j) = 1 (nu_j(h_j) does not depend on j).
    """
    Z = np.atleast_1d(np.asarray(z, dtype=complex))
    J, Je = int(window[0]), int(window[1])
    if Je <= J:
        raise ValueError("empty window")
    start = max(J - int(burn_in), 0)
    rng = np.random.default_rng(5) if rng is None else rng
    H = np.ones((system.dim(start), Z.size), dtype=complex)
    g = rng.standard_normal(system.dim(start))
    g = 1.0 + 0.5 * (g - system.mean(start, g)) / max(np.max(np.abs(g)), 1e-300)
    H2 = np.repeat(g[:, None], Z.size, axis=1).astype(complex)
    H2 = H2 / (system.weights(start) @ H2)
    dens, lams = [], []
    for k in range(start, Je):
        if k >= J:
            dens.append(H)
        V = _twist(system, k, H, Z, obs)
        lam = system.weights(k + 1) @ V
        if np.any(np.abs(lam) < 1e-300):
            raise OutOfRadiusError("twisted eigenvalue vanished", np.inf)
        V2 = _twist(system, k, H2, Z, obs)
        H2 = V2 / (system.weights(k + 1) @ V2)
        if k >= J:
            lams.append(lam)
        H = V / lam
    dens.append(H)
    resid = float(np.max(np.abs(H - H2)))
    if resid > tol:
        raise OutOfRadiusError(f"twisted triplet residual {resid:.3g} above {tol:.3g}", resid)
    lams = np.array(lams)
    # duals, pulled back from m~ at the right end
    nu = system.weights(Je)[:, None] * np.ones((1, Z.size))
    duals = [nu]
    for k in range(Je - 1, J - 1, -1):
        f = _ftilde(system, k, obs)
        nu = np.exp(np.outer(f, Z)) * system.apply_adjoint(k, nu) / lams[k - J]
        duals.append(nu)
    duals.reverse()
    c = np.sum(duals[0] * dens[0], axis=0)
    duals = [d / c for d in duals]
    eig = 0.0
    for k in range(J, Je):
        eig = max(eig, float(np.max(np.abs(_twist(system, k, dens[k - J], Z, obs) - lams[k - J] * dens[k - J + 1]))))
    return TwistedTriplet(Z, (J, Je), lams, dens, duals, int(burn_in), resid, eig)


def pilot_radius(system, window=(0, 60), burn_in: int = 60, grid=None, tol: float = 1e-8,
                 lam_floor: float = 0.1, obs=None) -> float:
    """Largest |z| on a log grid with residual < tol and |lambda_j(z)| > lam_floor in four directions."""
    grid = np.geomspace(1e-3, 1.0, 16) if grid is None else np.asarray(grid)
    best = 0.0
    for r in grid:
        Z = r * np.array([1, 1j, -1, -1j])
        try:
            tr = twisted_triplet(system, Z, window, burn_in, tol, obs)
        except (OutOfRadiusError, FloatingPointError):
            break
        if np.min(np.abs(tr.lambdas)) <= lam_floor:
            break
        best = float(r)
    return best


def pi_window(triplet: TwistedTriplet, j: int, n: int, path=None) -> np.ndarray:
    """Pi_{j,n}(z) = sum_{k=j}^{j+n-1} log lambda_k(z) for every z of the triplet.

    ``path`` optionally gives triplets at s z for s increasing to 1 (last
    entry the target); the argument of each lambda_k is then unwrapped along
    the path from s = 0, which is the continuation enforcing Pi_k(0) = 0.
    """
    J, Je = triplet.window
    if j < J or j + n > Je:
        raise ValueError("window outside the triplet")
    if path is None:
        L = triplet.log_lambdas()[j - J:j - J + n]
        return L.sum(axis=0)
    lam = np.stack([t.lambdas[j - J:j - J + n] for t in path])          # (steps, n, nz)
    lam = np.concatenate([np.ones_like(lam[:1]), lam])
    ang = np.unwrap(np.angle(lam), axis=0)
    if np.any(np.abs(np.diff(ang, axis=0)) > np.pi / 2):
        raise BranchError("argument jump above pi/2 along the path: refine it")
    return (np.log(np.abs(lam[-1])) + 1j * ang[-1]).sum(axis=0)


def cgf_curve(system, j: int, n: int, z, obs=None) -> np.ndarray:
    """Lambda~_{j,m}(z) for m = 1..n, shape (n, nz), with per-step normalisation."""
    Z = np.atleast_1d(np.asarray(z, dtype=complex))
    G = np.ones((system.dim(j), Z.size), dtype=complex)
    out = np.empty((n, Z.size), dtype=complex)
    acc = np.zeros(Z.size, dtype=complex)
    for m in range(n):
        V = _twist(system, j + m, G, Z, obs)
        c = system.weights(j + m + 1) @ V
        if np.any(np.abs(c) < 1e-290):
            raise UnderflowError("|E e^{zS}| underflow: reduce |Im z| sigma")
        acc = acc + _log_steps(c)
        out[m] = acc
        G = V / c
    return out


def window_cgf(system, j: int, n: int, z, obs=None):
    """Lambda~_{j,n}(z) = log E_{m_0}[e^{z(S_{j+n} f - S_j f)}] (centred f); scalar or array in z."""
    val = cgf_curve(system, j, n, z, obs)[-1]
    return val[0] if np.ndim(z) == 0 else val


def lll_gap(system, z, j_list, n_max: int, triplet: TwistedTriplet | None = None, burn_in: int = 0,
            obs=None) -> dict:
    """gap(n) = max_j |Lambda~_{j,n}(z) - Pi_{j,n}(z)| for n = 1..n_max, with the linear trend slope."""
    j_list = [int(j) for j in j_list]
    if triplet is None:
        triplet = twisted_triplet(system, [z], (min(j_list), max(j_list) + n_max), burn_in, obs=obs)
    col = int(np.argmin(np.abs(triplet.z - z)))
    logs = triplet.log_lambdas()[:, col]
    J = triplet.window[0]
    gap = np.zeros(n_max)
    for j in j_list:
        lam = cgf_curve(system, j, n_max, [z], obs)[:, 0]
        pi = np.cumsum(logs[j - J:j - J + n_max])
        gap = np.maximum(gap, np.abs(lam - pi))
    n = np.arange(1, n_max + 1)
    half = n_max // 2
    slope = fit_line(n[half:], gap[half:])[0] if n_max >= 4 else 0.0
    return {"n": n, "gap": gap, "max": float(gap.max()), "slope": float(slope)}


# ---------------------------------------------------------------------------
# derivatives
# ---------------------------------------------------------------------------

_FD = {
    1: ([-1, 0, 1], [-0.5, 0.0, 0.5]),
    2: ([-1, 0, 1], [1.0, -2.0, 1.0]),
    3: ([-2, -1, 0, 1, 2], [-0.5, 1.0, 0.0, -1.0, 0.5]),
    4: ([-2, -1, 0, 1, 2], [1.0, -4.0, 6.0, -4.0, 1.0]),
}


def derivative(fn, z0, k: int, scheme: str = "cauchy", r: float = 0.1, Q: int = 64, h: float = 1e-3,
               shrink: int = 4, tol: float = 1e-8):
    """k-th derivative of an analytic ``fn`` at z0 (array of points allowed).

    ``fn`` takes a 1-d complex array and returns values of the same shape.
    Cauchy: k!/(Q r^k) sum_q fn(z0 + r w_q) w_q^{-k}, w_q the Q-th roots of
    unity; the Q and Q/2 rules are compared and r is halved (up to
    ``shrink`` times) while they disagree by more than ``tol`` relative.
    Central differences with step h are the cross-check (k <= 4).
    """
    z0 = np.atleast_1d(np.asarray(z0, dtype=complex))
    if scheme == "fd":
        if k not in _FD:
            raise ValueError("finite differences implemented for k <= 4")
        off, c = _FD[k]
        pts = (z0[None, :] + h * np.asarray(off)[:, None]).ravel()
        v = np.asarray(fn(pts)).reshape(len(off), z0.size)
        return (np.asarray(c) @ v) / h ** k
    if scheme != "cauchy":
        raise ValueError(f"unknown scheme {scheme!r}")
    w = np.exp(2j * np.pi * np.arange(Q) / Q)
    for _ in range(shrink + 1):
        pts = (z0[None, :] + r * w[:, None]).ravel()
        v = np.asarray(fn(pts)).reshape(Q, z0.size)
        full = factorial(k) / (Q * r ** k) * (w[:, None] ** (-k) * v).sum(axis=0)
        half = factorial(k) / (Q // 2 * r ** k) * (w[::2, None] ** (-k) * v[::2]).sum(axis=0)
        err = np.max(np.abs(full - half))
        if err <= tol * max(1.0, float(np.max(np.abs(full)))):
            return full
        r /= 2
    raise OutOfRadiusError(f"Cauchy rule unstable (error {err:.3g}); circle leaves the analyticity disc", err)


def growth_check(system, n_list, k: int, delta: float = 0.05, r: float | None = None, points: int = 33,
                 refine: int = 4, obs=None) -> dict:
    """sigma_n^{k-2} sup_{|t| <= delta sigma_n} |Lambda_n^{(k)}(t)| for every n in n_list.

    With Lambda_n(t) = Lambda~_{0,n}(i t / sigma_n) this equals
    sup_{|s| <= delta} |Lambda~_{0,n}^{(k)}(i s)| / sigma_n^2.  The sup is
    taken on ``points`` equispaced s, then on ``refine`` x finer points of the
    worst cell.  Derivatives are Cauchy rules of radius r (default delta / 2).
    """
    if k < 3:
        raise ValueError("k must be >= 3")
    n_list = sorted(int(n) for n in n_list)
    var = variance_curve(system, 0, n_list[-1], obs)
    if var[-1] - var[max(n_list[-1] // 2, 1) - 1] < 1e-6:
        raise ValueError("sigma_n does not grow (coboundary input): growth check refused")
    r = delta / 2 if r is None else r
    Q = 64
    w = np.exp(2j * np.pi * np.arange(Q) / Q)
    s = np.linspace(-delta, delta, points)

    def kth(n, sv):
        pts = (1j * sv[None, :] + r * w[:, None]).ravel()
        lam = cgf_curve(system, 0, n, pts, obs)[n - 1].reshape(Q, sv.size)
        return np.abs(factorial(k) / (Q * r ** k) * (w[:, None] ** (-k) * lam).sum(axis=0))

    # one propagation for every n: the cgf curve is cumulative in n
    pts = (1j * s[None, :] + r * w[:, None]).ravel()
    curve = cgf_curve(system, 0, n_list[-1], pts, obs)
    values, sig = [], []
    for n in n_list:
        lam = curve[n - 1].reshape(Q, s.size)
        d = np.abs(factorial(k) / (Q * r ** k) * (w[:, None] ** (-k) * lam).sum(axis=0))
        i = int(np.argmax(d))
        lo, hi = s[max(i - 1, 0)], s[min(i + 1, s.size - 1)]
        fine = np.linspace(lo, hi, 2 * refine + 1)
        best = max(float(d.max()), float(kth(n, fine).max()))
        sn2 = float(var[n - 1])
        values.append(best / sn2)
        sig.append(np.sqrt(sn2))
    values = np.array(values)
    sig = np.array(sig)
    slope = fit_line(np.log(sig), np.log(values))[0] if len(n_list) > 1 else 0.0
    return {"n": n_list, "sigma": sig, "value": values, "slope": float(slope)}


def twisted_decay(system, z, n_max: int, j: int = 0, triplet: TwistedTriplet | None = None, samples: int = 20,
                  burn_in: int = 0, n0: int = 5, rng=None, obs=None) -> dict:
    """Envelope over random g of ||L~_{j,z}^n g - lambda_{j,n}(z) nu_j(g) h_{j+n}||_inf / (|lambda_{j,n}| ||g||_inf)."""
    if triplet is None:
        triplet = twisted_triplet(system, [z], (j, j + n_max), burn_in, obs=obs)
    Z = np.array([z], dtype=complex)
    rng = np.random.default_rng(3) if rng is None else rng
    G = rng.standard_normal((system.dim(j), samples)).astype(complex)
    scale = np.max(np.abs(G), axis=0)
    nug = (triplet.nu(j)[:, 0] @ G)
    lam_prod = np.ones(1, dtype=complex)
    env = np.empty(n_max)
    V = G
    for n in range(1, n_max + 1):
        V = _twist(system, j + n - 1, V, np.full(samples, Z[0]), obs)
        lam_prod = lam_prod * triplet.lam(j + n - 1)[0]
        R = V - lam_prod * np.outer(triplet.h(j + n)[:, 0], nug)
        env[n - 1] = float(np.max(np.max(np.abs(R), axis=0) / (np.abs(lam_prod) * scale)))
    fit = fit_geometric(env, n0, 100 * np.finfo(float).eps)
    return {"envelope": env, "fit": fit}


def third_derivative_window(system, windows, t_values, triplet: TwistedTriplet | None = None, r: float = 0.02,
                            burn_in: int = 0, obs=None) -> dict:
    """max over (j, n) and t of |Pi'''_{j,n}(i t)| / (1 + Var(S_{j,n})).

    Pi is differentiated by a 64-node Cauchy rule of radius r around each i t.
    """
    windows = [(int(j), int(n)) for j, n in windows]
    t_values = np.atleast_1d(np.asarray(t_values, dtype=float))
    Q = 64
    w = np.exp(2j * np.pi * np.arange(Q) / Q)
    pts = (1j * t_values[None, :] + r * w[:, None]).ravel()
    J = min(j for j, _ in windows)
    Je = max(j + n for j, n in windows)
    if triplet is None:
        triplet = twisted_triplet(system, pts, (J, Je), burn_in, obs=obs)
    logs = triplet.log_lambdas()
    csum = np.concatenate([np.zeros((1, pts.size), dtype=complex), np.cumsum(logs, axis=0)])
    rows = []
    for j, n in windows:
        pi = (csum[j + n - J] - csum[j - J]).reshape(Q, t_values.size)
        d3 = np.abs(6.0 / (Q * r ** 3) * (w[:, None] ** (-3) * pi).sum(axis=0))
        var = float(variance_curve(system, j, n, obs)[-1])
        rows.append((j, n, var, float(d3.max()), float(d3.max()) / (1.0 + var)))
    ratios = np.array([row[4] for row in rows])
    return {"rows": rows, "max_ratio": float(ratios.max())}


def cgf_table(system, j_list, n_list, z_list, obs=None) -> list:
    """Rows (j, n, Re z, Im z, Re Lambda~, Im Lambda~) for CSV export."""
    Z = np.asarray(z_list, dtype=complex)
    rows = []
    for j in j_list:
        curve = cgf_curve(system, j, max(n_list), Z, obs)
        for n in n_list:
            for c, z in enumerate(Z):
                v = curve[n - 1, c]
                rows.append((int(j), int(n), z.real, z.imag, v.real, v.imag))
    return rows


# ---------------------------------------------------------------------------
# perturbation algebra on exact SFT matrices
# ---------------------------------------------------------------------------

def normalized_matrices(gibbs, j0: int, count: int) -> dict:
    """Dense A~_j = L_j / lambda_j, P~_j = h_{j+1} nu_j^T, E~_j = A~_j - P~_j for j0 <= j < j0 + count.

    L_j is the raw one-symbol Ruelle matrix of the Gibbs system, (L_j g)(b) =
    sum_a A_{ab} e^{phi_j(a,b)} g(a).
    """
    A, P, E = [], [], []
    for j in range(j0, j0 + count):
        L = np.asarray(gibbs.stage(j).weights(), dtype=float) / gibbs.lam(j)
        Pj = np.outer(gibbs.h(j + 1), gibbs.nu(j))
        A.append(L)
        P.append(Pj)
        E.append(L - Pj)
    return {"A": A, "P": P, "E": E}


def _prod(mats, j, n):
    out = np.eye(mats[j].shape[1])
    for k in range(j, j + n):
        out = mats[k] @ out
    return out


def projection_check(gibbs, j0: int = 0, n_max: int = 20) -> dict:
    """P_j^n = lambda_{j,n} nu_j(.) h_{j+n} and A_j^n = P_j^n + E_j^n, normalised, as matrix residuals."""
    M = normalized_matrices(gibbs, j0, n_max)
    proj, split, eig = 0.0, 0.0, 0.0
    for k in range(n_max):
        L = M["A"][k]
        eig = max(eig, float(np.max(np.abs(L @ gibbs.h(j0 + k) - gibbs.h(j0 + k + 1)))),
                  float(np.max(np.abs(gibbs.nu(j0 + k + 1) @ L - gibbs.nu(j0 + k)))))
    for n in range(1, n_max + 1):
        Pn = _prod(M["P"], 0, n)
        proj = max(proj, float(np.max(np.abs(Pn - np.outer(gibbs.h(j0 + n), gibbs.nu(j0))))))
        split = max(split, float(np.max(np.abs(_prod(M["A"], 0, n) - Pn - _prod(M["E"], 0, n)))))
    return {"eigen_residual": eig, "projection_residual": proj, "split_residual": split}


def error_decay_check(gibbs, j0: int = 0, n_max: int = 40, samples: int = 20, rng=None, n0: int = 2) -> dict:
    """Envelope of ||A~_j^n g - nu_j(g) h_{j+n}||_inf / ||g||_inf over random g, with geometric fit."""
    rng = np.random.default_rng(9) if rng is None else rng
    M = normalized_matrices(gibbs, j0, n_max)
    G = rng.standard_normal((M["A"][0].shape[1], samples))
    scale = np.max(np.abs(G), axis=0)
    nug = gibbs.nu(j0) @ G
    env = np.empty(n_max)
    V = G
    for n in range(1, n_max + 1):
        V = M["A"][n - 1] @ V
        R = V - np.outer(gibbs.h(j0 + n), nug)
        env[n - 1] = float(np.max(np.max(np.abs(R), axis=0) / scale))
    fit = fit_geometric(env, n0, 100 * np.finfo(float).eps)
    return {"envelope": env, "fit": fit}


def perturbation_check(gibbs, j0: int = 0, n_max: int = 200, draws: int = 20, rng=None, fit_len: int = 40) -> dict:
    """Random perturbations of the normalised error operators stay geometrically contracting.

    From ||E~_j^n|| <= C0 delta0^n (spectral norm, fitted): delta1 = (1 + delta0)/2,
    n0 the least n with C0 delta0^n < delta1^n / 2, eps0 the largest eps with
    C0 delta0^{n0} + (a + eps)^{n0} - a^{n0} < delta1^{n0} (a = sup ||E~_j||),
    C1 = max_{l < n0} ((a + eps0) / delta1)^l times the block bound.  Each draw
    perturbs every E~_j by a random matrix of spectral norm eps0 and checks
    sup_n ||S_j^n|| / delta1^n <= C1.
    """
    rng = np.random.default_rng(13) if rng is None else rng
    if n_max <= fit_len:
        raise ValueError("n_max must exceed fit_len")
    M = normalized_matrices(gibbs, j0, n_max)
    E = M["E"]
    # envelope over every block start that the perturbed products use
    norms = np.zeros(fit_len)
    for j in range(n_max - fit_len + 1):
        V = np.eye(E[j].shape[1])
        for n in range(fit_len):
            V = E[j + n] @ V
            norms[n] = max(norms[n], float(np.linalg.norm(V, 2)))
    fit = fit_geometric(norms, 2, 100 * np.finfo(float).eps)
    d0 = min(max(fit.rate, 1e-6), 0.999)
    ok = norms > 100 * np.finfo(float).eps
    C0 = float(np.max(norms[ok] / d0 ** np.arange(1, fit_len + 1)[ok])) if ok.any() else 1.0
    d1 = (1.0 + d0) / 2
    n0 = 1
    while C0 * d0 ** n0 >= d1 ** n0 / 2:
        n0 += 1
    a = max(float(np.linalg.norm(e, 2)) for e in E)
    lo, hi = 0.0, 1.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if C0 * d0 ** n0 + (a + mid) ** n0 - a ** n0 < d1 ** n0:
            lo = mid
        else:
            hi = mid
    eps0 = lo
    C1 = max(((a + eps0) / d1) ** l for l in range(n0))
    worst = 0.0
    for _ in range(draws):
        S = []
        for e in E:
            X = rng.standard_normal(e.shape)
            S.append(e + eps0 * X / np.linalg.norm(X, 2))
        V = np.eye(E[0].shape[1])
        for n in range(1, n_max + 1):
            V = S[n - 1] @ V
            worst = max(worst, float(np.linalg.norm(V, 2)) / d1 ** n)
    return {"C0": C0, "delta0": d0, "delta1": d1, "n0": n0, "eps0": eps0, "C1": C1,
            "sup_ratio": worst, "pass": bool(worst <= C1 + 1e-12 and eps0 > 0)}
