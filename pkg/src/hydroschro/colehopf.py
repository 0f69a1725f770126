"""Exact transforms for integrable cases.

* Cole-Hopf: for independent particles ``xi = rho e^{-H}``, ``eta = e^{H}``
  decouple the canonical equations into a forward and a backward heat
  flow; the endpoint problem becomes the classical IPFP / Sinkhorn fixed
  point.
* Static problem: entropic coupling against the torus heat kernel.
* Quadratic mobility: a generalised transform maps the canonical equations
  to the AKNS system, checked here by residuals only.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .fields import LINE, PERIODIC, Grid, GridError, SpaceTimeField, grad, mass
from .hydro import rate_dyn, rate_via_field

SPECTRA = ("discrete", "continuous")


class ColeHopfError(ValueError):
    pass


@dataclass
class XiEtaPair:
    xi: SpaceTimeField
    eta: SpaceTimeField
    mode: str = "cole_hopf"


# -- Cole-Hopf ----------------------------------------------------------------

def ch_forward(rho, H):
    rho = np.asarray(rho, dtype=float)
    H = np.asarray(H, dtype=float)
    if np.any(rho < 0):
        raise ColeHopfError("density must be nonnegative")
    return rho * np.exp(-H), np.exp(H)


def ch_inverse(xi, eta):
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    return xi * eta, np.log(eta)


def heat_eigenvalues(grid: Grid, spectrum: str = "discrete") -> np.ndarray:
    """Eigenvalues of the periodic Laplacian on the rfft modes."""
    k = np.arange(grid.n_cells // 2 + 1)
    if spectrum == "discrete":
        return -4.0 / grid.dx**2 * np.sin(np.pi * k / grid.n_cells) ** 2
    if spectrum == "continuous":
        return -(2 * np.pi * k / grid.length) ** 2
    raise ValueError(f"unknown spectrum {spectrum!r}")


def heat_flow(u0, times, grid: Grid, spectrum: str = "discrete", diffusivity: float = 1.0):
    """``exp(t D Lap) u0`` for every ``t`` in ``times`` (rows of the result)."""
    lam = diffusivity * heat_eigenvalues(grid, spectrum)
    uh = np.fft.rfft(np.asarray(u0, dtype=float))
    t = np.atleast_1d(np.asarray(times, dtype=float))
    return np.fft.irfft(uh[None, :] * np.exp(np.outer(t, lam)), n=grid.n_cells)


def discrete_ch_current(xi, eta, grid: Grid) -> np.ndarray:
    """Face current of ``rho = xi eta`` that is exact for the semi-discrete flows."""
    xi_p = np.roll(xi, -1, axis=-1)
    eta_p = np.roll(eta, -1, axis=-1)
    return (xi * eta_p - xi_p * eta) / grid.dx


def solve_independent_bridge(mu0, mu1, grid: Grid, t_final: float, n_steps: int,
                             spectrum: str = "discrete", tol: float = 1e-10,
                             max_iter: int = 10_000):
    """IPFP on the heat semigroup; returns a bridge solution for independent walkers.

    The solution's ``diagnostics`` hold ``value_entropic``, the value from
    the potentials ``int mu1 log eta_T - int mu0 log eta_0`` (exact for the
    chosen heat semigroup), and ``value_bb``, the control form
    ``int sigma |grad H|^2``.
    """
    from .bridge import BridgeProblem, BridgeSolution
    from .models import independent

    mu0 = np.asarray(mu0, dtype=float)
    mu1 = np.asarray(mu1, dtype=float)
    if np.any(mu0 <= 0) or np.any(mu1 <= 0):
        raise ColeHopfError("endpoint densities must be positive")
    if abs(mass(mu0, grid) - mass(mu1, grid)) > 1e-10 * max(1.0, mass(mu0, grid)):
        raise ColeHopfError("endpoint masses differ")
    model = independent()
    lam = heat_eigenvalues(grid, spectrum)
    prop = np.exp(t_final * lam)

    def flow(u):
        return np.fft.irfft(np.fft.rfft(u) * prop, n=grid.n_cells)

    eta_T = np.ones(grid.n_cells)
    converged = False
    err0 = err1 = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        eta_0 = flow(eta_T)
        xi_0 = mu0 / eta_0
        xi_T = flow(xi_0)
        err1 = float(np.max(np.abs(xi_T * eta_T - mu1)))
        eta_T = mu1 / xi_T
        err0 = float(np.max(np.abs(xi_0 * flow(eta_T) - mu0)))
        if err0 <= tol and err1 <= tol:
            converged = True
            break
    # gauge: mean(H_T) = 0
    c = np.mean(np.log(eta_T))
    eta_T = eta_T * math.exp(-c)
    eta_0 = flow(eta_T)
    xi_0 = mu0 / eta_0

    times = np.linspace(0.0, t_final, n_steps + 1)
    xi = heat_flow(xi_0, times, grid, spectrum)
    eta = heat_flow(eta_T, t_final - times, grid, spectrum)
    rho_v, H_v = ch_inverse(xi, eta)
    j_v = discrete_ch_current(xi, eta, grid)
    rho = SpaceTimeField(grid, t_final, rho_v, "cell", "rho")
    H = SpaceTimeField(grid, t_final, H_v, "cell", "H")
    j = SpaceTimeField(grid, t_final, j_v, "face", "j")
    value = rate_dyn(model, rho=rho, j=j)
    problem = BridgeProblem(model, grid, t_final, n_steps, mu0, mu1, tol=tol)
    diag = {
        "iterations": it,
        "endpoint_error": max(err0, err1),
        "marginal_errors": (err0, err1),
        "value_entropic": float((np.sum(mu1 * np.log(eta[-1])) - np.sum(mu0 * np.log(eta[0])))
                                * grid.dx),
        "value_bb": bb_value(rho, H),
        "spectrum": spectrum,
    }
    return BridgeSolution(problem, rho, H, j, value, converged, diag)


def bb_value(rho: SpaceTimeField, H: SpaceTimeField) -> float:
    """Control form ``int dt int dx rho |grad H|^2`` with ``E = grad H``."""
    from .models import independent

    E = grad(H.values, H.grid)
    return rate_via_field(independent(), rho, E)


# -- static problem -------------------------------------------------------------

def torus_heat_kernel(d, t: float, length: float, diffusivity: float = 1.0,
                      cutoff: float = 1e-14):
    """Transition density of ``D Lap`` on the circle of the given length."""
    d = np.asarray(d, dtype=float)
    s = diffusivity * t
    if s * (2 * np.pi / length) ** 2 < 0.05:
        # images: tail bound ~ exp(-(m L)^2 / 4s)
        m_max = int(np.ceil(math.sqrt(4 * s * -math.log(cutoff)) / length)) + 1
        m = np.arange(-m_max, m_max + 1)
        z = d[..., None] + m * length
        return np.sum(np.exp(-z**2 / (4 * s)), axis=-1) / math.sqrt(4 * np.pi * s)
    k_max = int(np.ceil(math.sqrt(-math.log(cutoff) / s) * length / (2 * np.pi))) + 1
    k = np.arange(1, k_max + 1)
    w = np.exp(-(2 * np.pi * k / length) ** 2 * s)
    return (1.0 + 2.0 * np.sum(w * np.cos(2 * np.pi * np.multiply.outer(d, k) / length),
                               axis=-1)) / length


@dataclass
class StaticPlan:
    """Entropic coupling ``P_ij = p_T(x_i, y_j) dx^2 exp(a_i + b_j)`` (cell masses)."""

    grid: Grid
    t_final: float
    plan: np.ndarray
    a: np.ndarray
    b: np.ndarray
    entropy: float
    value: float
    marginal_error: float
    iterations: int
    converged: bool

    def to_csv(self, path):
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        np.savetxt(path / "plan.csv", self.plan, delimiter=",", fmt="%.17g")
        with (path / "potentials.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "a", "b"])
            for x, a, b in zip(self.grid.centers, self.a, self.b):
                w.writerow([repr(float(x)), repr(float(a)), repr(float(b))])


def solve_static_sinkhorn(mu0, mu1, grid: Grid, t_final: float, diffusivity: float = 1.0,
                          tol: float = 1e-8, max_iter: int = 100_000) -> StaticPlan:
    """Log-domain Sinkhorn against the heat kernel of ``D Lap``.

    ``entropy`` is ``Ent(P | p_T dx dy)``; ``value`` is the entropy relative
    to the reference path law started from ``mu0`` (i.e. with
    ``Ent(mu0 | dx)`` removed), which is the quantity comparable with the
    dynamic rate.
    """
    mu0 = np.asarray(mu0, dtype=float)
    mu1 = np.asarray(mu1, dtype=float)
    if grid.boundary != PERIODIC:
        raise GridError("static problem is posed on the torus")
    if np.any(mu0 <= 0) or np.any(mu1 <= 0):
        raise ColeHopfError("endpoint densities must be positive")
    dx = grid.dx
    if abs(mass(mu0, grid) - mass(mu1, grid)) > 1e-10 * max(1.0, mass(mu0, grid)):
        raise ColeHopfError("endpoint masses differ")
    x = grid.centers
    p = torus_heat_kernel(np.subtract.outer(x, x), t_final, grid.length, diffusivity)
    logK = np.log(p * dx * dx)
    la, lb = np.log(mu0 * dx), np.log(mu1 * dx)
    a = np.zeros(grid.n_cells)
    b = np.zeros(grid.n_cells)
    err = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        a = la - logsumexp(logK + b[None, :], axis=1)
        b = lb - logsumexp(logK + a[:, None], axis=0)
        logP = logK + a[:, None] + b[None, :]
        err = float(np.max(np.abs(np.exp(logsumexp(logP, axis=1)) - mu0 * dx)) / dx)
        if err <= tol:
            break
    logP = logK + a[:, None] + b[None, :]
    P = np.exp(logP)
    entropy = float(np.sum(P * (logP - logK)))
    value = float(np.sum(P * (logP - logK - np.log(mu0)[:, None])))
    return StaticPlan(grid, t_final, P, a, b, entropy, value, err, it, err <= tol)


# -- quadratic mobility: AKNS -----------------------------------------------------

def _line_grad(u, dx):
    return np.gradient(u, dx, axis=-1, edge_order=2)


def _check_flat(u, name, tol):
    n = u.shape[-1]
    w = max(1, n // 10)
    for tail in (u[..., :w], u[..., -w:]):
        dev = np.max(np.abs(tail - tail[..., :1]))
        if dev > tol:
            raise ColeHopfError(f"{name} is not flat in the outer 10% of cells "
                                f"(deviation {dev:.2e})")


def akns_transform(model, rho: SpaceTimeField, H: SpaceTimeField, flat_tol: float = 1e-6,
                   check_flat: bool = True) -> XiEtaPair:
    """Generalised Cole-Hopf transform for quadratic mobility on a line window.

    With ``Phi(x) = int_left^x sigma'(rho) dH`` (cumulative midpoint rule),
    ``xi = (1/sigma') d_x(sigma e^{-Phi})`` and ``eta = -(1/sigma') d_x e^{Phi}``.
    Derivatives are centred differences.
    """
    grid = rho.grid
    if grid.boundary != LINE:
        raise GridError("AKNS transform requires a line-mode grid")
    r, h = rho.values, H.values
    if check_flat:
        _check_flat(r, "rho", flat_tol)
        _check_flat(h, "H", flat_tol)
    sp = model.sigma_prime(r)
    if np.any(np.abs(sp) < 1e-12):
        raise ColeHopfError("sigma' vanishes on the transform support")
    dx = grid.dx
    # Phi at cell centres: trapezoid-in-cells of sigma'(rho) dH/dx, anchored left
    dh = np.diff(h, axis=-1)
    sp_mid = 0.5 * (sp[:, 1:] + sp[:, :-1])
    Phi = np.concatenate([np.zeros((r.shape[0], 1)), np.cumsum(sp_mid * dh, axis=-1)], axis=-1)
    xi = _line_grad(model.sigma(r) * np.exp(-Phi), dx) / sp
    eta = -_line_grad(np.exp(Phi), dx) / sp
    return XiEtaPair(rho.with_values(xi, "xi"), rho.with_values(eta, "eta"), "akns")


def akns_residual(pair: XiEtaPair, interior: int = 2):
    """Sup residuals of ``xi_t = xi_xx - 2 eta xi^2``, ``eta_t = -eta_xx + 2 xi eta^2``.

    Time derivatives are step differences and the right-hand sides are
    averaged over the two nodes; ``interior`` cells are skipped at each end.
    """
    xi, eta = pair.xi.values, pair.eta.values
    grid, dt = pair.xi.grid, pair.xi.dt
    dx = grid.dx

    def lap(u):
        if grid.boundary == PERIODIC:
            return (np.roll(u, -1, -1) - 2 * u + np.roll(u, 1, -1)) / dx**2
        out = np.zeros_like(u)
        out[..., 1:-1] = (u[..., 2:] - 2 * u[..., 1:-1] + u[..., :-2]) / dx**2
        return out

    f_xi = lap(xi) - 2 * eta * xi**2
    f_eta = -lap(eta) + 2 * xi * eta**2
    r_xi = np.diff(xi, axis=0) / dt - 0.5 * (f_xi[1:] + f_xi[:-1])
    r_eta = np.diff(eta, axis=0) / dt - 0.5 * (f_eta[1:] + f_eta[:-1])
    if grid.boundary == LINE:
        s = slice(max(interior, 1), grid.n_cells - max(interior, 1))
        r_xi, r_eta = r_xi[:, s], r_eta[:, s]
    return float(np.max(np.abs(r_xi))), float(np.max(np.abs(r_eta)))


def akns_hamiltonian(pair: XiEtaPair, quadratic: bool = True) -> np.ndarray:
    """``int (xi_x eta_x - xi^2 eta^2) dx`` per time node (``-int xi_x eta_x`` if not quadratic)."""
    xi, eta = pair.xi.values, pair.eta.values
    grid = pair.xi.grid
    if grid.boundary == PERIODIC:
        gx, ge = grad(xi, grid), grad(eta, grid)
    else:
        gx, ge = _line_grad(xi, grid.dx), _line_grad(eta, grid.dx)
    if quadratic:
        dens = gx * ge - xi**2 * eta**2
    else:
        dens = -gx * ge
    return np.sum(dens, axis=-1) * grid.dx


def homogeneous_akns(xi0: float, eta0: float, grid: Grid, t_final: float, n_steps: int):
    """Closed-form spatially constant AKNS solution ``xi0 e^{-2ct}, eta0 e^{2ct}``."""
    c = xi0 * eta0
    t = np.linspace(0.0, t_final, n_steps + 1)
    ones = np.ones(grid.n_cells)
    xi = np.outer(xi0 * np.exp(-2 * c * t), ones)
    eta = np.outer(eta0 * np.exp(2 * c * t), ones)
    return XiEtaPair(SpaceTimeField(grid, t_final, xi, "cell", "xi"),
                     SpaceTimeField(grid, t_final, eta, "cell", "eta"), "akns")
