"""Endpoint-constrained hydrodynamic Schrodinger problems.

The optimal density ``rho`` and its conjugate momentum ``H`` solve the
canonical equations of the Hamiltonian

    Ham(rho, H) = int sigma(rho) |grad H|^2 - grad H . D_h(rho) grad rho

with ``rho_0 = mu0`` and ``rho_T = mu1``.  Space is discretised so that the
semi-discrete system is *exactly* Hamiltonian for :func:`hamiltonian`;
time uses the trapezoid rule for both equations.  The boundary-value
problem is solved by damped forward-backward sweeps on the terminal
momentum.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from ._linalg import solve_cyclic
from .fields import Grid, SpaceTimeField, div, grad, mass, to_cells, to_faces
from .hydro import EPS_RHO, flux, rate_dyn, trapezoid_step
from .models import DomainError, ModelError, TransportModel

log = logging.getLogger(__name__)


class BridgeError(ValueError):
    pass


@dataclass
class BridgeProblem:
    model: TransportModel
    grid: Grid
    t_final: float
    n_steps: int
    mu0: np.ndarray
    mu1: np.ndarray
    tol: float = 1e-10
    tol_fp: float = 1e-9
    max_iter: int = 400
    theta: float = 0.5
    theta_min: float = 1.0 / 64
    seed: int | None = None
    init_amplitude: float = 0.0
    precondition: bool = True

    def __post_init__(self):
        self.mu0 = np.asarray(self.mu0, dtype=float)
        self.mu1 = np.asarray(self.mu1, dtype=float)
        n = self.grid.n_cells
        if self.mu0.shape != (n,) or self.mu1.shape != (n,):
            raise BridgeError("endpoint densities must be cell fields on the grid")
        m0, m1 = mass(self.mu0, self.grid), mass(self.mu1, self.grid)
        if abs(m0 - m1) > 1e-10 * max(1.0, abs(m0)):
            raise BridgeError(f"endpoint masses differ: {m0!r} vs {m1!r}")
        try:
            self.model.check_domain(self.mu0, "mu0", open_=True)
            self.model.check_domain(self.mu1, "mu1", open_=True)
        except DomainError as exc:
            raise BridgeError(str(exc)) from None
        if not 0 < self.theta <= 1:
            raise BridgeError("damping theta must lie in (0, 1]")

    @property
    def dt(self) -> float:
        return self.t_final / self.n_steps


@dataclass
class BridgeSolution:
    problem: BridgeProblem
    rho_star: SpaceTimeField
    H_star: SpaceTimeField
    j_star: SpaceTimeField
    value: float
    converged: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def model(self) -> TransportModel:
        return self.problem.model

    @property
    def grid(self) -> Grid:
        return self.problem.grid

    @property
    def E_star(self) -> SpaceTimeField:
        return self.j_star.with_values(grad(self.H_star.values, self.grid), "E")


@dataclass
class DriftSpec:
    """Generator data ``div(D_s grad) + b . grad`` on the space-time grid.

    ``diffusion`` holds ``D_s(rho)`` at cells (the SDE noise is
    ``sqrt(2 D_s) dW``); ``drift`` holds ``b`` at faces.
    """

    diffusion: SpaceTimeField
    drift: SpaceTimeField
    reversed: bool = False


# -- semi-discrete canonical equations ---------------------------------------

def hamiltonian(model: TransportModel, rho, H, grid: Grid) -> float | np.ndarray:
    """Discrete ``int sigma |grad H|^2 - grad H . D_h grad rho`` (midpoint rule)."""
    rho = np.asarray(rho, dtype=float)
    g = grad(H, grid)
    dens = to_faces(model.sigma(rho)) * g**2 - g * to_faces(model.D_h(rho)) * grad(rho, grid)
    return np.sum(dens, axis=-1) * grid.dx


def rho_rhs(model, rho, H, grid):
    return -div(flux(model, rho, grad(H, grid), grid), grid)


def H_rhs(model, rho, H, grid):
    """``-(1/dx) dHam/drho``: the discrete ``-D_h Lap H - sigma' |grad H|^2``."""
    g = grad(H, grid)
    q = grad(rho, grid)
    Df = to_faces(model.D_h(rho))
    return (-model.sigma_prime(rho) * to_cells(g**2)
            + model.D_h_prime(rho) * to_cells(g * q)
            - div(Df * g, grid))


def _H_rhs_jacobian(model, rho, H, grid):
    dx = grid.dx
    g = grad(H, grid)
    q = grad(rho, grid)
    sp = model.sigma_prime(rho)
    Dp = model.D_h_prime(rho)
    Df = to_faces(model.D_h(rho))
    g_m, q_m, Df_m = np.roll(g, 1), np.roll(q, 1), np.roll(Df, 1)
    upper = -sp * g / dx + Dp * q / (2 * dx) - Df / dx**2
    lower = sp * g_m / dx - Dp * q_m / (2 * dx) - Df_m / dx**2
    diag = -sp * (g_m - g) / dx + Dp * (q_m - q) / (2 * dx) + (Df + Df_m) / dx**2
    return lower, diag, upper


def _backward_H_step(model, rho_k, rho_k1, H_k1, G_k1, dt, grid, guess, tol=1e-14,
                     max_newton=50):
    base = H_k1 - 0.5 * dt * G_k1
    new = guess.copy()
    for _ in range(max_newton):
        resid = new - base + 0.5 * dt * H_rhs(model, rho_k, new, grid)
        lo, di, up = _H_rhs_jacobian(model, rho_k, new, grid)
        delta = solve_cyclic(0.5 * dt * lo, 1.0 + 0.5 * dt * di, 0.5 * dt * up, -resid)
        new = new + delta
        if np.max(np.abs(delta)) <= tol * max(1.0, np.max(np.abs(new))):
            return new
    raise BridgeError("Newton iteration for the momentum equation did not converge")


def canonical_residual(model: TransportModel, rho: SpaceTimeField, H: SpaceTimeField):
    """Sup-norm defects of both canonical equations in trapezoid form."""
    if rho.values.shape != H.values.shape or rho.grid != H.grid:
        raise BridgeError("rho and H are not aligned")
    grid, dt = rho.grid, rho.dt
    F = np.array([rho_rhs(model, r, h, grid) for r, h in zip(rho.values, H.values)])
    G = np.array([H_rhs(model, r, h, grid) for r, h in zip(rho.values, H.values)])
    r_rho = np.diff(rho.values, axis=0) / dt - 0.5 * (F[1:] + F[:-1])
    r_H = np.diff(H.values, axis=0) / dt - 0.5 * (G[1:] + G[:-1])
    return float(np.max(np.abs(r_rho))), float(np.max(np.abs(r_H)))


def hamiltonian_drift(model, rho: SpaceTimeField, H: SpaceTimeField) -> float:
    ham = hamiltonian(model, rho.values, H.values, rho.grid)
    return float(np.max(np.abs(ham - ham[0])) / (1.0 + abs(ham[0])))


# -- solver -------------------------------------------------------------------

def _forward(model, mu0, H, dt, grid):
    n_t = H.shape[0]
    rho = np.empty_like(H)
    j = np.empty_like(H)
    rho[0] = mu0
    E = grad(H, grid)
    j[0] = flux(model, mu0, E[0], grid)
    for k in range(n_t - 1):
        rho[k + 1], j[k + 1] = trapezoid_step(model, rho[k], E[k], E[k + 1], dt, grid,
                                              flux0=j[k])
        model.check_domain(rho[k + 1])
    return rho, j


def _backward(model, rho, H_T, dt, grid, H_prev):
    n_t = rho.shape[0]
    H = np.empty_like(rho)
    H[-1] = H_T
    G = H_rhs(model, rho[-1], H_T, grid)
    for k in range(n_t - 2, -1, -1):
        H[k] = _backward_H_step(model, rho[k], rho[k + 1], H[k + 1], G, dt, grid,
                                guess=H_prev[k])
        G = H_rhs(model, rho[k], H[k], grid)
    return H


def solve_hsp(problem: BridgeProblem) -> BridgeSolution:
    """Damped forward-backward sweep for the canonical boundary-value problem.

    Each sweep integrates ``H`` backward from the current terminal momentum
    (using the previous density path), then ``rho`` forward from ``mu0``, then
    moves the terminal momentum by ``theta * (f'(mu1) - f'(rho_T))``.  With
    ``f' = log`` this is the classical IPFP update.  ``theta`` is halved
    (down to ``theta_min``) whenever the endpoint error grows.

    With ``precondition`` the terminal correction is rescaled mode by mode by
    ``1 / (1 - exp(-2 D k^2 T))``, the inverse of the linearised response of
    ``f'(rho_T)`` to ``H_T`` about a flat state with mean diffusivity ``D``.
    Long-wavelength modes otherwise contract only like ``1 - theta D k^2 T``.
    """
    p = problem
    model, grid, dt = p.model, p.grid, p.dt
    t0 = time.perf_counter()
    n_t = p.n_steps + 1
    target = model.f_prime(p.mu1)

    def correction(theta, rho_T):
        r = target - model.f_prime(rho_T)
        if p.precondition:
            k = np.arange(grid.n_cells // 2 + 1)
            lam = 4.0 / grid.dx**2 * np.sin(np.pi * k / grid.n_cells) ** 2
            d_bar = max(float(np.mean(model.D_h(rho_T))), 1e-12)
            resp = -np.expm1(-2.0 * d_bar * lam * p.t_final)
            gain = np.zeros_like(lam)
            gain[1:] = 1.0 / np.maximum(resp[1:], 1e-3)
            r = np.fft.irfft(np.fft.rfft(r) * gain, n=grid.n_cells)
        out = theta * r
        return out - out.mean()

    H_T = np.zeros(grid.n_cells)
    if p.seed is not None and p.init_amplitude > 0:
        rng = np.random.default_rng(p.seed)
        H_T = p.init_amplitude * rng.standard_normal(grid.n_cells)
        H_T -= H_T.mean()
    H = np.tile(H_T, (n_t, 1))
    rho, j = _forward(model, p.mu0, H, dt, grid)

    theta = p.theta
    err = np.inf
    best = None
    history = []
    converged = False
    it = 0
    for it in range(1, p.max_iter + 1):
        try:
            H_new = _backward(model, rho, H_T, dt, grid, H)
            rho_new, j_new = _forward(model, p.mu0, H_new, dt, grid)
        except (DomainError, BridgeError, RuntimeError) as exc:
            if best is None or theta <= p.theta_min:
                raise BridgeError(f"sweep {it} failed: {exc}") from None
            theta = max(theta / 2, p.theta_min)
            H_T = best[0] + correction(theta, best[2][-1])
            H, rho, j = best[1], best[2], best[3]
            continue
        new_err = float(np.max(np.abs(rho_new[-1] - p.mu1)))
        change = float(np.max(np.abs(H_new - H)))
        history.append(new_err)
        if new_err > err * (1 + 1e-12) and theta > p.theta_min and new_err > p.tol:
            theta = max(theta / 2, p.theta_min)
            H_T = best[0] + correction(theta, best[2][-1])
            H, rho, j = best[1], best[2], best[3]
            log.debug("sweep %d: endpoint error grew, theta -> %g", it, theta)
            continue
        H, rho, j, err = H_new, rho_new, j_new, new_err
        best = (H_T.copy(), H, rho, j)
        log.debug("sweep %d: endpoint error %.3e, change %.3e", it, err, change)
        if err <= p.tol and change <= p.tol_fp:
            converged = True
            break
        try:
            H_T = H_T + correction(theta, rho[-1])
        except FloatingPointError:
            break

    rho_f = SpaceTimeField(grid, p.t_final, rho, "cell", "rho")
    H_f = SpaceTimeField(grid, p.t_final, H, "cell", "H")
    j_f = SpaceTimeField(grid, p.t_final, j, "face", "j")
    value = rate_dyn(model, rho=rho_f, j=j_f)
    res = canonical_residual(model, rho_f, H_f)
    diagnostics = {
        "iterations": it,
        "endpoint_error": err,
        "canonical_residual": res,
        "hamiltonian_drift": hamiltonian_drift(model, rho_f, H_f),
        "theta": theta,
        "seed": p.seed,
        "history": history,
        "wall_time": time.perf_counter() - t0,
    }
    return BridgeSolution(p, rho_f, H_f, j_f, value, converged, diagnostics)


def solve_hsp_multistart(problem: BridgeProblem, seeds, amplitude: float = 0.1):
    """Run :func:`solve_hsp` from several random initial momenta.

    All converged solutions are returned (sorted by value); distinct
    minimisers with equal values are kept.
    """
    sols = [solve_hsp(replace(problem, seed=int(s), init_amplitude=amplitude)) for s in seeds]
    return sorted(sols, key=lambda s: s.value)


# -- optimal measure ----------------------------------------------------------

def drift_from_field(model: TransportModel, rho, E, grid: Grid, eps=EPS_RHO):
    """``(D_s, b)`` with ``b = grad D_s + (D_s - D_h) grad rho/rho + 2 (sigma/rho) E``."""
    if model.D_s is None:
        raise ModelError(f"model {model.name!r} has no closed-form self-diffusion")
    if np.min(rho) < eps:
        raise DomainError(f"density drops below {eps:g}; drift undefined")
    Ds = model.D_s(rho)
    rho_f = to_faces(rho)
    b = (grad(Ds, grid)
         + to_faces(Ds - model.D_h(rho)) * grad(rho, grid) / rho_f
         + 2.0 * to_faces(model.sigma(rho)) / rho_f * E)
    return Ds, b


def optimal_drift(solution: BridgeSolution) -> DriftSpec:
    """Diffusion ``D_s(rho*)`` and drift
    ``grad D_s + (D_s - D_h) grad rho*/rho* + 2 (sigma/rho*) grad H*``."""
    grid = solution.grid
    Ds, b = drift_from_field(solution.model, solution.rho_star.values,
                             grad(solution.H_star.values, grid), grid)
    rf = solution.rho_star
    return DriftSpec(rf.with_values(Ds, "D_s"), solution.j_star.with_values(b, "drift"))


@dataclass
class ReversedBridge:
    """Time-reversed optimal path.

    ``solution`` carries ``rho*_{T-t}``, ``H_hat_{T-t}`` and ``-j*_{T-t}``;
    ``H_hat`` is the dual momentum ``f'(rho*) - H*`` on the forward clock.
    """

    solution: BridgeSolution
    H_hat: SpaceTimeField
    drift: DriftSpec | None
    secH_residual: tuple[float, float]


def reverse_bridge(solution: BridgeSolution, require_drift: bool = True) -> ReversedBridge:
    model = solution.model
    rho, H = solution.rho_star, solution.H_star
    H_hat = H.with_values(model.f_prime(rho.values) - H.values, "H_hat")
    rev_rho = rho.reversed()
    rev_H = H_hat.reversed()
    rev_j = solution.j_star.reversed().with_values(-solution.j_star.values[::-1], "j")
    p = solution.problem
    rev_problem = replace(p, mu0=p.mu1.copy(), mu1=p.mu0.copy())
    rev = BridgeSolution(rev_problem, rev_rho, rev_H, rev_j, solution.value,
                         solution.converged, {"reversed_from": solution.diagnostics})
    drift = None
    if require_drift or model.D_s is not None:
        drift = optimal_drift(rev)
        drift.reversed = True
    # (H*, H_hat) solve two copies of the momentum equation with opposite sign
    res_fwd = canonical_residual(model, rho, H)[1]
    res_rev = canonical_residual(model, rev_rho, rev_H)[1]
    return ReversedBridge(rev, H_hat, drift, (res_fwd, res_rev))


def born_density(model: TransportModel, H, H_hat) -> np.ndarray:
    """Recover ``rho* = (f')^{-1}(H* + H_hat)``."""
    return model.f_prime_inverse(np.asarray(H) + np.asarray(H_hat)).reshape(np.shape(H))


# -- serialisation ------------------------------------------------------------

def save_solution(solution: BridgeSolution, out_dir, config: dict | None = None) -> str:
    """Write ``rho.csv``, ``H.csv``, ``j.csv`` and ``solution.json``; return the content hash."""
    import hashlib
    import json
    from pathlib import Path

    from .fields import write_csv

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "rho.csv", solution.rho_star)
    write_csv(out / "H.csv", solution.H_star)
    write_csv(out / "j.csv", solution.j_star)
    h = hashlib.sha256()
    for name in ("rho.csv", "H.csv", "j.csv"):
        h.update((out / name).read_bytes())
    diag = {k: v for k, v in solution.diagnostics.items() if k != "history"}
    doc = {
        "value": solution.value,
        "converged": solution.converged,
        "model": solution.model.name,
        "n_cells": solution.grid.n_cells,
        "length": solution.grid.length,
        "t_final": solution.problem.t_final,
        "n_steps": solution.problem.n_steps,
        "diagnostics": _jsonable(diag),
        "config": config or {},
        "content_hash": h.hexdigest(),
    }
    (out / "solution.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    return doc["content_hash"]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj
