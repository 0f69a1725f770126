"""Forward hydrodynamic solvers and dynamical rate functionals.

The perturbed hydrodynamic equation

    d_t rho + div j = 0,    j = -D_h(rho) grad rho + 2 sigma(rho) E

is discretised on the staggered grid with face coefficients taken as the
arithmetic mean of the adjacent cells.  The default stepper is the
trapezoid rule solved by Newton iteration: node currents are the physical
fluxes ``j_k = J(rho_k, E_k)`` and each step moves ``rho`` by the average of
the two node fluxes, so discrete continuity holds to rounding.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._linalg import solve_cyclic
from .fields import Grid, SpaceTimeField, div, grad, time_integral, to_faces
from .models import DomainError, TransportModel, ZeroRangeSpec

EPS_RHO = 1e-10


class StabilityError(ValueError):
    pass


class ClampWarning(RuntimeWarning):
    pass


@dataclass
class HydroTrajectory:
    rho: SpaceTimeField
    j: SpaceTimeField
    model: TransportModel
    E: SpaceTimeField | None = None
    stagger: str = "midpoint"
    info: dict = field(default_factory=dict)

    @property
    def grid(self) -> Grid:
        return self.rho.grid


# -- fluxes ------------------------------------------------------------------

def flux(model: TransportModel, rho, E, grid: Grid) -> np.ndarray:
    """Face current ``-D_h grad rho + 2 sigma E`` (last axis is space)."""
    rho = np.asarray(rho, dtype=float)
    out = -to_faces(model.D_h(rho)) * grad(rho, grid)
    if E is not None:
        out = out + 2.0 * to_faces(model.sigma(rho)) * E
    return out


def flux_jacobian(model: TransportModel, rho, E, grid: Grid):
    """Derivatives of face current ``f`` w.r.t. cells ``f`` and ``f + 1``."""
    dx = grid.dx
    q = grad(rho, grid)
    Dp = model.D_h_prime(rho)
    Df = to_faces(model.D_h(rho))
    a = -0.5 * Dp * q + Df / dx
    b = -0.5 * np.roll(Dp, -1) * q - Df / dx
    if E is not None:
        sp = model.sigma_prime(rho)
        a = a + sp * E
        b = b + np.roll(sp, -1) * E
    return a, b


def div_flux_jacobian(a, b, grid: Grid):
    """Cyclic diagonals of ``d div(J) / d rho`` given :func:`flux_jacobian`."""
    dx = grid.dx
    lower = -np.roll(a, 1) / dx
    diag = (a - np.roll(b, 1)) / dx
    upper = b / dx
    return lower, diag, upper


def trapezoid_step(model, rho, E0, E1, dt, grid, *, flux0=None, tol=1e-14, max_newton=50):
    """One trapezoid step; returns ``(rho_next, flux_next)``."""
    if flux0 is None:
        flux0 = flux(model, rho, E0, grid)
    base = rho - 0.5 * dt * div(flux0, grid)
    new = rho.copy()
    for _ in range(max_newton):
        f1 = flux(model, new, E1, grid)
        resid = new - base + 0.5 * dt * div(f1, grid)
        a, b = flux_jacobian(model, new, E1, grid)
        lo, di, up = div_flux_jacobian(a, b, grid)
        delta = solve_cyclic(0.5 * dt * lo, 1.0 + 0.5 * dt * di, 0.5 * dt * up, -resid)
        new = new + delta
        if np.max(np.abs(delta)) <= tol * max(1.0, np.max(np.abs(new))):
            break
    else:
        raise RuntimeError("Newton iteration in trapezoid step did not converge")
    f1 = flux(model, new, E1, grid)
    # rebuild rho from the stored flux so the pair is continuity-exact; the
    # flux then differs from J(rho_next) only at the Newton tolerance
    return base - 0.5 * dt * div(f1, grid), f1


def _integrate(model: TransportModel, rho0, E, grid, t_final, n_steps, method):
    rho0 = np.asarray(rho0, dtype=float)
    model.check_domain(rho0, "rho0")
    dt = t_final / n_steps
    rho = np.empty((n_steps + 1, grid.n_cells))
    j = np.empty_like(rho)
    rho[0] = rho0
    Ek = (lambda k: None) if E is None else (lambda k: E[k])
    if method == "explicit":
        dmax = float(np.max(model.D_h(rho0)))
        if dt > grid.dx**2 / (2.0 * dmax) * (1 + 1e-12):
            raise StabilityError(
                f"dt = {dt:.3g} exceeds the explicit bound dx^2/(2 max D_h) = "
                f"{grid.dx**2 / (2 * dmax):.3g}; increase n_steps or use method='trapezoid'"
            )
        for k in range(n_steps):
            j[k] = flux(model, rho[k], Ek(k), grid)
            rho[k + 1] = rho[k] - dt * div(j[k], grid)
            _check(model, rho[k + 1], k + 1)
        j[n_steps] = flux(model, rho[n_steps], Ek(n_steps), grid)
        return rho, j, "left"
    if method not in ("trapezoid", "crank_nicolson"):
        raise ValueError(f"unknown method {method!r}")
    j[0] = flux(model, rho0, Ek(0), grid)
    for k in range(n_steps):
        rho[k + 1], j[k + 1] = trapezoid_step(model, rho[k], Ek(k), Ek(k + 1), dt, grid,
                                              flux0=j[k])
        _check(model, rho[k + 1], k + 1)
    return rho, j, "midpoint"


def _check(model, rho, k):
    try:
        model.check_domain(rho)
    except DomainError as exc:
        raise DomainError(f"at time node {k}: {exc}") from None


def solve_nde(model: TransportModel, rho0, grid: Grid, t_final: float, n_steps: int,
              method: str = "trapezoid") -> HydroTrajectory:
    """Solve ``d_t rho = div(D_h(rho) grad rho)``.

    ``method="explicit"`` is forward Euler (CFL-guarded); its currents are
    step fluxes (``stagger="left"``).  ``method="trapezoid"`` (alias
    ``"crank_nicolson"``) is second order in time.
    """
    rho, j, stagger = _integrate(model, rho0, None, grid, t_final, n_steps, method)
    return HydroTrajectory(
        SpaceTimeField(grid, t_final, rho, "cell", "rho"),
        SpaceTimeField(grid, t_final, j, "face", "j"),
        model, None, stagger,
    )


def solve_perturbed(model: TransportModel, rho0, E: SpaceTimeField,
                    method: str = "trapezoid") -> HydroTrajectory:
    """Solve the hydrodynamic equation driven by the face field ``E``."""
    if E.location != "face":
        raise ValueError("E must be a face field")
    rho, j, stagger = _integrate(model, rho0, E.values, E.grid, E.t_final, E.n_steps, method)
    return HydroTrajectory(
        SpaceTimeField(E.grid, E.t_final, rho, "cell", "rho"),
        SpaceTimeField(E.grid, E.t_final, j, "face", "j"),
        model, E, stagger,
    )


# -- rate functionals --------------------------------------------------------

def _as_values(x):
    return x.values if isinstance(x, SpaceTimeField) else np.asarray(x, dtype=float)


def _density_integrand(model, rho, j, grid, tol=1e-14):
    num = (j + to_faces(model.D_h(rho)) * grad(rho, grid)) ** 2
    sig = to_faces(model.sigma(rho))
    zero = sig <= 0
    if np.any(zero & (num > tol)):
        return None
    out = np.zeros_like(num)
    np.divide(num, sig, out=out, where=~zero)
    return 0.25 * out


def rate_dyn(model: TransportModel, traj: HydroTrajectory | None = None, *,
             rho: SpaceTimeField | None = None, j: SpaceTimeField | None = None) -> float:
    """``(1/4) int dt int dx |j + D_h grad rho|^2 / sigma``.

    Returns ``math.inf`` where the numerator is positive on a face with zero
    mobility (convention ``0/0 = 0``).
    """
    if traj is not None:
        rho, j = traj.rho, traj.j
    grid = rho.grid
    dens = _density_integrand(model, rho.values, j.values, grid)
    if dens is None:
        return math.inf
    return time_integral(dens.sum(axis=1) * grid.dx, rho.dt)


def field_from_current(model: TransportModel, rho, j, grid: Grid, eps: float = EPS_RHO):
    """Invert the perturbed constitutive law: ``E = (j + D_h grad rho) / (2 sigma)``.

    Faces where ``sigma < eps`` are clamped to ``eps`` and a
    :class:`ClampWarning` is emitted.
    """
    rho = np.asarray(_as_values(rho), dtype=float)
    j = np.asarray(_as_values(j), dtype=float)
    sig = to_faces(model.sigma(rho))
    if np.any(sig < eps):
        warnings.warn(f"mobility below {eps:g} on {int(np.sum(sig < eps))} faces; clamped",
                      ClampWarning, stacklevel=2)
        sig = np.maximum(sig, eps)
    return (j + to_faces(model.D_h(rho)) * grad(rho, grid)) / (2.0 * sig)


def rate_via_field(model: TransportModel, rho: SpaceTimeField, E: SpaceTimeField) -> float:
    """Work of the external field ``int dt int dx sigma(rho) |E|^2``."""
    if rho.values.shape != _as_values(E).shape:
        raise ValueError("rho and E are not aligned")
    grid = rho.grid
    dens = to_faces(model.sigma(rho.values)) * _as_values(E) ** 2
    return time_integral(dens.sum(axis=1) * grid.dx, rho.dt)


def entropy_zero_range(spec: ZeroRangeSpec, rho: SpaceTimeField, j: SpaceTimeField,
                       grad_phi: str = "chain") -> float:
    """Relative entropy of the optimal Markov measure w.r.t. ``Q(rho)``.

    Evaluates ``int dt int dx [j E + grad(phi(rho)) E - phi(rho) |E|^2]`` with
    ``E`` recovered from ``(rho, j)``.  ``grad_phi="chain"`` discretises
    ``grad phi(rho)`` as ``phi'_face * grad rho`` (the flux discretisation);
    ``"direct"`` differences ``phi(rho)``, which agrees to ``O(dx^2)``.
    """
    from .models import zero_range

    model = zero_range(spec)
    grid = rho.grid
    r = rho.values
    E = field_from_current(model, r, j.values, grid)
    if grad_phi == "chain":
        gphi = to_faces(model.D_h(r)) * grad(r, grid)
    elif grad_phi == "direct":
        gphi = grad(model.sigma(r), grid)
    else:
        raise ValueError(f"unknown grad_phi {grad_phi!r}")
    phi_f = to_faces(model.sigma(r))
    dens = j.values * E + gphi * E - phi_f * E**2
    return time_integral(dens.sum(axis=1) * grid.dx, rho.dt)
