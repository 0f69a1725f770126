"""Current-constrained Schrodinger problems.

The control problem is discretised first and optimised second: the state
is the trapezoid solution of the perturbed hydrodynamic equation, the
decision variables are the face field ``E`` at every time node (and the
initial profile in Gibbs mode), and the time-averaged current constraint is
imposed per face by an augmented Lagrangian.  Gradients come from the
discrete adjoint of the trapezoid scheme.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from ._linalg import cyclic_matvec, cyclic_transpose, solve_cyclic
from .bridge import BridgeSolution, DriftSpec, drift_from_field
from .fields import (Grid, SpaceTimeField, div, grad, mass, to_cells, to_faces,
                     trapezoid_weights)
from .hydro import (div_flux_jacobian, flux, flux_jacobian, rate_dyn, rate_via_field,
                    trapezoid_step)
from .models import DomainError, TransportModel, free_energy_difference

log = logging.getLogger(__name__)

DETERMINISTIC = "deterministic"
GIBBS = "gibbs"


class CurrentError(ValueError):
    pass


@dataclass
class CurrentProblem:
    model: TransportModel
    grid: Grid
    t_final: float
    n_steps: int
    J_bar: float | np.ndarray
    m: float = 1.0
    mu0: np.ndarray | None = None
    mu1: np.ndarray | None = None
    initial: str = DETERMINISTIC
    tol: float = 1e-8
    max_outer: int = 12
    max_inner: int = 400
    penalty0: float = 10.0
    penalty_max: float = 1e8
    n_starts: int = 1
    perturbation: float = 0.3
    seed: int = 0

    def __post_init__(self):
        n = self.grid.n_cells
        jb = np.asarray(self.J_bar, dtype=float)
        if jb.ndim == 0:
            jb = np.full(n, float(jb))
        if jb.shape != (n,):
            raise CurrentError("J_bar must be a scalar or a face field")
        self.J_bar = jb
        if self.initial not in (DETERMINISTIC, GIBBS):
            raise CurrentError(f"unknown initial-condition mode {self.initial!r}")
        if self.mu0 is None:
            self.mu0 = np.full(n, float(self.m))
        self.mu0 = np.asarray(self.mu0, dtype=float)
        self.m = mass(self.mu0, self.grid) / self.grid.length
        self.model.check_domain(self.mu0, "mu0")
        if self.mu1 is not None:
            self.mu1 = np.asarray(self.mu1, dtype=float)
            if self.initial == GIBBS:
                raise CurrentError("endpoint-constrained problems use a deterministic start")
            if abs(mass(self.mu1, self.grid) - mass(self.mu0, self.grid)) > 1e-10:
                raise CurrentError("endpoint masses differ")
            # continuity integrated over [0, T]: mu1 = mu0 - T div J_bar
            defect = np.max(np.abs(self.mu0 - self.t_final * div(jb, self.grid) - self.mu1))
            if defect > 1e-8:
                raise CurrentError(
                    f"incompatible data: mu1 != mu0 - T div J_bar (defect {defect:.2e})")

    @property
    def dt(self) -> float:
        return self.t_final / self.n_steps

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1


@dataclass
class CurrentSolution:
    problem: CurrentProblem
    rho: SpaceTimeField
    j: SpaceTimeField
    E: SpaceTimeField
    value_per_time: float
    rate_per_time: float
    i_in_per_time: float
    u_bound: float
    u_profile: np.ndarray
    gap: float
    time_dependent: bool
    constraint_error: float
    converged: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def A_pinning(self):
        """``(A_0, A_1)`` with ``A_0 - A_1 = T J_bar``."""
        A0 = cumulative_potential(self.rho.values[0], self.problem.m, self.rho.grid)
        return A0, A0 - self.problem.t_final * self.problem.J_bar


# -- constant-profile bound -------------------------------------------------------

def _profile_cost(model, rho, J_bar, grid):
    sig = to_faces(model.sigma(rho))
    r = J_bar + to_faces(model.D_h(rho)) * grad(rho, grid)
    return 0.25 * np.sum(r**2 / sig) * grid.dx, r, sig


def _profile_grad(model, rho, J_bar, grid):
    dx = grid.dx
    val, r, sig = _profile_cost(model, rho, J_bar, grid)
    # d/d rho of sum_f r_f^2/sig_f * dx/4
    w = 0.5 * r / sig * dx          # dval/dr
    s = -0.25 * r**2 / sig**2 * dx  # dval/dsig
    q = grad(rho, grid)
    Dp = model.D_h_prime(rho)
    Df = to_faces(model.D_h(rho))
    sp = model.sigma_prime(rho)
    g = np.zeros_like(rho)
    # r_f = J + Df q_f: dr_f/drho_f = 0.5 Dp_f q_f - Df/dx, dr_f/drho_{f+1} = 0.5 Dp_{f+1} q_f + Df/dx
    g += w * (0.5 * Dp * q - Df / dx) + np.roll(w * (0.5 * np.roll(Dp, -1) * q + Df / dx), 1)
    g += 0.5 * sp * (s + np.roll(s, 1))
    return val, g


def u_of_j(model: TransportModel, J_bar: float, m: float, grid: Grid, n_starts: int = 4,
           seed: int = 0, amplitude: float = 0.3, mass_constraint: bool = True):
    """Best constant-in-time strategy ``U(J) = inf (1/4) int |J + D_h grad r|^2 / sigma(r)``.

    The infimum runs over stationary profiles with mass ``m L`` (SLSQP with
    analytic gradients, multi-start from the flat profile and random
    cosine perturbations).  ``mass_constraint=False`` reports the
    unconstrained infimum instead, which is degenerate for mobilities that
    grow without bound.
    Returns ``(value, profile, converged)``.
    """
    n = grid.n_cells
    J = float(J_bar)
    lo, hi = model.rho_domain
    lo_b = max(lo, 0.0) + 1e-8
    hi_b = hi - 1e-8 if math.isfinite(hi) else None
    if not mass_constraint:
        if math.isfinite(hi):
            rho = np.full(n, hi - 1e-8)
            return float(_profile_cost(model, rho, J, grid)[0]), rho, True
        # sigma grows without bound for all unbounded builtins: cost -> 0
        return 0.0, np.full(n, np.inf), True
    rng = np.random.default_rng(seed)
    starts = [np.full(n, float(m))]
    x = grid.centers / grid.length
    for _ in range(max(0, n_starts - 1)):
        k = rng.integers(1, 4)
        amp = amplitude * min(m - lo, (hi - m) if math.isfinite(hi) else m) * rng.uniform(0.2, 1)
        starts.append(m + amp * np.cos(2 * np.pi * k * x + rng.uniform(0, 2 * np.pi)))
    cons = {"type": "eq", "fun": lambda r: (np.sum(r) * grid.dx - m * grid.length),
            "jac": lambda r: np.full(n, grid.dx)}
    best = None
    for r0 in starts:
        with warnings.catch_warnings():
            # SLSQP clips line-search trial points to the bounds and says so
            warnings.filterwarnings("ignore", "Values in x were outside bounds")
            res = optimize.minimize(lambda r: _profile_grad(model, r, J, grid), r0, jac=True,
                                    method="SLSQP", bounds=[(lo_b, hi_b)] * n,
                                    constraints=[cons], options={"ftol": 1e-14, "maxiter": 500})
        val = float(_profile_cost(model, res.x, J, grid)[0])
        if best is None or val < best[0]:
            best = (val, res.x, bool(res.success))
    return best


# -- discrete control problem -------------------------------------------------------

class _State:
    __slots__ = ("rho", "j", "E")

    def __init__(self, rho, j, E):
        self.rho, self.j, self.E = rho, j, E


def _split(problem: CurrentProblem, x):
    N, n = problem.n_nodes, problem.grid.n_cells
    E = x[: N * n].reshape(N, n)
    if problem.initial == GIBBS:
        rho0 = x[N * n:]
    else:
        rho0 = problem.mu0
    return E, rho0


def _forward(problem: CurrentProblem, E, rho0) -> _State:
    model, grid, dt = problem.model, problem.grid, problem.dt
    N = problem.n_nodes
    rho = np.empty((N, grid.n_cells))
    j = np.empty_like(rho)
    rho[0] = rho0
    j[0] = flux(model, rho0, E[0], grid)
    for k in range(N - 1):
        rho[k + 1], j[k + 1] = trapezoid_step(model, rho[k], E[k], E[k + 1], dt, grid,
                                              flux0=j[k])
        model.check_domain(rho[k + 1])
    return _State(rho, j, E)


def _pieces(problem: CurrentProblem, st: _State):
    """Objective (per unit time) and constraint vector for a forward state."""
    T, grid = problem.t_final, problem.grid
    w = trapezoid_weights(problem.n_steps, problem.dt)
    sig = to_faces(problem.model.sigma(st.rho))
    rate = float(np.dot(w, np.sum(sig * st.E**2, axis=1))) * grid.dx
    i_in = 0.0
    if problem.initial == GIBBS:
        i_in = free_energy_difference(problem.model, st.rho[0], problem.m, grid)
    c = w @ st.j / T - problem.J_bar
    return rate / T, i_in / T, c


def _adjoint_gradient(problem: CurrentProblem, st: _State, nu):
    """Gradient of ``objective + nu . c`` w.r.t. ``(E, rho0)`` by the discrete adjoint."""
    model, grid, dt, T = problem.model, problem.grid, problem.dt, problem.t_final
    dx = grid.dx
    N = problem.n_nodes
    w = trapezoid_weights(problem.n_steps, dt)
    rho, E = st.rho, st.E
    sig_f = to_faces(model.sigma(rho))
    sp = model.sigma_prime(rho)
    # local partial derivatives of sum_k w_k l(rho_k, E_k)
    gE = (w / T)[:, None] * (2.0 * dx * sig_f * E + 2.0 * sig_f * nu[None, :])
    g_rho = np.empty_like(rho)
    mats = []
    for k in range(N):
        a, b = flux_jacobian(model, rho[k], E[k], grid)
        mats.append(div_flux_jacobian(a, b, grid))
        d_nuJ = a * nu + np.roll(b * nu, 1)
        d_sig = sp[k] * to_cells(dx * E[k] ** 2)
        g_rho[k] = w[k] / T * (d_sig + d_nuJ)
    # backward sweep: (I + dt/2 M_k)^T p_k = -g_k - (-I + dt/2 M_k)^T p_{k+1}
    p = np.zeros_like(rho)
    for k in range(N - 1, 0, -1):
        tl, td, tu = cyclic_transpose(*mats[k])
        rhs = -g_rho[k]
        if k < N - 1:
            rhs = rhs + p[k + 1] - 0.5 * dt * cyclic_matvec(tl, td, tu, p[k + 1])
        p[k] = solve_cyclic(0.5 * dt * tl, 1.0 + 0.5 * dt * td, 0.5 * dt * tu, rhs)
    # E_k enters the steps on both sides of node k through (dt/2) div(2 sigma_f E_k)
    p_sum = p.copy()
    p_sum[:-1] += p[1:]
    gE = gE - dt * sig_f * grad(p_sum, grid)
    out = [gE.ravel()]
    if problem.initial == GIBBS:
        tl, td, tu = cyclic_transpose(*mats[0])
        g0 = g_rho[0] - p[1] + 0.5 * dt * cyclic_matvec(tl, td, tu, p[1])
        g0 = g0 + dx * (model.f_prime(rho[0]) - model.f_prime(np.array(problem.m))) / T
        out.append(g0 - g0.mean())
    return np.concatenate(out)


def control_objective(problem: CurrentProblem, x, lam=None, penalty: float = 0.0):
    """Augmented Lagrangian ``Phi + lam.c + (penalty/2)|c|^2`` and its gradient.

    ``Phi`` is the cost per unit time.  ``x`` packs ``E`` (row-major by time)
    followed by ``rho0`` in Gibbs mode.
    """
    n = problem.grid.n_cells
    lam = np.zeros(n) if lam is None else np.asarray(lam, dtype=float)
    E, rho0 = _split(problem, np.asarray(x, dtype=float))
    st = _forward(problem, E, rho0)
    rate, i_in, c = _pieces(problem, st)
    val = rate + i_in + lam @ c + 0.5 * penalty * (c @ c)
    g = _adjoint_gradient(problem, st, lam + penalty * c)
    return val, g


def _constant_start(problem: CurrentProblem):
    model = problem.model
    n = problem.grid.n_cells
    rho0 = problem.mu0.copy()
    E_row = problem.J_bar / (2.0 * to_faces(model.sigma(rho0)))
    if np.ptp(rho0) > 0 or np.ptp(problem.J_bar) > 0:
        # non-flat data: constant field is only an initial guess
        E_row = (problem.J_bar + to_faces(model.D_h(rho0)) * grad(rho0, problem.grid)) \
            / (2.0 * to_faces(model.sigma(rho0)))
    E = np.tile(E_row, (problem.n_nodes, 1))
    x = E.ravel()
    if problem.initial == GIBBS:
        x = np.concatenate([x, rho0])
    return x


def _perturbed_start(problem: CurrentProblem, x0, rng):
    N, n = problem.n_nodes, problem.grid.n_cells
    E = x0[: N * n].reshape(N, n).copy()
    t = np.linspace(0, 1, N)[:, None]
    xs = problem.grid.centers[None, :] / problem.grid.length
    scale = problem.perturbation * max(1e-3, float(np.max(np.abs(E))))
    for _ in range(3):
        kx, kt = rng.integers(1, 3), rng.integers(0, 3)
        ph = rng.uniform(0, 2 * np.pi, 2)
        E += scale * rng.uniform(-1, 1) * np.cos(2 * np.pi * kx * xs + ph[0]) \
            * np.cos(np.pi * kt * t + ph[1])
    x = x0.copy()
    x[: N * n] = E.ravel()
    return x


def _solve_al(problem: CurrentProblem, x0):
    n = problem.grid.n_cells
    dx = problem.grid.dx
    N = problem.n_nodes
    # multiplier estimate that makes the flat constant strategy stationary
    lam = -dx * x0[: N * n].reshape(N, n).mean(axis=0)
    penalty = problem.penalty0
    x = x0.copy()
    c_norm_prev = np.inf
    history = []
    for outer in range(problem.max_outer):
        res = optimize.minimize(lambda z: control_objective(problem, z, lam, penalty), x,
                                jac=True, method="L-BFGS-B",
                                options={"maxiter": problem.max_inner, "gtol": 1e-11,
                                         "ftol": 1e-15})
        x = res.x
        E, rho0 = _split(problem, x)
        st = _forward(problem, E, rho0)
        rate, i_in, c = _pieces(problem, st)
        c_norm = float(np.max(np.abs(c)))
        history.append((rate + i_in, c_norm, penalty))
        if c_norm <= problem.tol and res.success:
            break
        lam = lam + penalty * c
        if c_norm > 0.25 * c_norm_prev:
            penalty = min(10.0 * penalty, problem.penalty_max)
        c_norm_prev = c_norm
    return x, st, rate, i_in, c_norm, history


def _finish(problem, st, rate, i_in, c_norm, history, extra):
    grid, T = problem.grid, problem.t_final
    model = problem.model
    rho = SpaceTimeField(grid, T, st.rho, "cell", "rho")
    j = SpaceTimeField(grid, T, st.j, "face", "j")
    E = SpaceTimeField(grid, T, st.E, "face", "E")
    J_scalar = float(np.mean(problem.J_bar))
    if np.ptp(problem.J_bar) == 0:
        u, prof, _ = u_of_j(model, J_scalar, problem.m, grid)
    else:
        u, prof = math.nan, None
    value = rate + i_in
    avg = st.rho.mean(axis=0)
    time_dep = bool(np.max(np.abs(st.rho - avg)) > 1e-3)
    diag = {"history": history, "rate_dyn_per_time": rate_dyn(model, rho=rho, j=j) / T}
    diag.update(extra)
    return CurrentSolution(problem, rho, j, E, value, rate, i_in, u, prof,
                           u - value if math.isfinite(u) else math.nan,
                           time_dep, c_norm, c_norm <= problem.tol, diag)


def solve_hspc(problem: CurrentProblem) -> CurrentSolution:
    """Direct optimal control for the current-constrained problem.

    Starts from the best constant strategy (exactly feasible) and, when
    ``n_starts > 1``, from seeded perturbations of it; the best feasible
    result is returned.
    """
    x0 = _constant_start(problem)
    rng = np.random.default_rng(problem.seed)
    starts = [x0] + [_perturbed_start(problem, x0, rng) for _ in range(problem.n_starts - 1)]
    best = None
    for i, xs in enumerate(starts):
        try:
            out = _solve_al(problem, xs)
        except (DomainError, RuntimeError) as exc:
            log.info("start %d failed: %s", i, exc)
            continue
        _, _, rate, i_in, c_norm, _ = out
        feasible = c_norm <= problem.tol
        key = (not feasible, rate + i_in)
        if best is None or key < best[0]:
            best = (key, i, out)
    if best is None:
        raise CurrentError("every start left the model domain")
    _, i, (x, st, rate, i_in, c_norm, history) = best
    return _finish(problem, st, rate, i_in, c_norm, history,
                   {"start": i, "n_starts": len(starts), "seed": problem.seed})


def solve_hspdc(problem: CurrentProblem) -> CurrentSolution:
    """Current- and endpoint-constrained problem.

    The per-face time-averaged current fixes ``rho_T = mu0 - T div J_bar``
    exactly through the discrete continuity equation, so the endpoint
    constraint is implied by the current constraint once the data are
    compatible (checked by :class:`CurrentProblem`).
    """
    if problem.mu1 is None:
        raise CurrentError("endpoint-constrained problem needs mu1")
    sol = solve_hspc(problem)
    sol.diagnostics["endpoint_error"] = float(np.max(np.abs(sol.rho.values[-1] - problem.mu1)))
    A0, A1 = sol.A_pinning
    sol.diagnostics["A0"], sol.diagnostics["A1"] = A0, A1
    return sol


def write_sweep_csv(path, rows):
    """Rows of ``(J_bar, T, value_per_time, u_bound, gap, time_dependent)``."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["J_bar", "T", "value_per_time", "u_bound", "gap", "time_dependent"])
        for r in rows:
            w.writerow([repr(float(r[0])), repr(float(r[1])), repr(float(r[2])),
                        repr(float(r[3])), repr(float(r[4])), str(bool(r[5])).lower()])


def current_sweep(model, grid, J_values, T_values, n_steps_per_unit=32, **kw):
    rows = []
    for T in T_values:
        for J in J_values:
            prob = CurrentProblem(model, grid, T, max(8, int(round(n_steps_per_unit * T))),
                                  J, **kw)
            s = solve_hspc(prob)
            rows.append((J, T, s.value_per_time, s.u_bound, s.gap, s.time_dependent))
    return rows


# -- vector potential formulation -----------------------------------------------------

def cumulative_potential(rho0, m: float, grid: Grid) -> np.ndarray:
    """Face field ``A`` with ``div A = rho0 - m`` anchored at ``A = 0`` on the last face."""
    return np.cumsum((np.asarray(rho0, dtype=float) - m) * grid.dx)


def potential_from_trajectory(rho: SpaceTimeField, j: SpaceTimeField, m: float | None = None):
    """``A`` with ``div A_t = rho_t - m`` and ``A_{k+1} = A_k - dt (j_k + j_{k+1})/2``."""
    grid = rho.grid
    if m is None:
        m = mass(rho.values[0], grid) / grid.length
    steps = 0.5 * (j.values[1:] + j.values[:-1]) * rho.dt
    A = np.empty_like(j.values)
    A[0] = cumulative_potential(rho.values[0], m, grid)
    A[1:] = A[0] - np.cumsum(steps, axis=0)
    return j.with_values(A, "A")


def action_A(model: TransportModel, A: SpaceTimeField, m: float, dA_dt=None) -> float:
    """``(1/4) int |d_t A - D(div A + m) grad div A|^2 / sigma(div A + m)``.

    ``d_t A`` defaults to second-order differences in time; a consistent
    time derivative may be supplied instead.
    """
    grid = A.grid
    rho = div(A.values, grid) + m
    if dA_dt is None:
        dA_dt = np.gradient(A.values, A.dt, axis=0, edge_order=2)
    dA = dA_dt.values if isinstance(dA_dt, SpaceTimeField) else np.asarray(dA_dt)
    return rate_dyn(model, rho=A.with_values(rho, "rho"), j=A.with_values(-dA, "j"))


def hamiltonian_A(model: TransportModel, A, B, m: float, grid: Grid):
    """``int sigma(u + m) |B|^2 + B . D(u + m) grad u`` with ``u = div A``."""
    r = div(A, grid) + m
    dens = (to_faces(model.sigma(r)) * B**2
            + B * to_faces(model.D_h(r)) * grad(r, grid))
    return np.sum(dens, axis=-1) * grid.dx


def _A_rhs(model, A, B, m, grid):
    r = div(A, grid) + m
    return 2.0 * to_faces(model.sigma(r)) * B + to_faces(model.D_h(r)) * grad(r, grid)


def _B_rhs(model, A, B, m, grid):
    r = div(A, grid) + m
    psi = (model.sigma_prime(r) * to_cells(B**2)
           + model.D_h_prime(r) * to_cells(B * grad(r, grid))
           - div(to_faces(model.D_h(r)) * B, grid))
    return grad(psi, grid)


def extended_canonical_residual(model: TransportModel, A: SpaceTimeField, B: SpaceTimeField,
                                m: float):
    """Trapezoid-form defects of ``d_t A = dHam/dB`` and ``d_t B = -dHam/dA``."""
    grid, dt = A.grid, A.dt
    FA = np.array([_A_rhs(model, a, b, m, grid) for a, b in zip(A.values, B.values)])
    FB = np.array([_B_rhs(model, a, b, m, grid) for a, b in zip(A.values, B.values)])
    rA = np.diff(A.values, axis=0) / dt - 0.5 * (FA[1:] + FA[:-1])
    rB = np.diff(B.values, axis=0) / dt - 0.5 * (FB[1:] + FB[:-1])
    return float(np.max(np.abs(rA))), float(np.max(np.abs(rB)))


def potentials_from_bridge(solution: BridgeSolution):
    """``(A, B, m)`` with ``A`` built from ``j*`` and ``B = -grad H*``."""
    grid = solution.grid
    m = mass(solution.problem.mu0, grid) / grid.length
    A = potential_from_trajectory(solution.rho_star, solution.j_star, m)
    B = solution.j_star.with_values(-grad(solution.H_star.values, grid), "B")
    return A, B, m


@dataclass
class ReversedCurrent:
    E_hat: SpaceTimeField
    drift: DriftSpec | None


def reverse_current_bridge(solution, model: TransportModel | None = None,
                           require_drift: bool = True) -> ReversedCurrent:
    """``E_hat = grad f'(rho*) - E*`` and the drift of the time-reversed process."""
    if isinstance(solution, BridgeSolution):
        rho, E = solution.rho_star, solution.E_star
        model = model or solution.model
    else:
        rho, E = solution.rho, solution.E
        model = model or solution.problem.model
    grid = rho.grid
    E_hat = E.with_values(grad(model.f_prime(rho.values), grid) - E.values, "E_hat")
    drift = None
    if require_drift or model.D_s is not None:
        r_rev = rho.values[::-1]
        Ds, b = drift_from_field(model, r_rev, E_hat.values[::-1], grid)
        drift = DriftSpec(rho.with_values(Ds, "D_s"), E.with_values(b, "drift"), True)
    return ReversedCurrent(E_hat, drift)
