"""scikit-learn style wrappers around the solvers.

These exist so that parameter sweeps can use ``get_params``/``set_params``
and ``sklearn.base.clone``.  ``fit`` takes the problem data (endpoint
densities, a current, an equilibrium density) rather than a design matrix;
there is no ``predict``.  Fitted attributes carry a trailing underscore.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .bridge import BridgeProblem, solve_hsp
from .colehopf import solve_static_sinkhorn
from .currents import CurrentProblem, solve_hspc, solve_hspdc, u_of_j
from .fields import Grid
from .micro import tagged_diffusion
from .models import builtin


def _model(model):
    return builtin(model) if isinstance(model, str) else model


class BridgeEstimator(BaseEstimator):
    """Hydrodynamic Schrödinger bridge between two density profiles."""

    def __init__(self, model="independent", n_cells=64, length=1.0, t_final=0.1, n_steps=100,
                 tol=1e-10, max_iter=400, theta=0.5, precondition=True):
        self.model = model
        self.n_cells = n_cells
        self.length = length
        self.t_final = t_final
        self.n_steps = n_steps
        self.tol = tol
        self.max_iter = max_iter
        self.theta = theta
        self.precondition = precondition

    def fit(self, mu0, mu1):
        grid = Grid(int(self.n_cells), float(self.length))
        prob = BridgeProblem(_model(self.model), grid, float(self.t_final), int(self.n_steps),
                             np.asarray(mu0, float), np.asarray(mu1, float), tol=self.tol,
                             max_iter=self.max_iter, theta=self.theta,
                             precondition=self.precondition)
        sol = solve_hsp(prob)
        self.solution_ = sol
        self.rho_ = sol.rho_star.values
        self.H_ = sol.H_star.values
        self.j_ = sol.j_star.values
        self.value_ = sol.value
        self.converged_ = sol.converged
        self.n_iter_ = sol.diagnostics["iterations"]
        return self

    def score(self, mu0=None, mu1=None):
        # larger is better in sklearn conventions
        return -self.value_


class CurrentEstimator(BaseEstimator):
    """Minimal cost per unit time of sustaining a mean current ``J_bar``."""

    def __init__(self, model="independent", n_cells=32, length=1.0, t_final=1.0, n_steps=32,
                 m=1.0, initial="deterministic", periodic_endpoints=False, n_starts=1, seed=0):
        self.model = model
        self.n_cells = n_cells
        self.length = length
        self.t_final = t_final
        self.n_steps = n_steps
        self.m = m
        self.initial = initial
        self.periodic_endpoints = periodic_endpoints
        self.n_starts = n_starts
        self.seed = seed

    def fit(self, J_bar):
        grid = Grid(int(self.n_cells), float(self.length))
        model = _model(self.model)
        prob = CurrentProblem(model, grid, float(self.t_final), int(self.n_steps), J_bar,
                              m=self.m, initial=self.initial, n_starts=self.n_starts,
                              seed=self.seed)
        sol = solve_hspdc(prob) if self.periodic_endpoints else solve_hspc(prob)
        self.solution_ = sol
        self.value_ = sol.value_per_time
        self.u_bound_ = sol.u_bound
        self.gap_ = sol.gap
        self.converged_ = sol.converged
        return self


class StationaryCurrentEstimator(BaseEstimator):
    """Stationary cost ``U(J_bar)`` over constant-in-time profiles of mean ``m``."""

    def __init__(self, model="independent", n_cells=32, length=1.0, m=1.0, n_starts=4, seed=0):
        self.model = model
        self.n_cells = n_cells
        self.length = length
        self.m = m
        self.n_starts = n_starts
        self.seed = seed

    def fit(self, J_bar):
        grid = Grid(int(self.n_cells), float(self.length))
        val, prof, ok = u_of_j(_model(self.model), float(J_bar), self.m, grid,
                               n_starts=self.n_starts, seed=self.seed)
        self.value_, self.profile_, self.converged_ = val, prof, ok
        return self


class StaticSinkhornEstimator(BaseEstimator):
    """Entropic static problem against the torus heat kernel."""

    def __init__(self, n_cells=64, length=1.0, t_final=0.1, tol=1e-10):
        self.n_cells = n_cells
        self.length = length
        self.t_final = t_final
        self.tol = tol

    def fit(self, mu0, mu1):
        grid = Grid(int(self.n_cells), float(self.length))
        plan = solve_static_sinkhorn(np.asarray(mu0, float), np.asarray(mu1, float), grid,
                                     float(self.t_final), tol=self.tol)
        self.plan_ = plan
        self.value_ = plan.value
        return self


class TaggedDiffusionEstimator(BaseEstimator):
    """Self-diffusion coefficient and MSD exponent from equilibrium simulations."""

    def __init__(self, model_kind="zero_range", ell=128, T_msd=50.0, replicas=16, seed=0,
                 t_min=None, level=0.95):
        self.model_kind = model_kind
        self.ell = ell
        self.T_msd = T_msd
        self.replicas = replicas
        self.seed = seed
        self.t_min = t_min
        self.level = level

    def fit(self, m):
        est = tagged_diffusion(self.model_kind, int(self.ell), float(m), float(self.T_msd),
                               int(self.replicas), int(self.seed), t_min=self.t_min,
                               level=self.level)
        self.estimate_ = est
        self.D_s_ = est.estimate
        self.ci_ = est.ci
        self.exponent_ = est.exponent
        return self
