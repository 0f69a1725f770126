"""Hydrodynamic Schrodinger bridges for interacting particle systems on the 1-D torus."""

from .fields import Grid, SpaceTimeField, continuity_residual, div, grad, mass
from .models import TransportModel, ZeroRangeSpec, builtin, einstein_residual
from .hydro import rate_dyn, rate_via_field, solve_nde, solve_perturbed
from .bridge import BridgeProblem, BridgeSolution, optimal_drift, reverse_bridge, solve_hsp
from .colehopf import solve_independent_bridge, solve_static_sinkhorn
from .currents import CurrentProblem, solve_hspc, solve_hspdc, u_of_j

__version__ = "0.1.0"

__all__ = [
    "Grid", "SpaceTimeField", "continuity_residual", "div", "grad", "mass",
    "TransportModel", "ZeroRangeSpec", "builtin", "einstein_residual",
    "rate_dyn", "rate_via_field", "solve_nde", "solve_perturbed",
    "BridgeProblem", "BridgeSolution", "optimal_drift", "reverse_bridge", "solve_hsp",
    "solve_independent_bridge", "solve_static_sinkhorn",
    "CurrentProblem", "solve_hspc", "solve_hspdc", "u_of_j",
]
