"""Discrete calculus on a staggered periodic 1-D grid.

Densities and momenta live at cell centres, currents and fields live on the
faces.  Face ``i`` sits between cells ``i`` and ``i + 1`` (periodically), so

    grad(c)[i] = (c[i+1] - c[i]) / dx
    div(f)[i]  = (f[i] - f[i-1]) / dx

and ``div`` is the exact negative adjoint of ``grad`` for the ``dx``-weighted
inner products.  Time integrals use the trapezoid rule on uniform nodes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PERIODIC = "periodic"
LINE = "line"


class GridError(ValueError):
    """Raised when an operation receives fields on an unsuitable grid."""


@dataclass(frozen=True)
class Grid:
    n_cells: int
    length: float = 1.0
    boundary: str = PERIODIC

    def __post_init__(self):
        if int(self.n_cells) != self.n_cells or self.n_cells < 8:
            raise GridError(f"n_cells must be an integer >= 8, got {self.n_cells}")
        if not self.length > 0:
            raise GridError(f"length must be positive, got {self.length}")
        if self.boundary not in (PERIODIC, LINE):
            raise GridError(f"unknown boundary mode {self.boundary!r}")

    @property
    def dx(self) -> float:
        return self.length / self.n_cells

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 0.5) * self.dx

    @property
    def faces(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 1.0) * self.dx

    def line(self) -> "Grid":
        return Grid(self.n_cells, self.length, LINE)


@dataclass(frozen=True)
class SpaceTimeField:
    """Field sampled on ``n_steps + 1`` uniform time nodes.

    ``values`` has shape ``(n_steps + 1, n_cells)``.  ``location`` is either
    ``"cell"`` or ``"face"``.
    """

    grid: Grid
    t_final: float
    values: np.ndarray
    location: str = "cell"
    name: str = "value"
    _checked: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] != self.grid.n_cells:
            raise GridError(
                f"values must have shape (n_steps+1, {self.grid.n_cells}), got {v.shape}"
            )
        if v.shape[0] < 2:
            raise GridError("need at least two time nodes")
        if not self.t_final > 0:
            raise GridError("t_final must be positive")
        if self.location not in ("cell", "face"):
            raise GridError(f"unknown location {self.location!r}")
        object.__setattr__(self, "values", v)

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def dt(self) -> float:
        return self.t_final / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_final, self.n_steps + 1)

    def __getitem__(self, k):
        return self.values[k]

    def reversed(self) -> "SpaceTimeField":
        return SpaceTimeField(self.grid, self.t_final, self.values[::-1].copy(),
                              self.location, self.name)

    def with_values(self, values, name=None) -> "SpaceTimeField":
        return SpaceTimeField(self.grid, self.t_final, values, self.location,
                              name or self.name)


def _require_periodic(grid: Grid):
    if grid.boundary != PERIODIC:
        raise GridError("operation is defined on periodic grids only")


def grad(c, grid: Grid) -> np.ndarray:
    """Cell -> face forward difference; works on the last axis."""
    _require_periodic(grid)
    c = np.asarray(c, dtype=float)
    return (np.roll(c, -1, axis=-1) - c) / grid.dx


def div(f, grid: Grid) -> np.ndarray:
    """Face -> cell backward difference; works on the last axis."""
    _require_periodic(grid)
    f = np.asarray(f, dtype=float)
    return (f - np.roll(f, 1, axis=-1)) / grid.dx


def laplacian(c, grid: Grid) -> np.ndarray:
    """Standard 3-point Laplacian, identical to ``div(grad(c))``."""
    _require_periodic(grid)
    c = np.asarray(c, dtype=float)
    return (np.roll(c, -1, axis=-1) - 2.0 * c + np.roll(c, 1, axis=-1)) / grid.dx**2


def to_faces(c) -> np.ndarray:
    """Arithmetic mean of the two cells adjacent to each face."""
    c = np.asarray(c, dtype=float)
    return 0.5 * (c + np.roll(c, -1, axis=-1))


def to_cells(f) -> np.ndarray:
    """Arithmetic mean of the two faces bounding each cell."""
    f = np.asarray(f, dtype=float)
    return 0.5 * (f + np.roll(f, 1, axis=-1))


def space_integral(values, grid: Grid) -> np.ndarray:
    """Midpoint rule over the last axis."""
    return np.sum(np.asarray(values, dtype=float), axis=-1) * grid.dx


def trapezoid_weights(n_steps: int, dt: float) -> np.ndarray:
    w = np.full(n_steps + 1, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


def time_integral(values, dt: float) -> float:
    """Trapezoid rule over the first axis."""
    values = np.asarray(values, dtype=float)
    return float(np.dot(trapezoid_weights(values.shape[0] - 1, dt), values))


def mass(rho, grid: Grid, *, strict: bool = False) -> float:
    """Total mass ``sum(rho) * dx``.

    Negative entries are an error with ``strict=True``; otherwise they are
    only reported through the returned value.
    """
    rho = np.asarray(rho, dtype=float)
    if strict and np.any(rho < 0):
        raise ValueError("density has negative entries")
    return float(np.sum(rho) * grid.dx)


def midpoint_average(j: SpaceTimeField) -> np.ndarray:
    return 0.5 * (j.values[1:] + j.values[:-1])


def continuity_residual(rho: SpaceTimeField, j: SpaceTimeField, *,
                        stagger: str = "midpoint") -> float:
    """Sup-norm defect of ``(rho_{k+1} - rho_k)/dt + div(j_{k+1/2})``.

    ``stagger="midpoint"`` averages the two node currents (trapezoid
    schemes); ``stagger="left"`` uses ``j_k`` as the flux of step ``k``
    (forward Euler).
    """
    if rho.grid != j.grid:
        raise GridError("rho and j live on different grids")
    if rho.values.shape != j.values.shape or not np.isclose(rho.t_final, j.t_final):
        raise GridError("rho and j have different time discretizations")
    if stagger == "midpoint":
        flux = midpoint_average(j)
    elif stagger == "left":
        flux = j.values[:-1]
    else:
        raise ValueError(f"unknown stagger {stagger!r}")
    defect = (rho.values[1:] - rho.values[:-1]) / rho.dt + div(flux, rho.grid)
    return float(np.max(np.abs(defect)))


def write_csv(path, *fields_: SpaceTimeField, variables=None):
    """Write fields with header ``t,x,value`` (plus ``variable`` if several)."""
    path = Path(path)
    multi = len(fields_) > 1 or variables is not None
    names = variables or [f.name for f in fields_]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variable", "t", "x", "value"] if multi else ["t", "x", "value"])
        for name, f in zip(names, fields_):
            xs = f.grid.faces if f.location == "face" else f.grid.centers
            for t, row in zip(f.times, f.values):
                for x, v in zip(xs, row):
                    cells = [repr(float(t)), repr(float(x)), repr(float(v))]
                    w.writerow([name, *cells] if multi else cells)


def read_csv(path, grid: Grid, t_final: float, location: str = "cell",
             variable=None) -> SpaceTimeField:
    """Inverse of :func:`write_csv` for one variable."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if variable is not None:
        rows = [r for r in rows if r.get("variable") == variable]
    vals = np.array([float(r["value"]) for r in rows])
    if vals.size % grid.n_cells:
        raise GridError("CSV row count is not a multiple of n_cells")
    return SpaceTimeField(grid, t_final, vals.reshape(-1, grid.n_cells), location,
                          variable or "value")
