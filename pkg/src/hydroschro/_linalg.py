"""Cyclic tridiagonal solves used by the implicit steppers."""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded


def solve_cyclic(lower, diag, upper, rhs):
    """Solve ``lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]``.

    Indices wrap around.  Sherman-Morrison on top of a banded solve.
    """
    lower = np.asarray(lower, dtype=float)
    diag = np.asarray(diag, dtype=float).copy()
    upper = np.asarray(upper, dtype=float)
    n = diag.size
    alpha = upper[-1]   # A[n-1, 0]
    beta = lower[0]     # A[0, n-1]
    gamma = -diag[0] if diag[0] != 0 else -1.0
    diag[0] -= gamma
    diag[-1] -= alpha * beta / gamma
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    u = np.zeros(n)
    u[0] = gamma
    u[-1] = alpha
    sol = solve_banded((1, 1), ab, np.column_stack([rhs, u]), check_finite=False)
    y, z = sol[:, 0], sol[:, 1]
    factor = (y[0] + beta * y[-1] / gamma) / (1.0 + z[0] + beta * z[-1] / gamma)
    return y - factor * z


def cyclic_transpose(lower, diag, upper):
    """Diagonals of the transposed cyclic tridiagonal matrix."""
    return np.roll(upper, 1), diag, np.roll(lower, -1)


def cyclic_matvec(lower, diag, upper, x):
    return lower * np.roll(x, 1) + diag * x + upper * np.roll(x, -1)
