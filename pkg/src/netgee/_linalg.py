"""Guarded dense solves shared by the mean model and the GEE solver."""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

#: Reciprocal condition numbers below this are treated as singular.
MIN_RCOND = 1e-12


class SingularSystemError(np.linalg.LinAlgError):
    """A linear system is numerically singular (condition estimate > 1e12)."""


def lu_solve_guarded(mat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``mat @ x = rhs`` by LU, refusing ill-conditioned systems."""
    mat = np.asarray(mat, dtype=float)
    if mat.shape == (0, 0):
        return np.zeros_like(rhs, dtype=float)
    if not np.all(np.isfinite(mat)):
        raise SingularSystemError("system matrix has non-finite entries")
    anorm = np.abs(mat).sum(axis=0).max()
    with warnings.catch_warnings():
        # exact singularity is caught by the condition check below
        warnings.simplefilter("ignore", linalg.LinAlgWarning)
        lu, piv = linalg.lu_factor(mat, check_finite=False)
    rcond, info = lapack.dgecon(lu, anorm, norm="1")
    if info != 0 or not rcond > MIN_RCOND:
        raise SingularSystemError(f"reciprocal condition estimate {rcond:.3g} below {MIN_RCOND:g}")
    return linalg.lu_solve((lu, piv), rhs, check_finite=False)


def spd_solve_guarded(mat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Cholesky solve for a symmetric positive definite matrix with a condition guard."""
    mat = np.asarray(mat, dtype=float)
    mat = 0.5 * (mat + mat.T)
    if not np.all(np.isfinite(mat)):
        raise SingularSystemError("system matrix has non-finite entries")
    anorm = np.abs(mat).sum(axis=0).max()
    try:
        c, lower = linalg.cho_factor(mat, lower=False, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError("matrix is not positive definite") from exc
    rcond, info = lapack.dpocon(c, anorm)
    if info != 0 or not rcond > MIN_RCOND:
        raise SingularSystemError(f"reciprocal condition estimate {rcond:.3g} below {MIN_RCOND:g}")
    return linalg.cho_solve((c, lower), rhs, check_finite=False)


def spd_inverse_guarded(mat: np.ndarray) -> np.ndarray:
    inv = spd_solve_guarded(mat, np.eye(mat.shape[0]))
    return 0.5 * (inv + inv.T)


def exact_sum(stack: np.ndarray) -> np.ndarray:
    """Sum along axis 0 with correctly rounded (order-independent) arithmetic."""
    stack = np.asarray(stack, dtype=float)
    flat = stack.reshape(stack.shape[0], -1)
    out = np.array([math.fsum(flat[:, j]) for j in range(flat.shape[1])])
    return out.reshape(stack.shape[1:])


def symmetrize(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.T)
