"""Small dense real linear algebra used by the trainer.

Matrices and vectors are plain float64 numpy arrays.  The helpers here add
shape/finiteness validation and a Cholesky-first SPD solver with an LU
fallback for the round-off cases where ``J^T J + lambda I`` loses
definiteness numerically.
"""
from __future__ import annotations

import warnings

import numpy as np
from scipy import linalg as sla


class ShapeError(ValueError):
    """Operand dimensions do not conform."""


class SingularMatrixError(np.linalg.LinAlgError):
    """Matrix is singular or not positive definite to working precision."""


def as_matrix(a, *, copy: bool = False) -> np.ndarray:
    m = np.array(a, dtype=np.float64, copy=copy) if copy else np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def as_vector(v, *, copy: bool = False) -> np.ndarray:
    x = np.array(v, dtype=np.float64, copy=copy) if copy else np.asarray(v, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected a 1-D vector, got ndim={x.ndim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("vector has non-finite entries")
    return x


def _square(a: np.ndarray) -> None:
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected a square matrix, got {a.shape}")


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def trace(a) -> float:
    a = as_matrix(a)
    _square(a)
    return float(np.trace(a))


def _factor(a: np.ndarray):
    """Return ("chol", c) or ("lu", lu_piv); raise SingularMatrixError."""
    try:
        return "chol", sla.cho_factor(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    # LU fallback; still reject exact or numerical singularity
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(a, check_finite=False)
    diag = np.abs(np.diag(lu))
    if diag.min() <= np.finfo(float).eps * max(diag.max(), 1.0) * a.shape[0]:
        raise SingularMatrixError("matrix is singular to working precision")
    return "lu", (lu, piv)


def solve_spd(a, b) -> np.ndarray:
    """Solve ``a x = b`` for symmetric positive definite ``a``."""
    a = as_matrix(a)
    _square(a)
    b = as_vector(b)
    if b.shape[0] != a.shape[0]:
        raise ShapeError(f"rhs length {b.shape[0]} does not match {a.shape}")
    kind, fac = _factor(a)
    if kind == "chol":
        return sla.cho_solve(fac, b, check_finite=False)
    return sla.lu_solve(fac, b, check_finite=False)


def inverse_spd(a) -> np.ndarray:
    a = as_matrix(a)
    _square(a)
    d = np.diag(a)
    if np.count_nonzero(a - np.diag(d)) == 0:
        # exact for diagonal input
        if np.any(d <= 0):
            raise SingularMatrixError("diagonal matrix is not positive definite")
        return np.diag(1.0 / d)
    kind, fac = _factor(a)
    eye = np.eye(a.shape[0])
    if kind == "chol":
        inv = sla.cho_solve(fac, eye, check_finite=False)
        return 0.5 * (inv + inv.T)
    return sla.lu_solve(fac, eye, check_finite=False)


def logdet_spd(a) -> float:
    """log det(a) via Cholesky; SingularMatrixError if not SPD."""
    a = as_matrix(a)
    _square(a)
    try:
        c, _ = sla.cho_factor(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("matrix is not positive definite") from exc
    return float(2.0 * np.sum(np.log(np.diag(c))))
