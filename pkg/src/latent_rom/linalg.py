"""Dense float64 matrix helpers: products, jittered Cholesky and SPD solves.

Matrices are plain 2-D ``numpy.ndarray`` objects in C (row-major) order.
Heavy lifting goes to LAPACK through numpy/scipy; this module adds the
shape checks, finiteness guarantees and jitter escalation the rest of the
package relies on.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NotPositiveDefiniteError, NumericError, ShapeError

MAX_JITTER = 1e-4
SYMMETRY_TOL = 1e-10


def as_matrix(a):
    """Coerce ``a`` to a C-contiguous 2-D float64 array (vectors become columns)."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    return m


def _check_finite(m, what):
    if not np.all(np.isfinite(m)):
        raise NumericError(f"{what} produced non-finite entries")
    return m


def matmul(a, b):
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return _check_finite(a @ b, "matmul")


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor ``L`` with ``L @ L.T == A + jitter * I``."""

    lower: np.ndarray
    jitter: float = 0.0

    @property
    def dim(self):
        return self.lower.shape[0]

    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))


def cholesky(a, jitter=0.0):
    """Factor a symmetric positive-definite matrix.

    If the factorization fails, the diagonal shift is escalated tenfold at a
    time (starting from ``jitter``) until it succeeds or would exceed
    ``MAX_JITTER``.  A zero starting jitter therefore means "no escalation".
    """
    a = as_matrix(a)
    n, m = a.shape
    if n != m:
        raise ShapeError(f"cholesky needs a square matrix, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefiniteError("matrix has non-finite entries")
    if n and np.max(np.abs(a - a.T)) > SYMMETRY_TOL * max(1.0, np.max(np.abs(a))):
        raise ShapeError("cholesky needs a symmetric matrix")
    if jitter < 0:
        raise ValueError("jitter must be non-negative")

    eye = np.eye(n)
    current = float(jitter)
    while True:
        try:
            lower = np.linalg.cholesky(a + current * eye)
        except np.linalg.LinAlgError:
            lower = None
        # LAPACK accepts exactly-zero pivots in some builds; insist on > 0.
        if lower is not None and np.all(np.diag(lower) > 0) and np.all(np.isfinite(lower)):
            return CholeskyFactor(np.ascontiguousarray(np.tril(lower)), current)
        next_jitter = current * 10.0
        if current == 0.0 or next_jitter > MAX_JITTER * (1 + 1e-12):
            raise NotPositiveDefiniteError(
                f"matrix of size {n} is not positive definite (last jitter {current:g})"
            )
        current = next_jitter


def solve_lower(f, b):
    """Solve ``L x = b`` for the factor's lower triangle."""
    return solve_triangular(f.lower, b, lower=True, check_finite=False)


def solve_posdef(f, b):
    """Solve ``(L L^T) x = b`` by forward then backward substitution."""
    b_mat = as_matrix(b)
    if b_mat.shape[0] != f.dim:
        raise ShapeError(f"factor has dim {f.dim} but right-hand side has {b_mat.shape[0]} rows")
    y = solve_triangular(f.lower, b_mat, lower=True, check_finite=False)
    x = solve_triangular(f.lower.T, y, lower=False, check_finite=False)
    return _check_finite(x, "solve_posdef")
