"""Dense linear algebra kernels used throughout the package.

All matrices are float64 ndarrays in row-major (C) order. Problem sizes are
small (filter matrices have at most a few hundred entries), so everything is
dense and deterministic; there is no sparse or iterative path.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import InputError, ShapeError, SingularityError

# Absolute asymmetry tolerated in a Gram matrix before it is rejected.
SYMMETRY_TOL = 1e-10


def as_matrix(values, *, name: str = "matrix") -> np.ndarray:
    """Validate and return a 2-D float64 array with finite entries."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name}: expected a 2-D array, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name}: entries must be finite (no NaN/Inf)")
    return arr


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check."""
    a = as_matrix(a, name="a")
    b = as_matrix(b, name="b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ ({a.shape} x {b.shape})")
    return a @ b


def ridge_solve(gram, rhs, lam: float) -> np.ndarray:
    """Solve (gram + lam*I) X = rhs for a symmetric PSD ``gram``.

    Uses a Cholesky factorization of gram + lam*I; with lam > 0 this is
    positive definite whenever gram is PSD. There is no pivoted fallback:
    every Gram matrix in this package is F F^T or A A^T, hence PSD, and a
    failed factorization means the system is genuinely singular at lam=0.
    """
    gram = as_matrix(gram, name="gram")
    rhs = as_matrix(rhs, name="rhs")
    n = gram.shape[0]
    if gram.shape[1] != n:
        raise ShapeError(f"ridge_solve: gram must be square, got {gram.shape}")
    if rhs.shape[0] != n:
        raise ShapeError(
            f"ridge_solve: rhs has {rhs.shape[0]} rows, expected {n}"
        )
    if lam < 0:
        raise InputError(f"ridge_solve: lambda must be nonnegative, got {lam}")
    if np.max(np.abs(gram - gram.T), initial=0.0) > SYMMETRY_TOL:
        raise InputError("ridge_solve: gram is not symmetric within 1e-10")

    system = gram + lam * np.eye(n)
    try:
        factor = scipy.linalg.cho_factor(system, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise SingularityError(
            f"ridge_solve: factorization failed (lambda={lam}); "
            "the Gram matrix is singular or indefinite"
        ) from exc
    return scipy.linalg.cho_solve(factor, rhs, check_finite=False)
