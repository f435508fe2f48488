"""Dense linear algebra utilities with positive-definite safeguards."""

import logging
from typing import Tuple

import numpy as np
import scipy.linalg as la

import config
from errors import FactorizationFailure, SingularDiagonal

logger = logging.getLogger(__name__)


def cholesky_psd(A: np.ndarray, jitter_ladder=config.JITTER_LADDER) -> Tuple[np.ndarray, float]:
    """
    Lower Cholesky factor of a symmetric PSD matrix, adding diagonal jitter if needed.

    The ladder multipliers are scaled by mean(diag A) and tried in order; the
    first one that factorizes wins.

    Args:
        A: A [N x N] symmetric matrix.
        jitter_ladder: Multipliers of mean(diag A) to try, smallest first.

    Returns:
        (L, eps) with L @ L.T == A + eps * I.

    Raises:
        ValueError: If A is not square or not symmetric.
        FactorizationFailure: If every rung of the ladder fails.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"cholesky_psd needs a square matrix, got shape {A.shape}")
    scale = np.max(np.abs(A)) if A.size else 0.0
    if not np.allclose(A, A.T, rtol=0.0, atol=config.SYMMETRY_RTOL * max(scale, 1e-300)):
        raise ValueError("cholesky_psd needs a symmetric matrix")

    n = A.shape[0]
    mean_diag = float(np.mean(np.diag(A))) if n else 0.0
    if not np.isfinite(mean_diag) or mean_diag <= 0.0:
        mean_diag = 1.0

    eps = 0.0
    for multiplier in jitter_ladder:
        eps = multiplier * mean_diag
        try:
            L = la.cholesky(A + eps * np.eye(n), lower=True, check_finite=False)
        except la.LinAlgError:
            continue
        if not np.all(np.isfinite(L)):
            continue
        if eps > 0.0:
            logger.warning("Added jitter %.3e to a %dx%d matrix to factorize it.", eps, n, n)
        return L, eps

    raise FactorizationFailure(
        f"Matrix of size {n} is not positive definite even with jitter {eps:.3e}; "
        "the kernel hyperparameters are probably ill-conditioned.",
        max_jitter=eps,
    )


def solve_triangular(L: np.ndarray, B: np.ndarray, lower: bool = True, trans: bool = False) -> np.ndarray:
    """Solves L X = B (or L.T X = B when trans) for a triangular L."""
    L = np.asarray(L, dtype=np.float64)
    diag = np.abs(np.diag(L))
    if diag.size and np.min(diag) < config.SINGULAR_DIAGONAL:
        raise SingularDiagonal(
            f"Triangular factor has a zero diagonal entry at index {int(np.argmin(diag))}."
        )
    return la.solve_triangular(L, B, lower=lower, trans="T" if trans else "N", check_finite=False)


def kron(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2:
        raise ValueError("kron needs two matrices")
    return np.kron(A, B)


def logdet_from_chol(L: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(L))))
