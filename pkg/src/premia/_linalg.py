from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from premia.errors import SingularMatrixError

OMEGA_MAX_COND = 1e12


def checked_cholesky(S: np.ndarray, what: str, max_cond: float = OMEGA_MAX_COND,
                     ref_scale: float = 0.0) -> np.ndarray:
    """Lower Cholesky factor of a symmetric matrix, refusing ill-conditioned input.

    ``ref_scale`` (e.g. the average return variance) lets a matrix that is
    round-off relative to the data be rejected even when well conditioned.
    """
    eig = np.linalg.eigvalsh(S)
    if eig[-1] <= ref_scale / max_cond or eig[0] <= eig[-1] / max_cond:
        cond = np.inf if eig[0] <= 0 else eig[-1] / eig[0]
        raise SingularMatrixError(what, cond)
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise SingularMatrixError(what) from None


def whiten(L: np.ndarray, X: np.ndarray) -> np.ndarray:
    """``L^{-1} X`` for lower-triangular ``L``."""
    return solve_triangular(L, X, lower=True, check_finite=False)


def sym_sqrt(S: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix (negative rounding noise clipped)."""
    w, V = np.linalg.eigh(S)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def sym_inv_sqrt(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(S)
    return (V / np.sqrt(w)) @ V.T
