"""Continuous updating estimator, J-statistic and IS-statistic.

With i.i.d. data the sample CUE objective

    Q(l) = (R_bar - B l)' Omega^{-1} (R_bar - B l) / (1 + l' Q_FF^{-1} l)

is the Rayleigh quotient ``v' M v / v' D v`` of the pencil

    M = (R_bar : B)' Omega^{-1} (R_bar : B),   D = diag(1, Q_FF^{-1}),

evaluated at ``v = (1, -l')'``. Its minimum (times T) is the J-statistic and
the minimising eigenvector gives the CUE. Dropping the first row/column of the
pencil gives the rank statistic on B alone (IS), and by Cauchy interlacing
J <= IS always holds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from premia._linalg import checked_cholesky, whiten
from premia.chi2 import chi2_sf
from premia.cross_section import PopulationModel, PremiaResult
from premia.errors import CueUnboundedError, InputError, SingularMatrixError
from premia.first_pass import FirstPassEstimates, difference_estimates
from premia.panel_io import ZeroBetaMode

__all__ = [
    "EigenSolution", "DiagnosticPair", "solve_pencil", "statistics_view",
    "j_statistic", "is_statistic", "diagnostics", "cue_estimate",
    "cue_pseudo_true", "cue_objective", "premia_from_eigvec",
]

V1_TOL = 1e-8


@dataclass(frozen=True)
class EigenSolution:
    smallest_root: float
    eigvec: np.ndarray
    all_roots: np.ndarray


@dataclass(frozen=True)
class DiagnosticPair:
    j_stat: float
    is_stat: float
    df_j: int
    df_is: int
    p_j: float
    p_is: float

    @property
    def gap(self) -> float:
        """IS - J. Descriptive only: no test of equality exists."""
        return self.is_stat - self.j_stat

    def to_dict(self) -> dict:
        return {"J": self.j_stat, "df_J": self.df_j, "p_J": self.p_j,
                "IS": self.is_stat, "df_IS": self.df_is, "p_IS": self.p_is,
                "IS_minus_J": self.gap}


def solve_pencil(M, D) -> EigenSolution:
    """Roots of ``|tau D - M| = 0`` for symmetric ``M`` and SPD ``D``.

    Reduces to a standard symmetric problem through ``D = L L'``:
    ``L^{-1} M L^{-T} y = tau y`` and ``v = L^{-T} y``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    D = np.atleast_2d(np.asarray(D, dtype=float))
    scale = max(1.0, float(np.abs(M).max()))
    if np.abs(M - M.T).max() > 1e-10 * scale:
        raise InputError("pencil matrix M is not symmetric")
    try:
        L = np.linalg.cholesky(0.5 * (D + D.T))
    except np.linalg.LinAlgError:
        raise SingularMatrixError("pencil matrix D (not positive definite)") from None
    Li_M = whiten(L, 0.5 * (M + M.T))
    C = whiten(L, Li_M.T)
    roots, Y = np.linalg.eigh(0.5 * (C + C.T))
    v = solve_triangular(L.T, Y[:, 0], lower=False)
    v = v / np.linalg.norm(v)
    i = int(np.argmax(np.abs(v)))
    if v[0] < 0 or (v[0] == 0 and v[i] < 0):
        v = -v
    return EigenSolution(float(roots[0]), v, roots)


def statistics_view(fp: FirstPassEstimates, mode: ZeroBetaMode | str | None = None) -> FirstPassEstimates:
    """The estimates on which J / IS / CUE / DRLM are computed.

    With an estimated zero-beta return the last asset is subtracted from the
    others, which removes ``lambda_0`` from the pricing equation. The result
    does not depend on which asset is used as reference.
    """
    mode = fp.zero_beta_mode if mode is None else ZeroBetaMode.parse(mode)
    if mode is ZeroBetaMode.INTERCEPT_ESTIMATED:
        return difference_estimates(fp)
    return fp


def _omega_chol(fp: FirstPassEstimates) -> np.ndarray:
    ref = float(np.trace(fp.sample_covariance())) / fp.N
    return checked_cholesky(fp.omega_hat, "residual covariance Omega_hat", ref_scale=ref)


def _pencils(fp: FirstPassEstimates):
    L = _omega_chol(fp)
    X = whiten(L, np.column_stack([fp.mu_hat, fp.beta_hat]))
    M = X.T @ X
    qinv = np.linalg.inv(fp.qff_hat)
    qinv = 0.5 * (qinv + qinv.T)
    D = np.zeros_like(M)
    D[0, 0] = 1.0
    D[1:, 1:] = qinv
    return M, D


def j_statistic(fp: FirstPassEstimates, mode=None) -> tuple[float, EigenSolution]:
    fs = statistics_view(fp, mode)
    M, D = _pencils(fs)
    sol = solve_pencil(M, D)
    return fs.T * max(sol.smallest_root, 0.0), sol


def is_statistic(fp: FirstPassEstimates, mode=None) -> float:
    fs = statistics_view(fp, mode)
    M, D = _pencils(fs)
    sol = solve_pencil(M[1:, 1:], D[1:, 1:])
    return fs.T * max(sol.smallest_root, 0.0)


def diagnostics(fp: FirstPassEstimates, mode=None) -> DiagnosticPair:
    """J and IS with their chi-square p-values, sharing one Cholesky of Omega_hat."""
    fs = statistics_view(fp, mode)
    M, D = _pencils(fs)
    j = fs.T * max(solve_pencil(M, D).smallest_root, 0.0)
    is_ = fs.T * max(solve_pencil(M[1:, 1:], D[1:, 1:]).smallest_root, 0.0)
    df_j = fs.N - fs.K
    df_is = fs.N - fs.K + 1
    if df_j < 1:
        raise InputError(f"J-statistic needs more assets than factors (N={fs.N}, K={fs.K})")
    return DiagnosticPair(j, is_, df_j, df_is, chi2_sf(j, df_j), chi2_sf(is_, df_is))


def premia_from_eigvec(v: np.ndarray) -> np.ndarray:
    """Read ``lambda`` off an eigenvector proportional to ``(1, -lambda')'``."""
    if abs(v[0]) <= V1_TOL * np.linalg.norm(v):
        raise CueUnboundedError(v)
    return -v[1:] / v[0]


def cue_estimate(fp: FirstPassEstimates, mode=None) -> PremiaResult:
    """CUE of the risk premia from the smallest-root eigenvector of the J pencil.

    No standard errors are attached; inference goes through DRLM.
    """
    mode = fp.zero_beta_mode if mode is None else ZeroBetaMode.parse(mode)
    _, sol = j_statistic(fp, mode)
    lam = premia_from_eigvec(sol.eigvec)
    lambda_0 = None
    if mode is ZeroBetaMode.INTERCEPT_ESTIMATED:
        # zero-beta rate concentrated out by GLS given lambda
        L = _omega_chol(fp)
        iw = whiten(L, np.ones(fp.N))
        ew = whiten(L, fp.mu_hat - fp.beta_hat @ lam)
        lambda_0 = float(iw @ ew / (iw @ iw))
    return PremiaResult(method="CUE", lambda_f=lam, lambda_0=lambda_0, se_kind="none",
                        factor_names=fp.factor_names, zero_beta_mode=mode)


def cue_objective(fp: FirstPassEstimates, l, mode=None) -> np.ndarray:
    """Sample CUE objective at one or many hypothesised premia (rows of ``l``)."""
    fs = statistics_view(fp, mode)
    L = _omega_chol(fs)
    l = np.atleast_2d(np.asarray(l, dtype=float))
    if l.shape[1] != fs.K:
        l = l.T
    E = whiten(L, fs.mu_hat[:, None] - fs.beta_hat @ l.T)
    quad = np.sum(E * E, axis=0)
    s = np.sum(l * np.linalg.solve(fs.qff_hat, l.T).T, axis=1)
    return quad / (1.0 + s)


def cue_pseudo_true(pm: PopulationModel) -> tuple[np.ndarray, float]:
    """Population CUE premia and the population J (smallest root, not scaled by T)."""
    L = checked_cholesky(pm.omega, "population Omega")
    X = whiten(L, np.column_stack([pm.mu_r, pm.beta]))
    D = np.zeros((pm.K + 1, pm.K + 1))
    D[0, 0] = 1.0
    D[1:, 1:] = np.linalg.inv(pm.qff)
    sol = solve_pencil(X.T @ X, 0.5 * (D + D.T))
    return premia_from_eigvec(sol.eigvec), max(sol.smallest_root, 0.0)
