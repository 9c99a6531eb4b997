"""Fama-MacBeth two-pass premia, their t-statistics, and population pseudo-true values."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from premia.chi2 import normal_critical
from premia.errors import InputError, RankDeficientError, SingularMatrixError
from premia.first_pass import FirstPassEstimates, beta_tstats
from premia.panel_io import ZeroBetaMode

__all__ = ["PremiaResult", "PopulationModel", "fm_two_pass", "fm_tstats", "fm_covariance",
           "fm_pseudo_true", "repackage", "regressors"]

RANK_TOL = 1e-10


@dataclass(frozen=True)
class PremiaResult:
    """Point estimates of the risk premia with optional inference.

    ``std_errors``, ``t_stats`` and ``ci`` are aligned with
    :attr:`coefficients`, which puts ``lambda_0`` first when it was estimated.
    """

    method: Literal["FM", "CUE"]
    lambda_f: np.ndarray
    lambda_0: float | None = None
    std_errors: np.ndarray | None = None
    t_stats: np.ndarray | None = None
    ci: tuple[np.ndarray, np.ndarray] | None = None
    r_squared: float | None = None
    se_kind: Literal["plain", "shanken", "none"] = "none"
    factor_names: tuple[str, ...] = field(default=())
    zero_beta_mode: ZeroBetaMode = ZeroBetaMode.IMPOSED_ZERO

    @property
    def coefficients(self) -> np.ndarray:
        if self.lambda_0 is None:
            return np.asarray(self.lambda_f)
        return np.concatenate([[self.lambda_0], self.lambda_f])

    @property
    def names(self) -> tuple[str, ...]:
        names = self.factor_names or tuple(f"F{i + 1}" for i in range(len(self.lambda_f)))
        return ("lambda_0", *names) if self.lambda_0 is not None else tuple(names)

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "zero_beta_mode": self.zero_beta_mode.value,
            "names": list(self.names),
            "estimate": self.coefficients.tolist(),
            "lambda_f": np.asarray(self.lambda_f).tolist(),
            "lambda_0": self.lambda_0,
            "se_kind": self.se_kind,
            "r_squared": self.r_squared,
        }
        if self.std_errors is not None:
            out["std_errors"] = self.std_errors.tolist()
            out["t_stats"] = self.t_stats.tolist()
            out["ci_lower"] = self.ci[0].tolist()
            out["ci_upper"] = self.ci[1].tolist()
        return out


@dataclass(frozen=True)
class PopulationModel:
    """Population moments of a (possibly misspecified) beta representation.

    ``mu_r`` is always rebuilt as ``beta @ lambda_f + e_tilde``.
    """

    beta: np.ndarray
    omega: np.ndarray
    qff: np.ndarray
    lambda_f: np.ndarray
    e_tilde: np.ndarray
    mu_r: np.ndarray = field(init=False)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        if beta.ndim == 1:
            beta = beta[:, None]
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float))
        object.__setattr__(self, "qff", np.atleast_2d(np.asarray(self.qff, dtype=float)))
        object.__setattr__(self, "lambda_f", np.atleast_1d(np.asarray(self.lambda_f, dtype=float)))
        object.__setattr__(self, "e_tilde", np.asarray(self.e_tilde, dtype=float))
        object.__setattr__(self, "mu_r", self.beta @ self.lambda_f + self.e_tilde)

    @property
    def N(self) -> int:
        return self.beta.shape[0]

    @property
    def K(self) -> int:
        return self.beta.shape[1]

    @property
    def beta_size(self) -> float:
        """O(beta): Frobenius norm of beta."""
        return float(np.linalg.norm(self.beta))

    @property
    def e_size(self) -> float:
        """O(e): Euclidean norm of the pricing error."""
        return float(np.linalg.norm(self.e_tilde))

    @property
    def b(self) -> np.ndarray:
        return self.beta / self.beta_size

    @property
    def a(self) -> np.ndarray:
        return self.e_tilde / self.e_size

    @classmethod
    def from_directions(cls, b, a, beta_scale: float, e_scale: float, lambda_f, omega, qff):
        """``beta = beta_scale * b`` and ``e_tilde = e_scale * a`` (directions used as given)."""
        b = np.asarray(b, dtype=float)
        if b.ndim == 1:
            b = b[:, None]
        return cls(beta=beta_scale * b, omega=omega, qff=qff, lambda_f=lambda_f,
                   e_tilde=e_scale * np.asarray(a, dtype=float))


def regressors(beta: np.ndarray, mode: ZeroBetaMode) -> np.ndarray:
    if mode is ZeroBetaMode.INTERCEPT_ESTIMATED:
        return np.column_stack([np.ones(beta.shape[0]), beta])
    return beta


def _check_rank(X: np.ndarray) -> None:
    s = np.linalg.svd(X, compute_uv=False)
    if s[-1] < RANK_TOL * s[0] or s[0] == 0:
        norms = np.linalg.norm(X, axis=0)
        norms[norms == 0] = 1.0
        U = X / norms
        C = np.abs(U.T @ U)
        np.fill_diagonal(C, -1.0)
        i, j = np.unravel_index(np.argmax(C), C.shape)
        pair = (int(min(i, j)), int(max(i, j)))
        raise RankDeficientError(
            f"rank-deficient cross-section regressors (columns {pair[0]} and {pair[1]} "
            f"nearly collinear, smallest/largest singular value {s[-1] / max(s[0], 1e-300):.2e})",
            columns=pair)


def fm_two_pass(fp: FirstPassEstimates, mode: ZeroBetaMode | str | None = None) -> PremiaResult:
    """Cross-sectional OLS of average returns on estimated betas."""
    mode = fp.zero_beta_mode if mode is None else ZeroBetaMode.parse(mode)
    X = regressors(fp.beta_hat, mode)
    _check_rank(X)
    coef, *_ = np.linalg.lstsq(X, fp.mu_hat, rcond=None)
    resid = fp.mu_hat - X @ coef
    sst = float(np.sum((fp.mu_hat - fp.mu_hat.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / sst if sst > 0 else 1.0
    has_intercept = mode is ZeroBetaMode.INTERCEPT_ESTIMATED
    return PremiaResult(
        method="FM",
        lambda_f=coef[1:] if has_intercept else coef,
        lambda_0=float(coef[0]) if has_intercept else None,
        r_squared=min(max(r2, 0.0), 1.0),
        factor_names=fp.factor_names,
        zero_beta_mode=mode,
    )


def fm_covariance(fp: FirstPassEstimates, result: PremiaResult,
                  correction: Literal["plain", "shanken"] = "plain") -> np.ndarray:
    """Covariance matrix of :attr:`PremiaResult.coefficients`.

    ``plain`` is the textbook Fama-MacBeth variance
    ``(1/T) A (Omega + beta Q beta') A'`` with ``A = (X'X)^{-1} X'``.
    ``shanken`` inflates the ``A Omega A'`` part by ``1 + lambda' Q^{-1} lambda``
    (errors-in-variables correction); the intercept keeps its plain variance.
    """
    if correction not in ("plain", "shanken"):
        raise InputError(f"unknown standard-error correction {correction!r}")
    X = regressors(fp.beta_hat, result.zero_beta_mode)
    _check_rank(X)
    A = np.linalg.solve(X.T @ X, X.T)
    T = fp.T
    k0 = X.shape[1] - fp.K
    a_omega_a = A @ fp.omega_hat @ A.T
    v_plain = (a_omega_a + A @ fp.beta_hat @ fp.qff_hat @ fp.beta_hat.T @ A.T) / T
    if correction == "plain":
        return v_plain
    lam = np.asarray(result.lambda_f)
    c = float(lam @ np.linalg.solve(fp.qff_hat, lam))
    q_embed = np.zeros((X.shape[1], X.shape[1]))
    q_embed[k0:, k0:] = fp.qff_hat
    var = ((1.0 + c) * a_omega_a + q_embed) / T
    if k0:
        var[0, :] = v_plain[0, :]
        var[:, 0] = v_plain[:, 0]
    return var


def fm_tstats(fp: FirstPassEstimates, result: PremiaResult,
              correction: Literal["plain", "shanken"] = "plain",
              alpha: float = 0.05) -> PremiaResult:
    """Attach standard errors, t-statistics and normal confidence intervals."""
    var = fm_covariance(fp, result, correction)
    se = np.sqrt(np.clip(np.diag(var), 0.0, None))
    coef = result.coefficients
    with np.errstate(divide="ignore", invalid="ignore"):
        t = coef / se
    z = normal_critical(alpha)
    return replace(result, std_errors=se, t_stats=t, ci=(coef - z * se, coef + z * se),
                   se_kind=correction)


def fm_pseudo_true(pm: PopulationModel) -> np.ndarray:
    """Minimiser of the unweighted population pricing-error norm."""
    _check_rank(pm.beta)
    return np.linalg.solve(pm.beta.T @ pm.beta, pm.beta.T @ pm.mu_r)


def _check_repackaging(A: np.ndarray, N: int) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.shape != (N, N):
        raise InputError(f"repackaging matrix must be {N}x{N}")
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond >= 1e10:
        raise SingularMatrixError("repackaging matrix A", cond)
    if not np.allclose(A @ np.ones(N), 1.0, atol=1e-8):
        raise InputError("repackaging matrix rows must sum to one (A iota = iota)")
    return A


def repackage(model: PopulationModel | FirstPassEstimates, A) -> PopulationModel | FirstPassEstimates:
    """Form portfolios ``A R_t`` of the test assets."""
    if isinstance(model, PopulationModel):
        A = _check_repackaging(A, model.N)
        omega = A @ model.omega @ A.T
        return PopulationModel(beta=A @ model.beta, omega=0.5 * (omega + omega.T), qff=model.qff,
                               lambda_f=model.lambda_f, e_tilde=A @ model.e_tilde)
    A = _check_repackaging(A, model.N)
    beta = A @ model.beta_hat
    omega = A @ model.omega_hat @ A.T
    omega = 0.5 * (omega + omega.T)
    return replace(model, beta_hat=beta, omega_hat=omega, mu_hat=A @ model.mu_hat,
                   beta_tstats=beta_tstats(beta, omega, model.qff_hat, model.T),
                   return_names=tuple(f"P{i + 1}" for i in range(model.N)))
