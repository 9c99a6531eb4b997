"""Time-series regression of returns on factors.

Everything downstream (two-pass premia, J / IS, DRLM) is a function of the
moments collected in :class:`FirstPassEstimates`, so the raw panel is only
touched once.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from premia.errors import InputError, SingularMatrixError
from premia.panel_io import AlignedDataset, ZeroBetaMode, differencing_matrix

__all__ = ["FirstPassEstimates", "estimate_first_pass", "beta_significance_table",
           "from_moments", "beta_tstats", "difference_estimates"]

_QFF_TOL = 1e-12


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FirstPassEstimates:
    """Moments from the first-pass regression ``R_t = alpha + beta F_t + u_t``.

    ``omega_hat`` and ``qff_hat`` use the 1/T divisor.
    """

    beta_hat: np.ndarray
    omega_hat: np.ndarray
    qff_hat: np.ndarray
    mu_hat: np.ndarray
    fbar: np.ndarray
    T: int
    beta_tstats: np.ndarray
    zero_beta_mode: ZeroBetaMode = ZeroBetaMode.IMPOSED_ZERO
    return_names: tuple[str, ...] = field(default=())
    factor_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        for name in ("beta_hat", "omega_hat", "qff_hat", "mu_hat", "fbar", "beta_tstats"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "zero_beta_mode", ZeroBetaMode.parse(self.zero_beta_mode))
        N, K = self.beta_hat.shape
        if not self.return_names:
            object.__setattr__(self, "return_names", tuple(f"R{i + 1}" for i in range(N)))
        if not self.factor_names:
            object.__setattr__(self, "factor_names", tuple(f"F{i + 1}" for i in range(K)))

    @property
    def N(self) -> int:
        return self.beta_hat.shape[0]

    @property
    def K(self) -> int:
        return self.beta_hat.shape[1]

    def sample_covariance(self) -> np.ndarray:
        """Covariance of the returns implied by the fit (1/T divisor)."""
        return self.omega_hat + self.beta_hat @ self.qff_hat @ self.beta_hat.T


_ZERO_VAR_REL = 1e-20


def _check_qff(qff: np.ndarray) -> None:
    eig = np.linalg.eigvalsh(qff)
    if eig[0] <= _QFF_TOL * max(eig[-1], 0.0) or eig[-1] <= 0:
        cond = np.inf if eig[0] <= 0 else eig[-1] / eig[0]
        raise SingularMatrixError("factor covariance matrix Q_FF", cond)


def beta_tstats(beta: np.ndarray, omega: np.ndarray, qff: np.ndarray, T: int) -> np.ndarray:
    """Per-equation OLS t-statistics with the 1/(T-K-1) residual divisor.

    Entries whose residual variance is numerically zero (below 1e-20 of the
    return's total variance) are reported as ``+inf``.
    """
    K = beta.shape[1]
    dof = T - K - 1
    total = np.diag(omega) + np.einsum("ik,kl,il->i", beta, qff, beta)
    w = np.diag(omega).copy()
    w[w <= _ZERO_VAR_REL * total] = 0.0
    s2 = np.clip(w, 0.0, None) * T / dof
    qinv_diag = np.diag(np.linalg.inv(qff))
    se = np.sqrt(np.outer(s2, qinv_diag) / T)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = beta / se
    t[se == 0] = np.inf
    return t


def from_moments(mu_hat, beta_hat, omega_hat, qff_hat, T, fbar=None,
                 zero_beta_mode=ZeroBetaMode.IMPOSED_ZERO, **names) -> FirstPassEstimates:
    """Build estimates directly from moments (used by the zoo scanner and tests)."""
    beta_hat = np.asarray(beta_hat, dtype=float)
    if beta_hat.ndim == 1:
        beta_hat = beta_hat[:, None]
    omega_hat = np.asarray(omega_hat, dtype=float)
    omega_hat = 0.5 * (omega_hat + omega_hat.T)
    qff_hat = np.atleast_2d(np.asarray(qff_hat, dtype=float))
    K = beta_hat.shape[1]
    if fbar is None:
        fbar = np.zeros(K)
    return FirstPassEstimates(
        beta_hat=beta_hat, omega_hat=omega_hat, qff_hat=qff_hat,
        mu_hat=np.asarray(mu_hat, dtype=float), fbar=np.atleast_1d(fbar), T=int(T),
        beta_tstats=beta_tstats(beta_hat, omega_hat, qff_hat, int(T)),
        zero_beta_mode=zero_beta_mode, **names)


def estimate_first_pass(ds: AlignedDataset) -> FirstPassEstimates:
    R, F = ds.returns, ds.factors
    T, K = ds.T, ds.K
    if T <= K + 1:
        raise InputError(f"need T > K + 1 observations (T={T}, K={K})")
    Rbar = R.mean(axis=0)
    Fbar = F.mean(axis=0)
    Rc = R - Rbar
    Fc = F - Fbar
    SFF = Fc.T @ Fc
    qff = SFF / T
    _check_qff(qff)
    beta = np.linalg.solve(SFF, Fc.T @ Rc).T
    U = Rc - Fc @ beta.T
    omega = U.T @ U / T
    omega = 0.5 * (omega + omega.T)
    return FirstPassEstimates(
        beta_hat=beta, omega_hat=omega, qff_hat=qff, mu_hat=Rbar, fbar=Fbar, T=T,
        beta_tstats=beta_tstats(beta, omega, qff, T),
        zero_beta_mode=ds.zero_beta_mode,
        return_names=ds.return_names, factor_names=ds.factor_names,
    )


def beta_significance_table(fp: FirstPassEstimates) -> list[dict]:
    """One row per asset: ``{"asset": name, factor: (beta, t), ...}``."""
    rows = []
    for i, asset in enumerate(fp.return_names):
        row = {"asset": asset}
        for k, fac in enumerate(fp.factor_names):
            row[fac] = (float(fp.beta_hat[i, k]), float(fp.beta_tstats[i, k]))
        rows.append(row)
    return rows


def difference_estimates(fp: FirstPassEstimates, reference: int = -1) -> FirstPassEstimates:
    """Apply the reference-asset differencing map to the first-pass moments.

    Differencing is linear, so ``beta -> J beta``, ``Omega -> J Omega J'`` and
    ``mu -> J mu`` reproduce exactly what re-estimating on differenced returns
    would give.
    """
    J = differencing_matrix(fp.N, reference)
    ref = reference % fp.N
    names = tuple(n for i, n in enumerate(fp.return_names) if i != ref)
    beta = J @ fp.beta_hat
    omega = J @ fp.omega_hat @ J.T
    omega = 0.5 * (omega + omega.T)
    return replace(fp, beta_hat=beta, omega_hat=omega, mu_hat=J @ fp.mu_hat,
                   beta_tstats=beta_tstats(beta, omega, fp.qff_hat, fp.T),
                   zero_beta_mode=ZeroBetaMode.REFERENCE_DIFFERENCED, return_names=names)
