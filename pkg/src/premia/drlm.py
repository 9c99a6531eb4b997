"""Double robust Lagrange multiplier (DRLM) test and its inversion over a grid.

The statistic for ``H0: lambda*_CUE = l`` with i.i.d. data is

    DRLM(l) = mu*' D* [ (mu*' mu*) I_K + D*' D* ]^{-1} D*' mu*

    mu*(l) = sqrt(T) Omega^{-1/2} (R_bar - B l) / sqrt(1 + l' Q^{-1} l)
    D*(l)  = sqrt(T) Omega^{-1/2} D(l) (Q + l l')^{1/2}
    D(l)   = -B - (R_bar - B l) l' Q^{-1} / (1 + l' Q^{-1} l)

and is compared with chi2_K critical values. It is zero at every stationary
point of the sample CUE objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Literal, Sequence

import numpy as np
from scipy import ndimage

from premia._linalg import sym_inv_sqrt, sym_sqrt, whiten
from premia._parallel import pmap
from premia.chi2 import chi2_critical
from premia.cross_section import fm_tstats, fm_two_pass
from premia.cue_rank import _omega_chol, cue_estimate, statistics_view
from premia.errors import CueUnboundedError, InputError, SingularMatrixError
from premia.first_pass import FirstPassEstimates
from premia.panel_io import ZeroBetaMode

__all__ = ["DrlmWorkspace", "CsGrid", "Interval", "drlm_workspace", "drlm_stat",
           "DrlmEvaluator", "confidence_set", "power_improvement", "project",
           "classify_shape", "default_axes", "make_axis", "drlm_test"]

ShapeClass = Literal["bounded_convex", "bounded_disjoint", "unbounded_convex",
                     "unbounded_disjoint", "empty"]

_CHUNK = 65_536


@dataclass(frozen=True)
class DrlmWorkspace:
    l: np.ndarray
    d_hat: np.ndarray
    omega_inv_sqrt: np.ndarray
    qll_sqrt: np.ndarray
    mu_star: np.ndarray
    d_star: np.ndarray

    @property
    def value(self) -> float:
        m, D = self.mu_star, self.d_star
        K = D.shape[1]
        score = D.T @ m
        inner = float(m @ m) * np.eye(K) + D.T @ D
        return float(score @ np.linalg.solve(inner, score))


def drlm_workspace(fp: FirstPassEstimates, l, mode=None,
                   sqrt: Literal["cholesky", "symmetric"] = "cholesky") -> DrlmWorkspace:
    """All intermediate objects of the DRLM statistic at one hypothesised ``l``.

    ``sqrt`` picks the matrix square roots; the statistic does not depend on it.
    """
    fs = statistics_view(fp, mode)
    l = np.atleast_1d(np.asarray(l, dtype=float))
    if l.shape != (fs.K,):
        raise InputError(f"hypothesised premia must have length K={fs.K}")
    T = fs.T
    Q = fs.qff_hat
    q_l = np.linalg.solve(Q, l)
    s = float(l @ q_l)
    err = fs.mu_hat - fs.beta_hat @ l
    d_hat = -fs.beta_hat - np.outer(err, q_l) / (1.0 + s)
    qll = Q + np.outer(l, l)
    if sqrt == "cholesky":
        Lo = _omega_chol(fs)
        omega_is = whiten(Lo, np.eye(fs.N))
        try:
            qll_sqrt = np.linalg.cholesky(qll)
        except np.linalg.LinAlgError:
            raise SingularMatrixError("factor moment matrix Q + l l'") from None
    elif sqrt == "symmetric":
        _omega_chol(fs)
        omega_is = sym_inv_sqrt(fs.omega_hat)
        qll_sqrt = sym_sqrt(qll)
    else:
        raise InputError(f"unknown square-root choice {sqrt!r}")
    rt = math.sqrt(T)
    mu_star = rt * omega_is @ err / math.sqrt(1.0 + s)
    d_star = rt * omega_is @ d_hat @ qll_sqrt
    return DrlmWorkspace(l, d_hat, omega_is, qll_sqrt, mu_star, d_star)


def drlm_stat(fp: FirstPassEstimates, l, mode=None, sqrt="cholesky") -> float:
    return max(drlm_workspace(fp, l, mode, sqrt).value, 0.0)


class DrlmEvaluator:
    """Vectorised DRLM over many hypothesised values.

    Because the statistic is invariant to the choice of square roots, it equals
    ``a' [c (Q + l l')^{-1} + B]^{-1} a`` with ``a = D*' mu*`` (up to the root),
    ``B = D' Omega^{-1} D`` and ``c = mu*' mu*``. All of these reduce to K x K
    algebra on whitened moments, so each point costs O(K^2) regardless of N.
    """

    def __init__(self, fp: FirstPassEstimates, mode=None):
        fs = statistics_view(fp, mode)
        L = _omega_chol(fs)
        mw = whiten(L, fs.mu_hat)
        Bw = whiten(L, fs.beta_hat)
        self.K = fs.K
        self.T = fs.T
        self.Q = fs.qff_hat
        self.Qinv = np.linalg.inv(fs.qff_hat)
        self.G = Bw.T @ Bw
        self.h = Bw.T @ mw
        self.r = float(mw @ mw)

    def __call__(self, points) -> np.ndarray:
        P = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty(P.shape[0])
        for start in range(0, P.shape[0], _CHUNK):
            out[start:start + _CHUNK] = self._eval(P[start:start + _CHUNK])
        return out

    def _eval(self, l: np.ndarray) -> np.ndarray:
        T = self.T
        q = l @ self.Qinv
        s1 = 1.0 + np.einsum("pk,pk->p", l, q)
        g = self.h[None, :] - l @ self.G                         # B' W e
        ee = self.r - 2.0 * l @ self.h + np.einsum("pk,pk->p", l @ self.G, l)
        ee = np.maximum(ee, 0.0)                                 # e' W e
        dte = -g - q * (ee / s1)[:, None]                        # D' W e
        gq = g[:, :, None] * q[:, None, :]
        dtd = (self.G[None] + (gq + gq.transpose(0, 2, 1)) / s1[:, None, None]
               + q[:, :, None] * q[:, None, :] * (ee / s1 ** 2)[:, None, None])
        a = T * dte / np.sqrt(s1)[:, None]
        c = T * ee / s1
        qll_inv = self.Qinv[None] - q[:, :, None] * q[:, None, :] / s1[:, None, None]
        A = c[:, None, None] * qll_inv + T * dtd
        x = np.linalg.solve(A, a[:, :, None])[:, :, 0]
        return np.maximum(np.einsum("pk,pk->p", a, x), 0.0)


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    lower_censored: bool
    upper_censored: bool

    @property
    def boundary_censored(self) -> bool:
        return self.lower_censored or self.upper_censored

    def to_dict(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "lower_censored": self.lower_censored,
                "upper_censored": self.upper_censored}


@dataclass(frozen=True)
class CsGrid:
    """DRLM values and accept/reject flags over a Cartesian grid (``ij`` indexing)."""

    axes: tuple[np.ndarray, ...]
    drlm_values: np.ndarray
    reject_raw: np.ndarray
    reject_final: np.ndarray
    alpha: float
    critical_value: float
    cue_point: np.ndarray | None
    shape_class: ShapeClass
    zero_beta_mode: ZeroBetaMode
    power_rule_applied: bool = False
    power_rule_samples: int = 100
    warning: str | None = None

    @property
    def K(self) -> int:
        return len(self.axes)

    @property
    def accepted(self) -> np.ndarray:
        return ~self.reject_final

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def summary(self) -> dict:
        return {
            "alpha": self.alpha,
            "critical_value": self.critical_value,
            "grid_shape": list(self.drlm_values.shape),
            "n_points": int(self.drlm_values.size),
            "n_accepted_raw": int((~self.reject_raw).sum()),
            "n_accepted": int(self.accepted.sum()),
            "cue_point": None if self.cue_point is None else self.cue_point.tolist(),
            "shape_class": self.shape_class,
            "power_rule_applied": self.power_rule_applied,
            "power_rule_samples": self.power_rule_samples,
            "warning": self.warning,
            "projections": [[iv.to_dict() for iv in project(self, k)] for k in range(self.K)],
        }


def make_axis(lo: float, hi: float, step: float) -> np.ndarray:
    if step <= 0 or hi <= lo:
        raise InputError(f"bad axis specification {lo}:{hi}:{step}")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return np.round(lo + step * np.arange(n), 12)


def default_axes(fp: FirstPassEstimates, mode=None, step: float = 0.05) -> list[np.ndarray]:
    """FM estimate +/- max(5, 10 plain standard errors) per factor."""
    res = fm_tstats(fp, fm_two_pass(fp, mode), "plain")
    k0 = 0 if res.lambda_0 is None else 1
    axes = []
    for k, lam in enumerate(res.lambda_f):
        half = max(5.0, 10.0 * float(res.std_errors[k0 + k]))
        lo = math.floor((lam - half) / step) * step
        axes.append(make_axis(lo, lo + 2 * half + step, step))
    return axes


def _validate_axes(axes: Sequence, K: int) -> tuple[np.ndarray, ...]:
    if len(axes) != K:
        raise InputError(f"need one grid axis per factor (K={K}, got {len(axes)})")
    out = []
    for i, ax in enumerate(axes):
        ax = np.asarray(ax, dtype=float)
        if ax.ndim != 1 or ax.size < 2:
            raise InputError(f"grid axis {i} needs at least two points")
        if np.any(np.diff(ax) <= 0):
            raise InputError(f"grid axis {i} is not strictly increasing")
        out.append(ax)
    return tuple(out)


def _touches_boundary(mask: np.ndarray) -> bool:
    for axis in range(mask.ndim):
        if mask.take(0, axis=axis).any() or mask.take(-1, axis=axis).any():
            return True
    return False


def classify_shape(accepted: np.ndarray) -> ShapeClass:
    """Bounded vs unbounded from boundary contact, convex vs disjoint from connectivity."""
    if not accepted.any():
        return "empty"
    _, n_acc = ndimage.label(accepted)
    if not _touches_boundary(accepted):
        return "bounded_convex" if n_acc == 1 else "bounded_disjoint"
    rejected = ~accepted
    if not rejected.any():
        return "unbounded_convex"
    labels, n_rej = ndimage.label(rejected)
    enclosed = any(not _touches_boundary(labels == i) for i in range(1, n_rej + 1))
    return "unbounded_disjoint" if (n_acc > 1 or enclosed) else "unbounded_convex"


def confidence_set(fp: FirstPassEstimates, axes: Sequence | None = None, alpha: float = 0.05,
                   mode=None, power_rule: bool = True, power_samples: int = 100,
                   workers: int | None = None) -> CsGrid:
    """Joint DRLM confidence set: every grid value the test does not reject."""
    if not 0.0 < alpha <= 0.5:
        raise InputError("alpha must lie in (0, 0.5]")
    mode = fp.zero_beta_mode if mode is None else ZeroBetaMode.parse(mode)
    if axes is None:
        axes = default_axes(fp, mode)
    axes = _validate_axes(axes, fp.K)
    ev = DrlmEvaluator(fp, mode)
    crit = chi2_critical(alpha, fp.K)
    shape = tuple(len(a) for a in axes)
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    blocks = [pts[i:i + _CHUNK] for i in range(0, len(pts), _CHUNK)]
    values = np.concatenate(pmap(ev, blocks, workers)).reshape(shape)
    reject = values > crit
    try:
        cue = np.asarray(cue_estimate(fp, mode).lambda_f)
    except CueUnboundedError:
        cue = None
    grid = CsGrid(axes=axes, drlm_values=values, reject_raw=reject, reject_final=reject.copy(),
                  alpha=alpha, critical_value=crit, cue_point=cue,
                  shape_class=classify_shape(~reject), zero_beta_mode=mode,
                  power_rule_samples=power_samples)
    if power_rule:
        grid = power_improvement(fp, grid, samples=power_samples, workers=workers)
    return grid


def power_improvement(fp: FirstPassEstimates, grid: CsGrid, samples: int | None = None,
                      workers: int | None = None) -> CsGrid:
    """Also reject accepted values separated from the CUE by significant DRLM values.

    For each accepted ``l`` the straight segment to the CUE is sampled at
    ``samples`` equally spaced interior points; one significant sample rejects
    ``l``. When no grid value is significant the rule is vacuous.
    """
    samples = grid.power_rule_samples if samples is None else samples
    cue = grid.cue_point
    if cue is None or not np.all(np.isfinite(cue)):
        return replace(grid, reject_final=grid.reject_raw.copy(), power_rule_applied=False,
                       warning="power rule disabled: CUE not identified")
    if not grid.reject_raw.any():
        return replace(grid, reject_final=grid.reject_raw.copy(), power_rule_applied=True,
                       power_rule_samples=samples)
    ev = DrlmEvaluator(fp, grid.zero_beta_mode)
    crit = grid.critical_value
    flat_acc = np.flatnonzero(~grid.reject_raw.ravel())
    pts = grid.points()[flat_acc]
    ts = np.arange(1, samples + 1) / (samples + 1)

    def segment_hits(block: np.ndarray) -> np.ndarray:
        hit = np.zeros(len(block), dtype=bool)
        live = np.arange(len(block))
        # walk outward from the hypothesised point; drop points once rejected
        for t_chunk in np.array_split(ts, max(1, samples // 10)):
            if live.size == 0:
                break
            base = block[live]
            seg = base[:, None, :] + t_chunk[None, :, None] * (cue - base)[:, None, :]
            vals = ev(seg.reshape(-1, grid.K)).reshape(len(live), len(t_chunk))
            newly = np.any(vals > crit, axis=1)
            hit[live[newly]] = True
            live = live[~newly]
        return hit

    step = max(1, _CHUNK // samples)
    blocks = [pts[i:i + step] for i in range(0, len(pts), step)]
    hits = np.concatenate(pmap(segment_hits, blocks, workers)) if blocks else np.zeros(0, bool)
    final = grid.reject_raw.copy().ravel()
    final[flat_acc[hits]] = True
    final = final.reshape(grid.reject_raw.shape)
    return replace(grid, reject_final=final, power_rule_applied=True, power_rule_samples=samples,
                   shape_class=classify_shape(~final), warning=None)


def project(grid: CsGrid, axis: int) -> list[Interval]:
    """Maximal runs of accepted values along one axis, after projecting out the others."""
    if not 0 <= axis < grid.K:
        raise InputError(f"axis must be in [0, {grid.K})")
    acc = grid.accepted
    other = tuple(i for i in range(grid.K) if i != axis)
    line = acc.any(axis=other) if other else acc
    ax = grid.axes[axis]
    out = []
    i, n = 0, len(line)
    while i < n:
        if not line[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and line[j + 1]:
            j += 1
        out.append(Interval(float(ax[i]), float(ax[j]), i == 0, j == n - 1))
        i = j + 1
    return out


def drlm_test(fp: FirstPassEstimates, l, alpha: float = 0.05, mode=None,
              power_rule: bool = False, samples: int = 100) -> bool:
    """Reject ``H0: lambda*_CUE = l``? Optionally with the segment power rule."""
    ev = DrlmEvaluator(fp, mode)
    K = ev.K
    l = np.atleast_1d(np.asarray(l, dtype=float))
    crit = chi2_critical(alpha, K)
    if ev(l[None])[0] > crit:
        return True
    if not power_rule:
        return False
    try:
        cue = np.asarray(cue_estimate(fp, mode).lambda_f)
    except CueUnboundedError:
        return False
    ts = np.arange(1, samples + 1) / (samples + 1)
    seg = l[None, :] + ts[:, None] * (cue - l)[None, :]
    return bool(np.any(ev(seg) > crit))
