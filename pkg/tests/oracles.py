"""Independent reference computations used only by the tests.

Each routine takes a different route from the package code: raw-data
regressions instead of moment algebra, brute-force grids instead of
eigenproblems, and scipy instead of the in-house chi-square.
"""

import itertools

import numpy as np
from scipy import linalg


def ols_first_pass(R, F):
    """Regress each return on a constant and the factors."""
    T = len(R)
    X = np.column_stack([np.ones(T), F])
    coef, *_ = np.linalg.lstsq(X, R, rcond=None)
    resid = R - X @ coef
    beta = coef[1:].T
    omega = resid.T @ resid / T
    Fc = F - F.mean(0)
    return beta, omega, Fc.T @ Fc / T, R.mean(0)


def cue_objective(mu, beta, omega, q, l):
    e = mu - beta @ l
    return float(e @ np.linalg.solve(omega, e)) / (1.0 + float(l @ np.linalg.solve(q, l)))


def brute_force_cue(mu, beta, omega, q, center, half=3.0, step=0.02, refine=4):
    """Grid minimisation of the CUE objective with successive zooming."""
    c = np.asarray(center, float)
    h = half
    for _ in range(refine + 1):
        axes = [np.arange(ci - h, ci + h + step / 2, step) for ci in c]
        best = None
        for pt in itertools.product(*axes):
            v = cue_objective(mu, beta, omega, q, np.array(pt))
            if best is None or v < best[0]:
                best = (v, np.array(pt))
        c = best[1]
        h = 4 * step
        step = step / 10
    return best[1], best[0]


def drlm_raw(R, F, l):
    """DRLM from the raw-data recentred beta, symmetric square roots throughout."""
    T = len(R)
    Fc = F - F.mean(0)
    Rbar = R.mean(0)
    X = np.column_stack([np.ones(T), F])
    coef, *_ = np.linalg.lstsq(X, R, rcond=None)
    resid = R - X @ coef
    omega = resid.T @ resid / T
    beta = coef[1:].T
    G = Fc + l
    D = -(R.T @ G / T) @ np.linalg.inv(G.T @ G / T)
    q = Fc.T @ Fc / T
    s = float(l @ np.linalg.solve(q, l))
    om_is = linalg.inv(linalg.sqrtm(omega)).real
    mu_s = np.sqrt(T) * om_is @ (Rbar - beta @ l) / np.sqrt(1 + s)
    d_s = np.sqrt(T) * om_is @ D @ linalg.sqrtm(q + np.outer(l, l)).real
    K = len(l)
    inner = float(mu_s @ mu_s) * np.eye(K) + d_s.T @ d_s
    sc = d_s.T @ mu_s
    return float(sc @ np.linalg.solve(inner, sc))


def brute_force_cue_fast(mu, beta, omega, q, center, half=3.0, step=0.02, refine=4):
    """Same zooming grid search as :func:`brute_force_cue`, evaluated in bulk."""
    P = np.linalg.inv(linalg.sqrtm(omega).real)
    mw, bw = P @ mu, P @ beta
    qi = np.linalg.inv(q)
    c = np.asarray(center, float)
    h = half
    for _ in range(refine + 1):
        axes = [np.arange(ci - h, ci + h + step / 2, step) for ci in c]
        pts = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
        e = mw[None, :] - pts @ bw.T
        obj = np.sum(e * e, axis=1) / (1.0 + np.einsum("pk,kj,pj->p", pts, qi, pts))
        i = int(np.argmin(obj))
        c, best = pts[i], float(obj[i])
        h = 4 * step
        step = step / 10
    return c, best


def pencil_roots_by_bisection(M, D, n_scan=20000):
    """Real roots of det(tau D - M) via sign changes on a scan plus bisection."""
    M, D = np.asarray(M, float), np.asarray(D, float)
    hi = np.abs(M).sum() * np.abs(np.linalg.inv(D)).sum() + 1.0

    def f(tau):
        return np.linalg.det(tau * D - M)

    grid = np.linspace(-hi, hi, n_scan)
    vals = np.array([f(t) for t in grid])
    roots = []
    for i in np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0):
        a, b = grid[i], grid[i + 1]
        fa = vals[i]
        for _ in range(200):
            m = 0.5 * (a + b)
            fm = f(m)
            if np.sign(fm) == np.sign(fa):
                a, fa = m, fm
            else:
                b = m
        roots.append(0.5 * (a + b))
    return np.array(roots)
