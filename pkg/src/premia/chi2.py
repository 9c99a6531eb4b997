"""Chi-square distribution through the regularized incomplete gamma function.

The lower function P(a, x) is evaluated by its power series for x < a + 1
and the upper function Q(a, x) by a Lentz continued fraction otherwise, so
that each branch is used where it converges fast.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

_EPS = 1e-15
_TINY = 1e-300
_MAX_ITER = 10_000


def _gamma_series(a: float, x: float) -> float:
    # P(a, x) = x^a e^-x / Gamma(a+1) * sum_n x^n / ((a+1)...(a+n))
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    else:
        raise ArithmeticError(f"incomplete gamma series did not converge (a={a}, x={x})")
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cont_frac(a: float, x: float) -> float:
    # Q(a, x) by modified Lentz on the even part of the Legendre fraction.
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    else:
        raise ArithmeticError(f"incomplete gamma fraction did not converge (a={a}, x={x})")
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if a <= 0:
        raise ValueError("shape a must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_cont_frac(a, x)


def gammainc_upper(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x)."""
    if a <= 0:
        raise ValueError("shape a must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cont_frac(a, x)


def chi2_cdf(x: float, df: float) -> float:
    if x <= 0:
        return 0.0
    return gammainc_lower(0.5 * df, 0.5 * x)


def chi2_sf(x: float, df: float) -> float:
    """Upper tail probability, i.e. the p-value of a statistic ``x``."""
    if math.isnan(x):
        return math.nan
    if x <= 0:
        return 1.0
    return gammainc_upper(0.5 * df, 0.5 * x)


def chi2_ppf(q: float, df: float, tol: float = 1e-10) -> float:
    """Quantile function, found by bisection on :func:`chi2_cdf`."""
    if not 0.0 <= q < 1.0:
        raise ValueError("q must lie in [0, 1)")
    if q == 0.0:
        return 0.0
    lo, hi = 0.0, max(1.0, float(df))
    while chi2_cdf(hi, df) < q:
        lo, hi = hi, 2.0 * hi
    while hi - lo > tol * hi and hi > 1e-300:
        mid = 0.5 * (lo + hi)
        if chi2_cdf(mid, df) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def chi2_sf_array(x, df) -> np.ndarray:
    """Elementwise :func:`chi2_sf` over arrays (broadcasting ``x`` and ``df``)."""
    return _sf_vec(np.asarray(x, dtype=float), np.asarray(df, dtype=float))


_sf_vec = np.vectorize(chi2_sf, otypes=[float])


@lru_cache(maxsize=256)
def chi2_critical(alpha: float, df: float) -> float:
    """Upper-alpha critical value chi2_df(alpha)."""
    return chi2_ppf(1.0 - alpha, df)


def normal_critical(alpha: float) -> float:
    """Two-sided standard normal critical value, sqrt of chi2_1(alpha)."""
    return math.sqrt(chi2_critical(alpha, 1))
