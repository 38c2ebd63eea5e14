"""Normal and Student-t distribution primitives shared by the copula code.

Thin wrappers over ``scipy.special`` so the rest of the package has one place
to look for CDFs/quantiles. ``nu = inf`` falls back to the normal.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import special


def norm_cdf(x):
    return special.ndtr(x)


def norm_ppf(p):
    return special.ndtri(p)


def t_cdf(x, nu: float):
    if math.isinf(nu):
        return special.ndtr(x)
    return special.stdtr(nu, x)


def t_ppf(p, nu: float):
    if math.isinf(nu):
        return special.ndtri(p)
    return special.stdtrit(nu, p)


def t_logpdf(x, nu: float):
    x = np.asarray(x, dtype=float)
    if math.isinf(nu):
        return -0.5 * x * x - 0.5 * math.log(2.0 * math.pi)
    return (
        special.gammaln((nu + 1.0) / 2.0)
        - special.gammaln(nu / 2.0)
        - 0.5 * math.log(nu * math.pi)
        - (nu + 1.0) / 2.0 * np.log1p(x * x / nu)
    )


def excess_kurtosis(x) -> float:
    """Standardized fourth moment minus 3 (biased moment estimator)."""
    x = np.asarray(x, dtype=float)
    d = x - x.mean()
    m2 = np.mean(d * d)
    if m2 <= 0.0 or np.ptp(x) == 0:
        return float("nan")
    return float(np.mean(d**4) / (m2 * m2) - 3.0)


def excess_kurtosis_rows(x: np.ndarray) -> np.ndarray:
    d = x - x.mean(axis=1, keepdims=True)
    m2 = np.mean(d * d, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.mean(d**4, axis=1) / (m2 * m2) - 3.0
    k[(m2 <= 0.0) | (np.ptp(x, axis=1) == 0)] = np.nan
    return k
