"""Multi-asset dependence: single-index model, bivariate copulas, elliptical
copulas, C-vines, copula sampling and rank-reorder coupling of ensembles.

Bivariate conventions: ``C(u, v)`` with the h-function ``h(u | v) = dC/dv``.
Every vectorized routine accepts scalars or arrays of equal shape.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, special, stats

from ._numerics import norm_cdf, norm_ppf, t_cdf, t_logpdf, t_ppf
from .data import GrowthSeries
from .errors import DataError, NumericError
from .simulate import PathEnsemble, path_rng
from .validate import ks_two_sample

log = logging.getLogger(__name__)

FAMILIES = ("gaussian", "student_t", "clayton", "gumbel", "frank")
NU_GRID = (2.5, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 15.0, 20.0, 30.0)
RHO_MAX = 1.0 - 1e-6
FRANK_BRACKET = 500.0
FRANK_ZERO_TAU = 1e-6
PSD_FLOOR = 1e-10
PSD_MAX_REPAIR = 0.05
PSEUDO_CLIP = 1e-12
MIN_FIT_N = 30


# --------------------------------------------------------------------------- #
# Single-index model
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class SimFit:
    alpha: float
    beta: float
    residuals: np.ndarray
    r_squared: float
    ticker: str = ""

    def to_dict(self) -> dict:
        return {
            "ticker": self.ticker,
            "alpha": self.alpha,
            "beta": self.beta,
            "r_squared": self.r_squared,
            "residuals": self.residuals.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimFit":
        return cls(float(d["alpha"]), float(d["beta"]), np.array(d["residuals"], dtype=float),
                   float(d["r_squared"]), d.get("ticker", ""))


def _series(x) -> np.ndarray:
    return x.values if isinstance(x, GrowthSeries) else np.asarray(x, dtype=float)


def fit_sim(asset, market) -> SimFit:
    """OLS of the asset growth rate on the market growth rate."""
    y, x = _series(asset), _series(market)
    if y.size != x.size or y.size < 3:
        raise DataError("single-index fit needs equal-length series of at least 3 points")
    xc = x - x.mean()
    sxx = float(np.dot(xc, xc))
    if sxx <= 0.0:
        raise NumericError("zero market variance: beta undefined")
    beta = float(np.dot(xc, y - y.mean()) / sxx)
    alpha = float(y.mean() - beta * x.mean())
    resid = y - alpha - beta * x
    yc = y - y.mean()
    syy = float(np.dot(yc, yc))
    r2 = 1.0 - float(np.dot(resid, resid)) / syy if syy > 0 else 1.0
    return SimFit(alpha, beta, resid, r2, asset.ticker if isinstance(asset, GrowthSeries) else "")


def simulate_sim(fit: SimFit, market_paths: PathEnsemble, seed: int, workers: int = 1) -> PathEnsemble:
    """``alpha + beta * market + eta`` with residuals resampled i.i.d. per step."""
    if fit.residuals.size == 0:
        raise DataError("single-index fit has no residuals to resample")
    g = market_paths.growth
    p, m = g.shape
    out = np.empty_like(g)
    for i in range(p):
        rng = path_rng(seed, (i,))
        out[i] = fit.alpha + fit.beta * g[i] + fit.residuals[rng.integers(0, fit.residuals.size, m)]
    return PathEnsemble(
        growth=out,
        states=None,
        episodes=market_paths.episodes,
        seed=int(seed),
        model_id=f"sim:{market_paths.model_id}",
        kind="sim",
        config={"alpha": fit.alpha, "beta": fit.beta, "ticker": fit.ticker},
    )


# --------------------------------------------------------------------------- #
# Ranks and Kendall tau
# --------------------------------------------------------------------------- #
def pit_transform(columns) -> np.ndarray:
    """Column-wise average ranks divided by ``n + 1``."""
    x = np.asarray(columns, dtype=float)
    one_d = x.ndim == 1
    x = x[:, None] if one_d else x
    if x.shape[0] < 2:
        raise DataError("PIT needs at least 2 rows")
    u = stats.rankdata(x, method="average", axis=0) / (x.shape[0] + 1.0)
    return u[:, 0] if one_d else u


def kendall_tau(u, v) -> float:
    """Tie-adjusted Kendall tau (tau-b)."""
    a, b = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    if a.size != b.size or a.size < 2:
        raise DataError("kendall_tau needs two equal-length vectors of at least 2 points")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise DataError("kendall_tau undefined for a constant column")
    return float(stats.kendalltau(a, b).statistic)


def kendall_matrix(u: np.ndarray) -> np.ndarray:
    d = u.shape[1]
    tau = np.eye(d)
    for i in range(d):
        for j in range(i + 1, d):
            tau[i, j] = tau[j, i] = kendall_tau(u[:, i], u[:, j])
    return tau


# --------------------------------------------------------------------------- #
# Frank / Debye
# --------------------------------------------------------------------------- #
def debye1(theta: float) -> float:
    if theta == 0.0:
        return 1.0
    val, _ = integrate.quad(lambda t: t / math.expm1(t) if t != 0.0 else 1.0, 0.0, theta,
                            epsabs=1e-14, epsrel=1e-13, limit=200)
    return val / theta


def frank_tau(theta: float) -> float:
    if theta == 0.0:
        return 0.0
    return 1.0 + 4.0 * (debye1(theta) - 1.0) / theta


def _frank_theta(tau: float) -> float:
    lo, hi = -FRANK_BRACKET, FRANK_BRACKET
    if not frank_tau(lo) < tau < frank_tau(hi):
        raise DataError(f"frank: tau={tau} outside the attainable range for |theta| <= {FRANK_BRACKET}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if frank_tau(mid) < tau:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    return 0.5 * (lo + hi)


def tau_to_param(family: str, tau: float) -> float:
    if family in ("gaussian", "student_t"):
        if not -1 < tau < 1:
            raise DataError(f"{family}: tau must lie in (-1, 1), got {tau}")
        return math.sin(math.pi * tau / 2.0)
    if family == "clayton":
        if not 0 < tau < 1:
            raise DataError(f"clayton: tau must lie in (0, 1), got {tau}")
        return 2.0 * tau / (1.0 - tau)
    if family == "gumbel":
        if not 0 <= tau < 1:
            raise DataError(f"gumbel: tau must lie in [0, 1), got {tau}")
        return 1.0 / (1.0 - tau)
    if family == "frank":
        if not -1 < tau < 1:
            raise DataError(f"frank: tau must lie in (-1, 1), got {tau}")
        if abs(tau) < FRANK_ZERO_TAU:
            log.info("frank: |tau| < %g, using the independence limit theta = 0", FRANK_ZERO_TAU)
            return 0.0
        return _frank_theta(tau)
    raise DataError(f"unknown copula family {family!r}")


def param_to_tau(family: str, theta: float) -> float:
    if family in ("gaussian", "student_t"):
        return 2.0 * math.asin(theta) / math.pi
    if family == "clayton":
        return theta / (theta + 2.0)
    if family == "gumbel":
        return 1.0 - 1.0 / theta
    if family == "frank":
        return frank_tau(theta)
    raise DataError(f"unknown copula family {family!r}")


# --------------------------------------------------------------------------- #
# Bivariate families
# --------------------------------------------------------------------------- #
def _check_open(*arrays):
    for a in arrays:
        if np.any((a <= 0.0) | (a >= 1.0)):
            raise DataError("copula arguments must lie strictly inside (0, 1)")


@dataclass(frozen=True)
class BivariateCopula:
    family: str
    theta: float
    nu: float | None = None
    log_lik: float = math.nan
    aic: float = math.nan

    def __post_init__(self):
        f, th = self.family, self.theta
        if f not in FAMILIES:
            raise DataError(f"unknown copula family {f!r}")
        if f in ("gaussian", "student_t") and not -1 < th < 1:
            raise DataError(f"{f}: rho must lie in (-1, 1), got {th}")
        if f == "student_t" and (self.nu is None or not self.nu > 2):
            raise DataError("student_t: nu must exceed 2")
        if f == "clayton" and not th > 0:
            raise DataError(f"clayton: theta must be positive, got {th}")
        if f == "gumbel" and not th >= 1:
            raise DataError(f"gumbel: theta must be >= 1, got {th}")

    @property
    def n_params(self) -> int:
        return 2 if self.family == "student_t" else 1

    @property
    def tau(self) -> float:
        return param_to_tau(self.family, self.theta)

    def to_dict(self) -> dict:
        return {"family": self.family, "theta": self.theta, "nu": self.nu,
                "log_lik": self.log_lik, "aic": self.aic}

    @classmethod
    def from_dict(cls, d: dict) -> "BivariateCopula":
        nu = d.get("nu")
        return cls(d["family"], float(d["theta"]), None if nu is None else float(nu),
                   float(d.get("log_lik", math.nan)), float(d.get("aic", math.nan)))

    # -- density ---------------------------------------------------------- #
    def log_density(self, u, v) -> np.ndarray:
        u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
        _check_open(u, v)
        f, th = self.family, self.theta
        if f == "gaussian":
            x, y = norm_ppf(u), norm_ppf(v)
            r2 = 1.0 - th * th
            return -0.5 * math.log(r2) - (th * th * (x * x + y * y) - 2.0 * th * x * y) / (2.0 * r2)
        if f == "student_t":
            nu = self.nu
            x, y = t_ppf(u, nu), t_ppf(v, nu)
            r2 = 1.0 - th * th
            t3 = -(nu + 2.0) / 2.0 * np.log1p((x * x + y * y - 2.0 * th * x * y) / (nu * r2))
            t4 = (nu + 1.0) / 2.0 * (np.log1p(x * x / nu) + np.log1p(y * y / nu))
            const = (special.gammaln((nu + 2.0) / 2.0) + special.gammaln(nu / 2.0)
                     - 2.0 * special.gammaln((nu + 1.0) / 2.0) - 0.5 * math.log(r2))
            return const + t3 + t4
        lu, lv = np.log(u), np.log(v)
        if f == "clayton":
            s = np.expm1(-th * lu) + np.expm1(-th * lv)  # u^-th + v^-th - 2
            return math.log1p(th) - (1.0 + th) * (lu + lv) - (2.0 + 1.0 / th) * np.log1p(s)
        if f == "gumbel":
            x, y = -lu, -lv
            a = (x**th + y**th) ** (1.0 / th)
            return (-a - lu - lv + (th - 1.0) * (np.log(x) + np.log(y))
                    + (1.0 - 2.0 * th) * np.log(a) + np.log(a + th - 1.0))
        # frank
        if th == 0.0:
            return np.zeros(np.broadcast(u, v).shape)
        em = -math.expm1(-th)  # 1 - e^-th, same sign as th
        den = em - np.expm1(-th * u) * np.expm1(-th * v)
        return math.log(th * em) - th * (u + v) - 2.0 * np.log(np.abs(den))

    def log_likelihood(self, u, v) -> float:
        return float(np.sum(self.log_density(u, v)))

    # -- conditional CDF -------------------------------------------------- #
    def h(self, u, v) -> np.ndarray:
        """h(u | v) = dC(u, v)/dv."""
        u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
        _check_open(u, v)
        f, th = self.family, self.theta
        if f == "gaussian":
            return norm_cdf((norm_ppf(u) - th * norm_ppf(v)) / math.sqrt(1.0 - th * th))
        if f == "student_t":
            nu = self.nu
            x, y = t_ppf(u, nu), t_ppf(v, nu)
            scale = np.sqrt((nu + y * y) * (1.0 - th * th) / (nu + 1.0))
            return t_cdf((x - th * y) / scale, nu + 1.0)
        lu, lv = np.log(u), np.log(v)
        if f == "clayton":
            s = np.expm1(-th * lu) + np.expm1(-th * lv)
            return np.exp(-(th + 1.0) * lv - (1.0 + 1.0 / th) * np.log1p(s))
        if f == "gumbel":
            x, y = -lu, -lv
            a = (x**th + y**th) ** (1.0 / th)
            return np.exp(-a + (1.0 - th) * np.log(a) + (th - 1.0) * np.log(y) - lv)
        if th == 0.0:
            return u.copy() if u.shape else u * 1.0
        eu, ev = np.expm1(-th * u), np.expm1(-th * v)
        return np.exp(-th * v) * eu / (math.expm1(-th) + eu * ev)

    def h_inverse(self, w, v) -> np.ndarray:
        """Solve ``h(u | v) = w`` for ``u``."""
        w, v = np.asarray(w, dtype=float), np.asarray(v, dtype=float)
        _check_open(w, v)
        f, th = self.family, self.theta
        if f == "gaussian":
            return norm_cdf(norm_ppf(w) * math.sqrt(1.0 - th * th) + th * norm_ppf(v))
        if f == "student_t":
            nu = self.nu
            y = t_ppf(v, nu)
            scale = np.sqrt((nu + y * y) * (1.0 - th * th) / (nu + 1.0))
            return t_cdf(t_ppf(w, nu + 1.0) * scale + th * y, nu)
        if f == "clayton":
            lv = np.log(v)
            # u^-th - 1 = (w v^(th+1))^(-th/(th+1)) - v^-th
            s = np.expm1(-th / (th + 1.0) * (np.log(w) + (th + 1.0) * lv)) - np.expm1(-th * lv)
            return np.exp(-np.log1p(s) / th)
        if f == "frank":
            if th == 0.0:
                return w.copy() if w.shape else w * 1.0
            ev = np.expm1(-th * v)
            a = w * math.expm1(-th) / (np.exp(-th * v) - w * ev)
            return -np.log1p(a) / th
        return self._gumbel_h_inverse(w, v)

    def _gumbel_h_inverse(self, w, v, iters: int = 120) -> np.ndarray:
        # h is increasing in u; bisect on the logit scale for tail resolution
        w_b, v_b = np.broadcast_arrays(w, v)
        lo = np.full(w_b.shape, -40.0)
        hi = np.full(w_b.shape, 40.0)
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            u = special.expit(mid)
            u = np.clip(u, 1e-300, 1.0 - 1e-16)
            below = self.h(u, v_b) < w_b
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        u = special.expit(0.5 * (lo + hi))
        if not np.all(np.isfinite(u)):
            raise NumericError("gumbel h-inverse failed to converge")
        return u


def fit_family(family: str, u, v, tau: float | None = None) -> BivariateCopula:
    """Moment (tau-inversion) fit of one family; t adds a profile over nu."""
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    tau = kendall_tau(u, v) if tau is None else tau
    if family == "student_t":
        rho = float(np.clip(tau_to_param(family, tau), -RHO_MAX, RHO_MAX))
        best = None
        for nu in NU_GRID:
            c = BivariateCopula("student_t", rho, nu)
            ll = c.log_likelihood(u, v)
            if best is None or ll > best[0]:
                best = (ll, nu)
        ll, nu = best
        return BivariateCopula("student_t", rho, nu, ll, 2 * 2 - 2 * ll)
    theta = tau_to_param(family, tau)
    if family == "gaussian":
        theta = float(np.clip(theta, -RHO_MAX, RHO_MAX))
    c = BivariateCopula(family, theta)
    ll = c.log_likelihood(u, v)
    return BivariateCopula(family, theta, None, ll, 2 - 2 * ll)


def fit_bivariate_by_aic(u, v, families: Sequence[str] = FAMILIES) -> BivariateCopula:
    """Fit every family and keep the lowest AIC.

    Clayton needs tau > 0; for tau < 0 Gumbel is fitted at its independence
    boundary theta = 1. Families that cannot be fitted are skipped.
    """
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    if u.size != v.size or u.size < MIN_FIT_N:
        raise DataError(f"bivariate fit needs equal-length samples of at least {MIN_FIT_N} points")
    tau = kendall_tau(u, v)
    fits = []
    for fam in families:
        t_fam = max(tau, 0.0) if fam == "gumbel" else tau
        try:
            c = fit_family(fam, u, v, t_fam)
        except (DataError, NumericError) as exc:
            log.debug("skipping %s: %s", fam, exc)
            continue
        if math.isfinite(c.aic):
            fits.append(c)
    if not fits:
        raise NumericError("no copula family could be fitted")
    return min(fits, key=lambda c: c.aic)


def t_tail_dependence(rho: float, nu: float) -> float:
    """Symmetric tail-dependence coefficient of the Student-t copula."""
    if not -1 < rho < 1 or not nu > 0:
        raise DataError("tail dependence needs rho in (-1, 1) and nu > 0")
    return float(2.0 * t_cdf(-math.sqrt((nu + 1.0) * (1.0 - rho) / (1.0 + rho)), nu + 1.0))


# --------------------------------------------------------------------------- #
# Elliptical copulas
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class EllipticalCopula:
    kind: str  # gaussian | student_t
    sigma: np.ndarray
    nu: float | None = None
    repair_delta: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.sigma, dtype=float)
        if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] < 2:
            raise DataError("correlation matrix must be square with d >= 2")
        if not np.allclose(s, s.T) or not np.allclose(np.diag(s), 1.0):
            raise DataError("correlation matrix must be symmetric with unit diagonal")
        if self.kind not in ("gaussian", "student_t"):
            raise DataError(f"unknown elliptical copula {self.kind!r}")
        if self.kind == "student_t" and (self.nu is None or not self.nu > 0):
            raise DataError("student_t copula needs nu > 0")
        object.__setattr__(self, "sigma", s)

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]

    @property
    def cholesky(self) -> np.ndarray:
        return np.linalg.cholesky(self.sigma)

    def log_likelihood(self, u: np.ndarray) -> float:
        u = np.asarray(u, dtype=float)
        _check_open(u)
        if self.kind == "gaussian":
            x = norm_ppf(u)
            joint = stats.multivariate_normal(np.zeros(self.dim), self.sigma).logpdf(x)
            marg = -0.5 * x * x - 0.5 * math.log(2.0 * math.pi)
        else:
            x = t_ppf(u, self.nu)
            joint = stats.multivariate_t(np.zeros(self.dim), self.sigma, df=self.nu).logpdf(x)
            marg = t_logpdf(x, self.nu)
        return float(np.sum(joint) - np.sum(marg))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sigma": self.sigma.tolist(), "nu": self.nu,
                "repair_delta": self.repair_delta}

    @classmethod
    def from_dict(cls, d: dict) -> "EllipticalCopula":
        nu = d.get("nu")
        return cls(d["kind"], np.array(d["sigma"], dtype=float), None if nu is None else float(nu),
                   float(d.get("repair_delta", 0.0)))


def _sigma_from_tau(u: np.ndarray) -> tuple[np.ndarray, float]:
    tau = kendall_matrix(u)
    s = np.clip(np.sin(np.pi * tau / 2.0), -RHO_MAX, RHO_MAX)
    np.fill_diagonal(s, 1.0)
    w, vecs = np.linalg.eigh(s)
    if w.min() >= PSD_FLOOR:
        return s, 0.0
    fixed = (vecs * np.maximum(w, PSD_FLOOR)) @ vecs.T
    dd = np.sqrt(np.diag(fixed))
    fixed = fixed / np.outer(dd, dd)
    fixed = 0.5 * (fixed + fixed.T)
    np.fill_diagonal(fixed, 1.0)
    delta = float(np.max(np.abs(fixed - s)))
    log.warning("Kendall-implied correlation matrix repaired to PSD (max change %.3g)", delta)
    if delta > PSD_MAX_REPAIR:
        raise NumericError(f"PSD repair changed an entry by {delta:.3g} (> {PSD_MAX_REPAIR}); "
                           "data inconsistent with an elliptical copula")
    return fixed, delta


def _check_matrix(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.ndim != 2 or u.shape[1] < 2 or u.shape[0] < MIN_FIT_N:
        raise DataError(f"copula fit needs an (n >= {MIN_FIT_N}, d >= 2) matrix of uniforms")
    _check_open(u)
    return u


def fit_gaussian_copula(u_matrix) -> EllipticalCopula:
    u = _check_matrix(u_matrix)
    s, delta = _sigma_from_tau(u)
    return EllipticalCopula("gaussian", s, None, delta)


def fit_t_copula(u_matrix, nu_grid: Sequence[float] = NU_GRID) -> EllipticalCopula:
    """Sigma from pairwise tau, nu by profile likelihood over ``nu_grid``."""
    u = _check_matrix(u_matrix)
    s, delta = _sigma_from_tau(u)
    best = None
    for nu in nu_grid:
        ll = EllipticalCopula("student_t", s, nu).log_likelihood(u)
        if best is None or ll > best[0]:
            best = (ll, nu)
    return EllipticalCopula("student_t", s, float(best[1]), delta)


# --------------------------------------------------------------------------- #
# C-vine
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class VineEdge:
    tree: int
    root: int  # column index of the conditioning root of this tree
    var: int  # column index of the other variable
    given: tuple[int, ...]  # earlier roots
    copula: BivariateCopula

    def to_dict(self) -> dict:
        return {"tree": self.tree, "root": self.root, "var": self.var,
                "given": list(self.given), "copula": self.copula.to_dict()}


@dataclass(frozen=True)
class CVine:
    order: tuple[int, ...]
    trees: tuple[tuple[VineEdge, ...], ...]

    @property
    def dim(self) -> int:
        return len(self.order)

    @property
    def edges(self) -> list[VineEdge]:
        return [e for tree in self.trees for e in tree]

    def edge(self, level: int, var: int) -> VineEdge:
        for e in self.trees[level]:
            if e.var == var:
                return e
        raise KeyError((level, var))

    def to_dict(self) -> dict:
        return {"order": list(self.order), "trees": [[e.to_dict() for e in t] for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "CVine":
        trees = tuple(
            tuple(VineEdge(int(e["tree"]), int(e["root"]), int(e["var"]), tuple(e["given"]),
                           BivariateCopula.from_dict(e["copula"])) for e in t)
            for t in d["trees"]
        )
        return cls(tuple(d["order"]), trees)


def _clip_pseudo(x: np.ndarray) -> np.ndarray:
    return np.clip(x, PSEUDO_CLIP, 1.0 - PSEUDO_CLIP)


def fit_cvine(u_matrix, families: Sequence[str] = FAMILIES) -> CVine:
    """Root of each tree = unplaced variable with the largest sum of |tau| to
    the other unplaced variables (lowest index on ties)."""
    u = _check_matrix(u_matrix)
    d = u.shape[1]
    cur = {j: u[:, j].copy() for j in range(d)}
    order: list[int] = []
    trees = []
    for level in range(d - 1):
        rest = [j for j in range(d) if j not in order]
        scores = []
        for i in rest:
            scores.append(sum(abs(kendall_tau(cur[i], cur[j])) for j in rest if j != i))
        root = rest[int(np.argmax(scores))]  # argmax returns the first maximum
        edges = []
        nxt = {}
        for j in rest:
            if j == root:
                continue
            c = fit_bivariate_by_aic(cur[j], cur[root], families)
            edges.append(VineEdge(level, root, j, tuple(order), c))
            nxt[j] = _clip_pseudo(c.h(cur[j], cur[root]))
        order.append(root)
        trees.append(tuple(edges))
        cur = nxt
    order.extend(j for j in range(d) if j not in order)
    return CVine(tuple(order), tuple(trees))


# --------------------------------------------------------------------------- #
# Sampling and coupling
# --------------------------------------------------------------------------- #
def sample_copula(model: EllipticalCopula | CVine, t: int, rng: np.random.Generator) -> np.ndarray:
    """``t`` draws of the copula as a (t, d) matrix of uniforms."""
    if isinstance(model, EllipticalCopula):
        z = rng.standard_normal((t, model.dim)) @ model.cholesky.T
        if model.kind == "gaussian":
            return norm_cdf(z)
        w = rng.chisquare(model.nu, t) / model.nu
        return t_cdf(z / np.sqrt(w)[:, None], model.nu)
    if isinstance(model, CVine):
        d = model.dim
        w = _clip_pseudo(rng.random((t, d)))
        x = np.empty((t, d))
        x[:, model.order[0]] = w[:, 0]
        for i in range(1, d):
            var = model.order[i]
            val = w[:, i]
            for k in range(i - 1, -1, -1):
                val = _clip_pseudo(model.edge(k, var).copula.h_inverse(val, w[:, k]))
            x[:, var] = val
        return x
    raise DataError(f"cannot sample from {type(model).__name__}")


def rank_reorder(independent_paths: Sequence[PathEnsemble], u_samples) -> list[PathEnsemble]:
    """Permute each asset's path values so their ranks follow the copula draws.

    ``u_samples`` has shape (paths, horizon, assets). Ties in ``u`` keep time
    order (stable sort). States travel with their values; jump-episode
    records keep the pre-coupling time index.
    """
    u = np.asarray(u_samples, dtype=float)
    ens = list(independent_paths)
    if u.ndim == 2:
        u = u[None]
    if u.ndim != 3 or u.shape[2] != len(ens):
        raise DataError("u_samples must have shape (paths, horizon, assets)")
    out = []
    for a, e in enumerate(ens):
        if e.growth.shape != u.shape[:2]:
            raise DataError(f"asset {a}: ensemble shape {e.growth.shape} != copula draws {u.shape[:2]}")
        ranks = np.argsort(np.argsort(u[:, :, a], axis=1, kind="stable"), axis=1, kind="stable")
        by_value = np.argsort(e.growth, axis=1, kind="stable")
        src = np.take_along_axis(by_value, ranks, axis=1)
        growth = np.take_along_axis(e.growth, src, axis=1)
        states = None if e.states is None else np.take_along_axis(e.states, src, axis=1)
        cfg = dict(e.config)
        cfg["coupled"] = True
        out.append(PathEnsemble(growth, states, e.episodes, e.seed, e.model_id, e.kind, cfg))
    return out


def couple_ensembles(
    ensembles: Sequence[PathEnsemble],
    model: EllipticalCopula | CVine,
    seed: int,
) -> list[PathEnsemble]:
    """Draw one copula matrix per path from stream ``(seed, path)`` and reorder."""
    p, m = ensembles[0].growth.shape
    u = np.stack([sample_copula(model, m, path_rng(seed, (i,))) for i in range(p)])
    return rank_reorder(ensembles, u)


# --------------------------------------------------------------------------- #
# Dependence metrics
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class DependenceReport:
    frobenius_error: float
    frobenius_se: float
    pairwise_corr_mae: float
    per_asset_ks_pass: dict[str, float]
    observed_corr: np.ndarray = field(repr=False)
    simulated_corr: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "frobenius_error": self.frobenius_error,
            "frobenius_se": self.frobenius_se,
            "pairwise_corr_mae": self.pairwise_corr_mae,
            "per_asset_ks_pass": dict(self.per_asset_ks_pass),
            "observed_corr": self.observed_corr.tolist(),
            "simulated_corr": self.simulated_corr.tolist(),
        }


def _path_corrs(sim: np.ndarray) -> np.ndarray:
    """(P, M, d) -> (P, d, d) Pearson matrices."""
    c = sim - sim.mean(axis=1, keepdims=True)
    cov = np.einsum("pti,ptj->pij", c, c)
    sd = np.sqrt(np.einsum("pii->pi", cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        return cov / (sd[:, :, None] * sd[:, None, :])


def correlation_metrics(
    observed,
    simulated: Sequence[PathEnsemble],
    tickers: Sequence[str] | None = None,
    alpha: float = 0.05,
    bootstrap_b: int = 500,
    seed: int = 0,
) -> DependenceReport:
    obs = np.asarray(observed, dtype=float)
    d = obs.shape[1]
    if d < 2 or len(simulated) != d:
        raise DataError("correlation metrics need >= 2 assets and one ensemble per asset")
    tickers = list(tickers) if tickers is not None else [str(i) for i in range(d)]
    rho_obs = np.corrcoef(obs, rowvar=False)
    sim = np.stack([e.growth for e in simulated], axis=2)
    path_rho = _path_corrs(sim)
    iu = np.triu_indices(d, 1)
    mean_rho = np.nanmean(path_rho, axis=0)
    gap = rho_obs[iu] - mean_rho[iu]
    frob = float(np.sqrt(np.sum(gap**2)))
    mae = float(np.mean(np.abs(gap)))

    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(1,)))
    p = sim.shape[0]
    boots = np.empty(bootstrap_b)
    for r in range(bootstrap_b):
        m = np.nanmean(path_rho[rng.integers(0, p, p)], axis=0)
        boots[r] = np.sqrt(np.sum((rho_obs[iu] - m[iu]) ** 2))
    frob_se = float(np.std(boots, ddof=1)) if bootstrap_b > 1 else math.nan

    ks = {}
    for a, name in enumerate(tickers):
        passes = [ks_two_sample(obs[:, a], simulated[a].growth[i]).p_value >= alpha for i in range(p)]
        ks[name] = 100.0 * float(np.mean(passes))
    mean_rho_full = mean_rho.copy()
    np.fill_diagonal(mean_rho_full, 1.0)
    return DependenceReport(frob, frob_se, mae, ks, rho_obs, mean_rho_full)


# --------------------------------------------------------------------------- #
# Serialization
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class DependenceModel:
    kind: str  # sim | gaussian | student_t | vine | none
    tickers: tuple[str, ...]
    copula: EllipticalCopula | CVine | None = None
    sim_fits: dict[str, SimFit] = field(default_factory=dict)
    market: str | None = None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "tickers": list(self.tickers),
            "market": self.market,
            "copula": None if self.copula is None else self.copula.to_dict(),
            "sim_fits": {k: v.to_dict() for k, v in self.sim_fits.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "DependenceModel":
        kind = d["kind"]
        cop = d.get("copula")
        if cop is None:
            copula = None
        elif kind == "vine":
            copula = CVine.from_dict(cop)
        else:
            copula = EllipticalCopula.from_dict(cop)
        fits = {k: SimFit.from_dict(v) for k, v in d.get("sim_fits", {}).items()}
        return cls(kind, tuple(d["tickers"]), copula, fits, d.get("market"))

    @classmethod
    def from_json(cls, text: str) -> "DependenceModel":
        return cls.from_dict(json.loads(text))
