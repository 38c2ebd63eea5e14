"""Two-sample distribution tests, distances, ACF error, quantile coverage and
ensemble-level aggregation with standard errors."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from ._numerics import excess_kurtosis
from .calibrate import DEFAULT_MAX_LAG, acf_rows, sample_acf
from .data import GrowthSeries, TestResult
from .errors import DataError, NumericError
from .simulate import PathEnsemble

PROBES = np.arange(1, 100)
HELLINGER_BINS = 50

# Standardized two-sample AD critical points, t = b0 + b1/sqrt(m) + b2/m with m = k - 1.
_AD_SIG = np.array([0.25, 0.1, 0.05, 0.025, 0.01, 0.005, 0.001])
_AD_B0 = np.array([0.675, 1.281, 1.645, 1.96, 2.326, 2.573, 3.085])
_AD_B1 = np.array([-0.245, 0.25, 0.678, 1.149, 1.822, 2.364, 3.615])
_AD_B2 = np.array([-0.105, -0.305, -0.362, -0.391, -0.396, -0.345, -0.154])


def _vec(a, name: str, min_n: int = 1) -> np.ndarray:
    x = a.values if isinstance(a, GrowthSeries) else np.asarray(a, dtype=float).ravel()
    if x.size < min_n:
        raise DataError(f"{name} needs at least {min_n} value(s), got {x.size}")
    return x


# --------------------------------------------------------------------------- #
# Tests and distances
# --------------------------------------------------------------------------- #
def ks_two_sample(a, b) -> TestResult:
    """sup |F_a - F_b| with the asymptotic Kolmogorov p-value at sqrt(nm/(n+m)) D."""
    x, y = np.sort(_vec(a, "ks a")), np.sort(_vec(b, "ks b"))
    n, m = x.size, y.size
    pooled = np.concatenate([x, y])
    # integer numerator so D is a single correctly rounded division
    gap = np.abs(np.searchsorted(x, pooled, side="right") * m - np.searchsorted(y, pooled, side="right") * n)
    d = int(gap.max()) / (n * m)
    lam = math.sqrt(n * m / (n + m)) * d
    p = float(np.clip(special.kolmogorov(lam), 0.0, 1.0))
    return TestResult(d, p)


def _ad_critical(m: int = 1) -> np.ndarray:
    return _AD_B0 + _AD_B1 / math.sqrt(m) + _AD_B2 / m


def _ad_sigma(ns: np.ndarray) -> float:
    k, n = ns.size, float(ns.sum())
    big_h = float(np.sum(1.0 / ns))
    i = np.arange(1, int(n))
    h = float(np.sum(1.0 / i))
    # g = sum_{i=1}^{N-2} sum_{j=i+1}^{N-1} 1/((N-i) j) = sum_i (h_{N-1} - h_i)/(N - i)
    hs = np.cumsum(1.0 / i)
    g = float(np.sum((hs[-1] - hs[:-1]) / (n - i[:-1])))
    a = (4 * g - 6) * (k - 1) + (10 - 6 * g) * big_h
    b = (2 * g - 4) * k**2 + 8 * h * k + (2 * g - 14 * h - 4) * big_h - 8 * h + 4 * g - 6
    c = (6 * h + 2 * g - 2) * k**2 + (4 * h - 4 * g + 6) * k + (2 * h - 6) * big_h + 4 * h
    d = (2 * h + 6) * k**2 - 4 * h * k
    var = (a * n**3 + b * n**2 + c * n + d) / ((n - 1) * (n - 2) * (n - 3))
    return math.sqrt(var)


def ad_two_sample(a, b) -> TestResult:
    """Scholz-Stephens k-sample Anderson-Darling (midrank form, k = 2).

    The statistic returned is the standardized ``(A2 - 1) / sigma``; the
    p-value interpolates ``log(alpha)`` linearly between tabulated critical
    points and is capped to [0.001, 0.25] outside the table.
    """
    samples = [_vec(a, "ad a", 2), _vec(b, "ad b", 2)]
    ns = np.array([s.size for s in samples], dtype=float)
    n = ns.sum()
    pooled = np.concatenate(samples)
    z, l = np.unique(pooled, return_counts=True)
    if z.size < 2:
        raise NumericError("Anderson-Darling undefined: all values identical")
    b_j = np.cumsum(l) - l / 2.0
    denom = b_j * (n - b_j) - n * l / 4.0
    a2 = 0.0
    for s, ni in zip(samples, ns):
        s = np.sort(s)
        f = np.searchsorted(s, z, side="right") - np.searchsorted(s, z, side="left")
        m_ij = np.cumsum(f) - f / 2.0
        a2 += np.sum(l / n * (n * m_ij - ni * b_j) ** 2 / denom) / ni
    a2 *= (n - 1) / n
    k = len(samples)
    t = (a2 - (k - 1)) / _ad_sigma(ns)
    crit = _ad_critical(k - 1)
    if t <= crit[0]:
        p = float(_AD_SIG[0])
    elif t >= crit[-1]:
        p = float(_AD_SIG[-1])
    else:
        p = float(np.exp(np.interp(t, crit, np.log(_AD_SIG))))
    return TestResult(float(t), p)


def wasserstein1(a, b) -> float:
    """Integral of |F_a^-1(u) - F_b^-1(u)| du over the step quantile functions."""
    x, y = np.sort(_vec(a, "w1 a")), np.sort(_vec(b, "w1 b"))
    if x.size == y.size:
        return float(np.mean(np.abs(x - y)))
    # merge the quantile-function breakpoints k/n and k/m
    u = np.union1d(np.arange(1, x.size) / x.size, np.arange(1, y.size) / y.size)
    edges = np.concatenate([[0.0], u, [1.0]])
    mid = 0.5 * (edges[:-1] + edges[1:])
    qx = x[np.minimum((mid * x.size).astype(np.int64), x.size - 1)]
    qy = y[np.minimum((mid * y.size).astype(np.int64), y.size - 1)]
    return float(np.sum(np.diff(edges) * np.abs(qx - qy)))


def hellinger_from_masses(p, q) -> float:
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    h = math.sqrt(0.5 * float(np.sum((np.sqrt(p) - np.sqrt(q)) ** 2)))
    return min(h, 1.0)


def hellinger(a, b, bins: int = HELLINGER_BINS) -> float:
    x, y = _vec(a, "hellinger a"), _vec(b, "hellinger b")
    lo, hi = min(x.min(), y.min()), max(x.max(), y.max())
    if hi == lo:
        return 0.0  # both samples are the same single value
    p, _ = np.histogram(x, bins=bins, range=(lo, hi))
    q, _ = np.histogram(y, bins=bins, range=(lo, hi))
    return hellinger_from_masses(p / x.size, q / y.size)


def acf_mae(observed, simulated, max_lag: int = DEFAULT_MAX_LAG) -> float:
    """Mean absolute gap between ACFs of |observed| and |simulated|.

    ``simulated`` may be a single series or a (paths, horizon) matrix; for a
    matrix the cross-path mean ACF is compared.
    """
    obs = sample_acf(np.abs(_vec(observed, "observed")), max_lag).values
    sim = np.atleast_2d(
        simulated.growth if isinstance(simulated, PathEnsemble) else np.asarray(simulated, dtype=float)
    )
    rows = acf_rows(np.abs(sim), max_lag)
    ok = ~np.isnan(rows[:, 0])
    if not ok.any():
        raise NumericError("zero variance: simulated autocorrelation undefined")
    return float(np.mean(np.abs(obs - rows[ok].mean(axis=0))))


@dataclass(frozen=True)
class QuantileEnvelope:
    probes: np.ndarray
    observed: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def inside(self) -> np.ndarray:
        return (self.observed >= self.lower) & (self.observed <= self.upper)


def _path_quantiles(growth: np.ndarray) -> np.ndarray:
    return np.quantile(growth, PROBES / 100.0, axis=1)  # (99, P)


def _envelope_coverage(obs_q: np.ndarray, path_q: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    lower, upper = np.percentile(path_q, [5.0, 95.0], axis=1)
    inside = (obs_q >= lower) & (obs_q <= upper)
    return 100.0 * float(inside.mean()), lower, upper


def quantile_coverage(observed, ensemble: PathEnsemble | np.ndarray) -> tuple[float, QuantileEnvelope]:
    x = _vec(observed, "observed")
    g = ensemble.growth if isinstance(ensemble, PathEnsemble) else np.atleast_2d(ensemble)
    if g.shape[0] == 0:
        raise DataError("empty ensemble")
    obs_q = np.quantile(x, PROBES / 100.0)
    pct, lower, upper = _envelope_coverage(obs_q, _path_quantiles(g))
    return pct, QuantileEnvelope(PROBES.copy(), obs_q, lower, upper)


# --------------------------------------------------------------------------- #
# Ensemble report
# --------------------------------------------------------------------------- #
PER_PATH_FIELDS = ("ks_stat", "ks_p", "ad_stat", "ad_p", "w1", "hellinger", "kurtosis")


@dataclass(frozen=True)
class MetricReport:
    label: str
    alpha: float
    n_paths: int
    horizon: int
    ks_pass_rate: float
    ks_pass_se: float
    ad_pass_rate: float
    ad_pass_se: float
    mean_w1: float
    w1_se: float
    mean_hellinger: float
    hellinger_se: float
    mean_kurtosis: float
    kurtosis_se: float
    observed_kurtosis: float
    acf_mae: float
    acf_mae_se: float
    acf_max_lag: int
    coverage_pct: float
    coverage_se: float
    jump_fraction: float | None = None
    jump_report: "MetricReport | None" = None
    per_path: dict = field(default_factory=dict, repr=False, compare=False)
    contains_jump: np.ndarray | None = field(default=None, repr=False, compare=False)
    observed_acf: np.ndarray | None = field(default=None, repr=False, compare=False)
    simulated_acf: np.ndarray | None = field(default=None, repr=False, compare=False)
    envelope: QuantileEnvelope | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        keys = (
            "label", "alpha", "n_paths", "horizon", "ks_pass_rate", "ks_pass_se", "ad_pass_rate",
            "ad_pass_se", "mean_w1", "w1_se", "mean_hellinger", "hellinger_se", "mean_kurtosis",
            "kurtosis_se", "observed_kurtosis", "acf_mae", "acf_mae_se", "acf_max_lag",
            "coverage_pct", "coverage_se", "jump_fraction",
        )
        out = {k: _finite_or_none(getattr(self, k)) for k in keys}
        out["jump_report"] = self.jump_report.to_dict() if self.jump_report else None
        return out

    def table_row(self) -> dict:
        """Pass rates, distances and ACF/coverage as 'value (se)' strings."""
        def fmt(v, se, digits):
            if v is None or not math.isfinite(v):
                return "NA"
            s = "NA" if se is None or not math.isfinite(se) else f"{se:.{digits}f}"
            return f"{v:.{digits}f} ({s})"

        return {
            "model": self.label,
            "KS pass %": fmt(self.ks_pass_rate, self.ks_pass_se, 1),
            "AD pass %": fmt(self.ad_pass_rate, self.ad_pass_se, 1),
            "W1": fmt(self.mean_w1, self.w1_se, 3),
            "Hellinger": fmt(self.mean_hellinger, self.hellinger_se, 3),
            "Kurtosis": fmt(self.mean_kurtosis, self.kurtosis_se, 2),
            "ACF-MAE": fmt(self.acf_mae, self.acf_mae_se, 3),
            "Coverage %": fmt(self.coverage_pct, self.coverage_se, 1),
        }

    def write_per_path_csv(self, path: str | Path) -> None:
        n = self.n_paths
        jumps = self.contains_jump if self.contains_jump is not None else np.zeros(n, dtype=bool)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("path_id", "contains_jump") + PER_PATH_FIELDS)
            for i in range(n):
                w.writerow([i, int(jumps[i])] + [repr(float(self.per_path[k][i])) for k in PER_PATH_FIELDS])


def _finite_or_none(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _binomial(passes: np.ndarray) -> tuple[float, float]:
    p = float(passes.mean())
    return 100.0 * p, 100.0 * math.sqrt(p * (1.0 - p) / passes.size)


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    x = x[np.isfinite(x)]
    if x.size == 0:
        return math.nan, math.nan
    se = float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.nan
    return float(x.mean()), se


def _path_metrics(x: np.ndarray, g: np.ndarray) -> tuple[float, ...]:
    ks = ks_two_sample(x, g)
    try:
        ad = ad_two_sample(x, g)
        ad_vals = (ad.statistic, ad.p_value)
    except NumericError:
        ad_vals = (math.nan, 0.0)
    return (ks.statistic, ks.p_value, *ad_vals, wasserstein1(x, g), hellinger(x, g), excess_kurtosis(g))


def evaluate_ensemble(
    observed,
    ensemble: PathEnsemble,
    alpha: float = 0.05,
    bootstrap_b: int = 500,
    seed: int = 0,
    max_lag: int = DEFAULT_MAX_LAG,
    trim: bool = True,
    label: str | None = None,
    workers: int = 1,
    jump_subreport: bool = True,
) -> MetricReport:
    """Per-path tests and distances aggregated to a Table-2 style row.

    Paths longer than the observed series are cut to its length when ``trim``
    is set. The ACF lag window shrinks to ``len - 1`` for short windows.
    Bootstrap SEs resample whole paths with a generator seeded by ``seed``.
    """
    x = _vec(observed, "observed", 4)
    if not 0 < alpha < 1:
        raise DataError("alpha must lie in (0, 1)")
    if trim and ensemble.horizon > x.size:
        ensemble = ensemble.trim(x.size)
    g = ensemble.growth
    n_paths, horizon = g.shape
    lag = min(max_lag, x.size - 1, horizon - 1)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(lambda i: _path_metrics(x, g[i]), range(n_paths)))
    else:
        rows = [_path_metrics(x, g[i]) for i in range(n_paths)]
    per = {k: np.array([r[j] for r in rows], dtype=float) for j, k in enumerate(PER_PATH_FIELDS)}

    ks_rate, ks_se = _binomial(per["ks_p"] >= alpha)
    ad_rate, ad_se = _binomial(per["ad_p"] >= alpha)
    w1, w1_se = _mean_se(per["w1"])
    hel, hel_se = _mean_se(per["hellinger"])
    kurt, kurt_se = _mean_se(per["kurtosis"])

    obs_acf = sample_acf(np.abs(x), lag).values
    path_acf = acf_rows(np.abs(g), lag)
    ok = ~np.isnan(path_acf[:, 0])
    if not ok.any():
        raise NumericError("every simulated path has zero variance")
    sim_acf = path_acf[ok].mean(axis=0)
    mae = float(np.mean(np.abs(obs_acf - sim_acf)))
    obs_q = np.quantile(x, PROBES / 100.0)
    path_q = _path_quantiles(g)
    cov, lower, upper = _envelope_coverage(obs_q, path_q)

    # canonical path order so the bootstrap SE does not depend on path labels
    canon = np.lexsort(g[:, :8].T[::-1])
    path_acf, path_q, ok = path_acf[canon], path_q[:, canon], ok[canon]
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(0,)))
    boot_mae = np.empty(bootstrap_b)
    boot_cov = np.empty(bootstrap_b)
    valid = np.flatnonzero(ok)
    for r in range(bootstrap_b):
        idx = rng.integers(0, n_paths, n_paths)
        keep = idx[ok[idx]] if valid.size else idx
        boot_mae[r] = np.mean(np.abs(obs_acf - path_acf[keep].mean(axis=0))) if keep.size else np.nan
        boot_cov[r] = _envelope_coverage(obs_q, path_q[:, idx])[0]
    mae_se = float(np.nanstd(boot_mae, ddof=1)) if bootstrap_b > 1 else math.nan
    cov_se = float(np.std(boot_cov, ddof=1)) if bootstrap_b > 1 else math.nan

    jumps = ensemble.contains_jump
    has_meta = ensemble.states is not None
    jump_report = None
    if jump_subreport and has_meta and jumps.any():
        jump_report = evaluate_ensemble(
            x, ensemble.subset(jumps), alpha, bootstrap_b, seed, max_lag, False,
            f"{label or ensemble.kind} (jump paths)", workers, jump_subreport=False,
        )

    return MetricReport(
        label=label or ensemble.kind,
        alpha=alpha,
        n_paths=n_paths,
        horizon=horizon,
        ks_pass_rate=ks_rate,
        ks_pass_se=ks_se,
        ad_pass_rate=ad_rate,
        ad_pass_se=ad_se,
        mean_w1=w1,
        w1_se=w1_se,
        mean_hellinger=hel,
        hellinger_se=hel_se,
        mean_kurtosis=kurt,
        kurtosis_se=kurt_se,
        observed_kurtosis=excess_kurtosis(x),
        acf_mae=mae,
        acf_mae_se=mae_se,
        acf_max_lag=lag,
        coverage_pct=cov,
        coverage_se=cov_se,
        jump_fraction=float(jumps.mean()) if has_meta else None,
        jump_report=jump_report,
        per_path=per,
        contains_jump=jumps,
        observed_acf=obs_acf,
        simulated_acf=sim_acf,
        envelope=QuantileEnvelope(PROBES.copy(), obs_q, lower, upper),
    )
