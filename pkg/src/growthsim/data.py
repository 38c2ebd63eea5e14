"""Price ingestion, excess growth rates and stylized-fact statistics.

Growth rates are annualized continuously compounded log returns in excess of a
constant risk-free rate::

    G_j = ln(P_j / P_{j-1}) / dt - r_f

so values carry year^-1 units (daily SPY values are O(1), not O(0.01)).
"""
from __future__ import annotations

import csv
import datetime as _dt
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from ._numerics import excess_kurtosis
from .errors import DataError, NumericError

TRADING_DAYS = 252
DEFAULT_DELTA_T = 1.0 / TRADING_DAYS


@dataclass(frozen=True)
class PriceSeries:
    ticker: str
    dates: tuple[_dt.date, ...]
    close: np.ndarray
    extra: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        close = np.asarray(self.close, dtype=float)
        object.__setattr__(self, "close", close)
        if len(self.dates) != close.size:
            raise DataError("dates and close prices differ in length")
        if close.size < 2:
            raise DataError(f"{self.ticker}: need at least 2 prices, got {close.size}")
        if not np.all(np.isfinite(close)) or np.any(close <= 0):
            raise DataError(f"{self.ticker}: close prices must be finite and positive")
        for a, b in zip(self.dates, self.dates[1:]):
            if not a < b:
                raise DataError(f"{self.ticker}: dates must be strictly increasing ({a} !< {b})")

    def __len__(self) -> int:
        return self.close.size


@dataclass(frozen=True)
class GrowthSeries:
    ticker: str
    values: np.ndarray
    delta_t: float = DEFAULT_DELTA_T
    risk_free: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise DataError("growth values must be one-dimensional")
        if not np.all(np.isfinite(values)):
            raise DataError(f"{self.ticker}: growth values must be finite")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size

    def slice(self, start: int, stop: int | None = None) -> "GrowthSeries":
        return GrowthSeries(self.ticker, self.values[start:stop], self.delta_t, self.risk_free)


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        if not (0.0 <= self.p_value <= 1.0):
            raise NumericError(f"p-value {self.p_value} outside [0, 1]")

    def reject_at(self, alpha: float = 0.05) -> bool:
        return self.p_value < alpha

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "p_value": self.p_value}


@dataclass(frozen=True)
class StatsSummary:
    mean_pct: float
    std_pct: float
    skewness: float
    excess_kurtosis: float
    jb: TestResult | None
    lb_raw: TestResult | None
    lb_abs: TestResult | None
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------- #
# Loading
# --------------------------------------------------------------------------- #
def load_price_series(path: str | Path, ticker: str | None = None) -> PriceSeries:
    """Read a ``date,close`` CSV (header required, extra columns kept as floats
    when numeric). Dates must be ISO-8601; rows are sorted by date."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"price file not found: {path}")
    ticker = ticker or path.stem

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        cols = [h.strip().lower() for h in header]
        if "date" not in cols or "close" not in cols:
            raise DataError(f"{path}: header must contain 'date' and 'close' columns")
        i_date, i_close = cols.index("date"), cols.index("close")
        others = [(i, c) for i, c in enumerate(cols) if i not in (i_date, i_close) and c]

        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(cols):
                raise DataError(f"{path}:{lineno}: expected {len(cols)} fields, got {len(row)}")
            try:
                d = _dt.date.fromisoformat(row[i_date].strip()[:10])
                px = float(row[i_close])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: cannot parse row ({exc})") from None
            if not math.isfinite(px) or px <= 0:
                raise DataError(f"{path}:{lineno}: close price must be positive, got {px}")
            rows.append((d, px, [row[i] for i, _ in others]))

    rows.sort(key=lambda r: r[0])
    for a, b in zip(rows, rows[1:]):
        if a[0] == b[0]:
            raise DataError(f"{path}: duplicate date {a[0].isoformat()}")

    extra = {}
    for k, (_, name) in enumerate(others):
        try:
            extra[name] = np.array([float(r[2][k]) for r in rows])
        except ValueError:
            continue  # non-numeric side columns are ignored
    return PriceSeries(
        ticker=ticker,
        dates=tuple(r[0] for r in rows),
        close=np.array([r[1] for r in rows]),
        extra=extra,
    )


def compute_growth_rates(
    prices: PriceSeries, r_f: float = 0.0, delta_t: float = DEFAULT_DELTA_T
) -> GrowthSeries:
    if delta_t <= 0:
        raise DataError("delta_t must be positive")
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ret = np.log(prices.close[1:] / prices.close[:-1])
    if not np.all(np.isfinite(log_ret)):
        raise NumericError(f"{prices.ticker}: non-finite log return")
    return GrowthSeries(prices.ticker, log_ret / delta_t - r_f, delta_t, r_f)


# --------------------------------------------------------------------------- #
# Statistics
# --------------------------------------------------------------------------- #
def _as_array(x) -> np.ndarray:
    if isinstance(x, GrowthSeries):
        return x.values
    return np.asarray(x, dtype=float)


def _moments(x: np.ndarray) -> tuple[float, float]:
    d = x - x.mean()
    m2 = np.mean(d * d)
    if m2 <= 0.0 or np.ptp(x) == 0:
        raise NumericError("zero variance: skewness and kurtosis undefined")
    skew = float(np.mean(d**3) / m2**1.5)
    return skew, excess_kurtosis(x)


def jarque_bera(g) -> TestResult:
    x = _as_array(g)
    if x.size < 8:
        raise DataError("Jarque-Bera needs at least 8 observations")
    s, k = _moments(x)
    jb = x.size / 6.0 * (s * s + k * k / 4.0)
    return TestResult(float(jb), float(stats.chi2.sf(jb, 2)))


def ljung_box(series, lag: int = 20) -> TestResult:
    x = _as_array(series)
    n = x.size
    if lag < 1 or lag >= n / 2:
        raise DataError(f"Ljung-Box lag must satisfy 1 <= lag < n/2 (lag={lag}, n={n})")
    d = x - x.mean()
    denom = np.dot(d, d)
    if denom <= 0.0 or np.ptp(x) == 0:
        raise NumericError("zero variance: Ljung-Box undefined")
    rho = np.array([np.dot(d[:-k], d[k:]) for k in range(1, lag + 1)]) / denom
    q = n * (n + 2) * np.sum(rho**2 / (n - np.arange(1, lag + 1)))
    return TestResult(float(q), float(stats.chi2.sf(q, lag)))


def descriptive_stats(g, lb_lag: int = 20) -> StatsSummary:
    """Table-style summary: annualized mean/std in percent, skewness, excess
    kurtosis, and JB / Ljung-Box (raw and absolute) results."""
    x = _as_array(g)
    if x.size < 4:
        raise DataError("descriptive_stats needs at least 4 observations")
    skew, kurt = _moments(x)
    jb = jarque_bera(x) if x.size >= 8 else None
    lb_ok = lb_lag < x.size / 2
    lb_raw = ljung_box(x, lb_lag) if lb_ok else None
    lb_abs = None
    if lb_ok and np.ptp(np.abs(x)) > 0:
        lb_abs = ljung_box(np.abs(x), lb_lag)
    return StatsSummary(
        mean_pct=100.0 * float(x.mean()),
        std_pct=100.0 * float(x.std(ddof=1)),
        skewness=skew,
        excess_kurtosis=kurt,
        jb=jb,
        lb_raw=lb_raw,
        lb_abs=lb_abs,
        n=int(x.size),
    )


def reference_fits(g) -> dict[str, dict[str, float]]:
    """Moments implied by the Gaussian and Laplace MLE fits (comparison columns).

    The Laplace mean is reported as the fitted location; this is not adjusted
    to reproduce any published annualized figure.
    """
    from .hmm import fit_laplace_mle

    x = _as_array(g)
    lap = fit_laplace_mle(x)
    return {
        "gaussian": {
            "mean_pct": 100.0 * float(x.mean()),
            "std_pct": 100.0 * float(x.std(ddof=0)),
            "skewness": 0.0,
            "excess_kurtosis": 0.0,
        },
        "laplace": {
            "mean_pct": 100.0 * lap.mu,
            "std_pct": 100.0 * math.sqrt(2.0) * lap.b,
            "skewness": 0.0,
            "excess_kurtosis": 3.0,
        },
    }
