"""Empirical hidden Markov model built by quantile partitioning.

A Laplace fit to the growth rates defines ``N`` equal-probability bins; each
observation is assigned to the bin it falls in (``Q_{k-1} < g <= Q_k``), the
transition matrix is the row-normalized count of consecutive bin pairs, and
each bin carries a location-scale Student-t emission. No EM is involved.

State labels are 1-based (``1..N``) everywhere in the public API.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import GrowthSeries
from .errors import DataError, NumericError

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
DEFAULT_NU = 5.0
STATIONARY_ITERATIONS = 50
OUTER_QUANTILE = 0.001


class EstimationWarning(UserWarning):
    """Degenerate-state fallbacks during model construction."""


@dataclass(frozen=True)
class LaplaceFit:
    mu: float
    b: float

    def __post_init__(self):
        if not self.b > 0:
            raise DataError(f"Laplace scale must be positive, got {self.b}")


@dataclass(frozen=True)
class QuantilePartition:
    n_states: int
    boundaries: np.ndarray  # Q_0 < Q_1 < ... < Q_N

    @property
    def interior(self) -> np.ndarray:
        return self.boundaries[1:-1]

    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.boundaries[:-1] + self.boundaries[1:])


@dataclass(frozen=True)
class TransitionMatrix:
    n_states: int
    rows: np.ndarray
    counts: np.ndarray
    unvisited: tuple[int, ...] = ()  # 1-based rows replaced by uniform


@dataclass(frozen=True)
class EmissionTable:
    mu: np.ndarray
    sigma: np.ndarray
    nu: float
    support_count: np.ndarray
    fallback_states: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.nu > 2:
            raise DataError(f"emission degrees of freedom must exceed 2, got {self.nu}")
        if np.any(self.sigma < 0):
            raise DataError("emission scales must be nonnegative")


@dataclass(frozen=True)
class HmmModel:
    laplace: LaplaceFit
    partition: QuantilePartition
    transitions: TransitionMatrix
    emissions: EmissionTable
    stationary: np.ndarray
    stationary_residual: float
    ticker: str = ""
    warnings: tuple[str, ...] = field(default=())

    @property
    def n_states(self) -> int:
        return self.partition.n_states

    @property
    def nu(self) -> float:
        return self.emissions.nu

    # -- serialization ------------------------------------------------------ #
    def to_dict(self) -> dict:
        nu = self.emissions.nu
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "ticker": self.ticker,
            "n_states": self.n_states,
            "nu": "inf" if math.isinf(nu) else nu,
            "laplace": {"mu": self.laplace.mu, "b": self.laplace.b},
            "boundaries": self.partition.boundaries.tolist(),
            "counts": self.transitions.counts.tolist(),
            "rows": self.transitions.rows.tolist(),
            "unvisited": list(self.transitions.unvisited),
            "emissions": {
                "mu": self.emissions.mu.tolist(),
                "sigma": self.emissions.sigma.tolist(),
                "support_count": self.emissions.support_count.tolist(),
                "fallback_states": list(self.emissions.fallback_states),
            },
            "stationary": self.stationary.tolist(),
            "stationary_residual": self.stationary_residual,
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "HmmModel":
        if d.get("format_version") != MODEL_FORMAT_VERSION:
            raise DataError(f"unsupported model format version {d.get('format_version')!r}")
        n = int(d["n_states"])
        nu = math.inf if d["nu"] == "inf" else float(d["nu"])
        em = d["emissions"]
        return cls(
            laplace=LaplaceFit(float(d["laplace"]["mu"]), float(d["laplace"]["b"])),
            partition=QuantilePartition(n, np.array(d["boundaries"], dtype=float)),
            transitions=TransitionMatrix(
                n,
                np.array(d["rows"], dtype=float),
                np.array(d["counts"], dtype=np.int64),
                tuple(d.get("unvisited", ())),
            ),
            emissions=EmissionTable(
                np.array(em["mu"], dtype=float),
                np.array(em["sigma"], dtype=float),
                nu,
                np.array(em["support_count"], dtype=np.int64),
                tuple(em.get("fallback_states", ())),
            ),
            stationary=np.array(d["stationary"], dtype=float),
            stationary_residual=float(d["stationary_residual"]),
            ticker=d.get("ticker", ""),
            warnings=tuple(d.get("warnings", ())),
        )

    @classmethod
    def from_json(cls, text: str) -> "HmmModel":
        return cls.from_dict(json.loads(text))

    def model_id(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


# --------------------------------------------------------------------------- #
def _values(g) -> np.ndarray:
    return g.values if isinstance(g, GrowthSeries) else np.asarray(g, dtype=float)


def fit_laplace_mle(g) -> LaplaceFit:
    """Location = sample median, scale = mean absolute deviation from it."""
    x = _values(g)
    if x.size < 2:
        raise DataError("Laplace fit needs at least 2 observations")
    mu = float(np.median(x))
    b = float(np.mean(np.abs(x - mu)))
    if b == 0.0:
        raise DataError("all observations identical; Laplace scale is zero")
    return LaplaceFit(mu, b)


def laplace_quantile(fit: LaplaceFit, q):
    q_arr = np.asarray(q, dtype=float)
    if np.any((q_arr <= 0) | (q_arr >= 1)):
        raise DataError("Laplace quantile level must lie in (0, 1)")
    out = np.where(
        q_arr <= 0.5,
        fit.mu + fit.b * np.log(2.0 * q_arr),
        fit.mu - fit.b * np.log(2.0 * (1.0 - q_arr)),
    )
    return float(out) if out.ndim == 0 else out


def laplace_cdf(fit: LaplaceFit, x):
    z = (np.asarray(x, dtype=float) - fit.mu) / fit.b
    return np.where(z < 0, 0.5 * np.exp(z), 1.0 - 0.5 * np.exp(-z))


def build_partition(fit: LaplaceFit, n_states: int) -> QuantilePartition:
    """Interior boundaries at the k/N Laplace quantiles; finite outer bounds.

    Outer bounds sit at the 0.001 / 0.999 quantiles, pushed further out when
    1/N would collide with them (N >= 1000).
    """
    if n_states < 2:
        raise DataError(f"need at least 2 states, got {n_states}")
    q_out = min(OUTER_QUANTILE, 0.5 / n_states)
    levels = np.concatenate(
        [[q_out], np.arange(1, n_states) / n_states, [1.0 - q_out]]
    )
    bounds = laplace_quantile(fit, levels)
    if not np.all(np.diff(bounds) > 0):
        raise NumericError("quantile boundaries not strictly increasing")
    return QuantilePartition(n_states, bounds)


def encode_states(g, partition: QuantilePartition) -> np.ndarray:
    """Map values to 1-based states; out-of-range values clamp to 1 or N."""
    x = _values(g)
    return np.searchsorted(partition.interior, x, side="left").astype(np.int64) + 1


def estimate_transitions(states, n_states: int) -> TransitionMatrix:
    s = np.asarray(states, dtype=np.int64)
    if s.size < 2:
        raise DataError("need at least 2 states to count transitions")
    if s.min() < 1 or s.max() > n_states:
        raise DataError("state labels outside 1..N")
    counts = np.zeros((n_states, n_states), dtype=np.int64)
    np.add.at(counts, (s[:-1] - 1, s[1:] - 1), 1)
    totals = counts.sum(axis=1)
    rows = np.empty((n_states, n_states))
    visited = totals > 0
    rows[visited] = counts[visited] / totals[visited, None]
    rows[~visited] = 1.0 / n_states
    unvisited = tuple(int(i) + 1 for i in np.flatnonzero(~visited))
    if unvisited:
        warnings.warn(
            f"{len(unvisited)} state(s) never left in the sample, rows set uniform: {unvisited[:10]}",
            EstimationWarning,
            stacklevel=2,
        )
    return TransitionMatrix(n_states, rows, counts, unvisited)


def estimate_emissions(
    g,
    states,
    n_states: int,
    nu: float = DEFAULT_NU,
    partition: QuantilePartition | None = None,
) -> EmissionTable:
    """Per-state sample mean and (n-1) standard deviation.

    States with fewer than two observations fall back to the bin midpoint
    (when ``partition`` is given) and the pooled standard deviation.
    """
    x = _values(g)
    s = np.asarray(states, dtype=np.int64)
    if s.size != x.size:
        raise DataError("states and observations are not aligned")
    count = np.bincount(s - 1, minlength=n_states)
    sums = np.bincount(s - 1, weights=x, minlength=n_states)
    mu = np.zeros(n_states)
    sigma = np.zeros(n_states)
    ok = count >= 2
    mu[count > 0] = sums[count > 0] / count[count > 0]
    dev = x - mu[s - 1]
    ss = np.bincount(s - 1, weights=dev * dev, minlength=n_states)
    sigma[ok] = np.sqrt(ss[ok] / (count[ok] - 1))

    fallback = tuple(int(k) + 1 for k in np.flatnonzero(~ok))
    if fallback:
        pooled = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
        mids = partition.midpoints() if partition is not None else None
        for k in fallback:
            if mids is not None:
                mu[k - 1] = mids[k - 1]
            sigma[k - 1] = pooled
        warnings.warn(
            f"{len(fallback)} state(s) with <2 observations use fallback emissions: {fallback[:10]}",
            EstimationWarning,
            stacklevel=2,
        )
    return EmissionTable(mu, sigma, float(nu), count.astype(np.int64), fallback)


def stationary_distribution(t, n_iter: int = STATIONARY_ITERATIONS) -> np.ndarray:
    """Propagate the uniform distribution through ``n_iter`` steps of ``T``."""
    rows = t.rows if isinstance(t, TransitionMatrix) else np.asarray(t, dtype=float)
    n = rows.shape[0]
    if rows.shape != (n, n) or np.any(rows < 0) or not np.allclose(rows.sum(axis=1), 1.0, atol=1e-9):
        raise NumericError("transition matrix is not row-stochastic")
    pi = np.full(n, 1.0 / n)
    for _ in range(n_iter):
        pi = pi @ rows
    return pi / pi.sum()


def stationary_residual(pi: np.ndarray, t) -> float:
    rows = t.rows if isinstance(t, TransitionMatrix) else np.asarray(t, dtype=float)
    return float(np.max(np.abs(pi @ rows - pi)))


def fit_model(g, n_states: int = 100, nu: float = DEFAULT_NU) -> HmmModel:
    x = _values(g)
    ticker = g.ticker if isinstance(g, GrowthSeries) else ""
    if x.size < n_states:
        raise DataError(f"series of length {x.size} too short for {n_states} states")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", EstimationWarning)
        lap = fit_laplace_mle(x)
        part = build_partition(lap, n_states)
        states = encode_states(x, part)
        trans = estimate_transitions(states, n_states)
        em = estimate_emissions(x, states, n_states, nu, part)
    notes = tuple(str(w.message) for w in caught if issubclass(w.category, EstimationWarning))
    for msg in notes:
        log.warning("%s: %s", ticker or "series", msg)
        warnings.warn(msg, EstimationWarning, stacklevel=2)
    pi = stationary_distribution(trans)
    return HmmModel(
        laplace=lap,
        partition=part,
        transitions=trans,
        emissions=em,
        stationary=pi,
        stationary_residual=stationary_residual(pi, trans),
        ticker=ticker,
        warnings=notes,
    )
