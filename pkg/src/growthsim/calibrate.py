"""Autocorrelation, the ACF + kurtosis calibration objective, and the
(epsilon, lambda) grid search for the jump mechanism."""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import fft as sp_fft

from ._numerics import excess_kurtosis, excess_kurtosis_rows
from .data import GrowthSeries
from .errors import ConfigError, DataError, NumericError
from .hmm import EstimationWarning, HmmModel, fit_model
from .simulate import JumpConfig, PathEnsemble, simulate_ensemble

log = logging.getLogger(__name__)

DEFAULT_MAX_LAG = 252
DEFAULT_EPSILONS = (1e-4, 2.5e-4, 5e-4, 1e-3, 2.5e-3, 5e-3, 1e-2, 2.5e-2)
DEFAULT_LAMBDAS = (10.0, 25.0, 40.0, 55.0, 70.0, 85.0, 100.0, 130.0, 160.0)


class DegeneratePathWarning(UserWarning):
    """Simulated paths with zero variance were left out of an average."""


@dataclass(frozen=True)
class AcfVector:
    values: np.ndarray  # rho(1..L)

    @property
    def max_lag(self) -> int:
        return self.values.size

    @property
    def lags(self) -> np.ndarray:
        return np.arange(1, self.values.size + 1)


def acf_rows(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased sample ACF, lags 1..max_lag, for each row of ``x``.

    Rows with zero variance come back as NaN.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[1]
    if not 1 <= max_lag < n:
        raise DataError(f"max_lag must satisfy 1 <= max_lag < length (max_lag={max_lag}, n={n})")
    d = x - x.mean(axis=1, keepdims=True)
    nfft = sp_fft.next_fast_len(2 * n)
    f = sp_fft.rfft(d, nfft, axis=1)
    ac = sp_fft.irfft(f.real**2 + f.imag**2, nfft, axis=1)[:, : max_lag + 1]
    c0 = np.einsum("ij,ij->i", d, d)  # exact lag-0 sum, not the FFT estimate
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ac[:, 1:] / c0[:, None]
    out[(c0 <= 0.0) | (np.ptp(x, axis=1) == 0)] = np.nan
    return np.clip(out, -1.0, 1.0)


def sample_acf(series, max_lag: int = DEFAULT_MAX_LAG) -> AcfVector:
    x = series.values if isinstance(series, GrowthSeries) else np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise DataError("sample_acf expects a one-dimensional series")
    rho = acf_rows(x, max_lag)[0]
    if np.isnan(rho[0]):
        raise NumericError("zero variance: autocorrelation undefined")
    return AcfVector(rho)


def ensemble_abs_acf(growth: np.ndarray, max_lag: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-path ACF of |G| and the mask of usable (non-degenerate) paths."""
    rows = acf_rows(np.abs(growth), max_lag)
    return rows, ~np.isnan(rows[:, 0])


def objective(
    obs_acf: AcfVector,
    obs_kurtosis: float,
    ensemble: PathEnsemble | np.ndarray,
    w_k: float = 0.2,
) -> float:
    """Squared gap between the observed ACF of |G| and the ensemble-mean ACF,
    plus ``w_k`` times the squared gap in mean excess kurtosis."""
    g = ensemble.growth if isinstance(ensemble, PathEnsemble) else np.atleast_2d(ensemble)
    if g.shape[0] == 0:
        raise DataError("empty ensemble")
    if w_k < 0:
        raise ConfigError("w_k must be nonnegative")
    rows, ok = ensemble_abs_acf(g, obs_acf.max_lag)
    kurt = excess_kurtosis_rows(g)
    ok &= np.isfinite(kurt)
    n_bad = int((~ok).sum())
    if n_bad:
        msg = f"{n_bad} of {g.shape[0]} simulated paths have zero variance and were skipped"
        log.warning(msg)
        warnings.warn(msg, DegeneratePathWarning, stacklevel=2)
    if not ok.any():
        return math.inf
    mean_acf = rows[ok].mean(axis=0)
    acf_term = float(np.sum((obs_acf.values - mean_acf) ** 2))
    kurt_term = (obs_kurtosis - float(kurt[ok].mean())) ** 2
    return acf_term + w_k * kurt_term


# --------------------------------------------------------------------------- #
# Grid search
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class GridSpec:
    epsilons: tuple[float, ...] = DEFAULT_EPSILONS
    lambdas: tuple[float, ...] = DEFAULT_LAMBDAS
    paths_per_point: int = 200
    horizon: int | None = None  # None -> length of the observed series
    w_k: float = 0.2
    max_lag: int = DEFAULT_MAX_LAG

    def validate(self) -> "GridSpec":
        for name, axis in (("epsilons", self.epsilons), ("lambdas", self.lambdas)):
            a = np.asarray(axis, dtype=float)
            if a.size == 0:
                raise ConfigError(f"grid {name} is empty")
            if np.any(a <= 0) or np.any(np.diff(a) <= 0):
                raise ConfigError(f"grid {name} must be positive and strictly increasing")
        if self.epsilons[-1] > 1:
            raise ConfigError("grid epsilons must not exceed 1")
        if self.paths_per_point < 1:
            raise ConfigError("paths_per_point must be at least 1")
        if self.w_k < 0:
            raise ConfigError("w_k must be nonnegative")
        if self.horizon is not None and self.horizon <= self.max_lag:
            raise ConfigError("grid horizon must exceed max_lag")
        return self

    def to_dict(self) -> dict:
        return {
            "epsilons": list(self.epsilons),
            "lambdas": list(self.lambdas),
            "paths_per_point": self.paths_per_point,
            "horizon": self.horizon,
            "w_k": self.w_k,
            "max_lag": self.max_lag,
        }


@dataclass(frozen=True)
class GridResult:
    epsilons: np.ndarray
    lambdas: np.ndarray
    surface: np.ndarray  # (len(epsilons), len(lambdas))
    best: tuple[float, float, float]
    best_index: tuple[int, int]
    boundary_flags: dict = field(default_factory=dict)
    seed: int = 0

    def to_rows(self) -> list[tuple[float, float, float]]:
        return [
            (float(e), float(l), float(self.surface[i, j]))
            for i, e in enumerate(self.epsilons)
            for j, l in enumerate(self.lambdas)
        ]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epsilon", "lambda", "J"])
            for e, l, j in self.to_rows():
                w.writerow([repr(e), repr(l), repr(j)])

    def best_record(self) -> dict:
        e, l, j = self.best
        return {
            "epsilon": e,
            "lambda": l,
            "J": j,
            "index": list(self.best_index),
            "boundary": self.boundary_flags,
            "seed": self.seed,
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.best_record(), sort_keys=True, indent=1), encoding="utf-8")


def argmin_surface(surface: np.ndarray) -> tuple[int, int]:
    """Row-major first minimum: smallest epsilon wins ties, then smallest lambda."""
    s = np.asarray(surface, dtype=float)
    if not np.isfinite(s).any():
        raise NumericError("grid surface has no finite value")
    flat = np.where(np.isnan(s), np.inf, s).ravel()
    i, j = np.unravel_index(int(np.argmin(flat)), s.shape)
    return int(i), int(j)


def _boundary(i: int, j: int, shape: tuple[int, int]) -> dict:
    return {
        "epsilon_lower": i == 0,
        "epsilon_upper": i == shape[0] - 1,
        "lambda_lower": j == 0,
        "lambda_upper": j == shape[1] - 1,
    }


def grid_search(
    model: HmmModel | None,
    observed,
    spec: GridSpec = GridSpec(),
    seed: int = 0,
    base_jump: JumpConfig = JumpConfig(),
    cell_objective: Callable[[float, float], float] | None = None,
    workers: int = 1,
) -> GridResult:
    """Evaluate the objective at every (epsilon, lambda) cell and take the argmin.

    Cell ``(i, j)`` draws its paths from streams ``(seed, i, j, path)``.
    ``cell_objective(epsilon, lam)`` replaces simulation entirely when given
    (used to check the search logic against a known surface).
    """
    spec.validate()
    eps = np.asarray(spec.epsilons, dtype=float)
    lams = np.asarray(spec.lambdas, dtype=float)
    surface = np.empty((eps.size, lams.size))

    if cell_objective is None:
        if model is None:
            raise ConfigError("grid_search needs a model unless cell_objective is given")
        x = observed.values if isinstance(observed, GrowthSeries) else np.asarray(observed, dtype=float)
        horizon = spec.horizon or x.size
        if horizon <= spec.max_lag:
            raise DataError(f"horizon {horizon} must exceed max_lag {spec.max_lag}")
        obs_acf = sample_acf(np.abs(x), spec.max_lag)
        obs_k = excess_kurtosis(x)

    for i, e in enumerate(eps):
        for j, l in enumerate(lams):
            if cell_objective is not None:
                surface[i, j] = float(cell_objective(float(e), float(l)))
                continue
            jump = replace(base_jump, epsilon=float(e), lam=float(l), enabled=True)
            ens = simulate_ensemble(
                model, jump, spec.paths_per_point, horizon, seed, workers, stream_prefix=(i, j)
            )
            surface[i, j] = objective(obs_acf, obs_k, ens, spec.w_k)
            log.debug("grid cell eps=%g lambda=%g J=%.6g", e, l, surface[i, j])

    bi, bj = argmin_surface(surface)
    flags = _boundary(bi, bj, surface.shape)
    if any(flags.values()):
        edges = ", ".join(k for k, v in flags.items() if v)
        log.info("grid optimum sits on the grid edge (%s)", edges)
    return GridResult(
        epsilons=eps,
        lambdas=lams,
        surface=surface,
        best=(float(eps[bi]), float(lams[bj]), float(surface[bi, bj])),
        best_index=(bi, bj),
        boundary_flags=flags,
        seed=int(seed),
    )


def state_resolution_sweep(observed, n_values: Sequence[int] = (30, 60, 90, 100, 150, 200), nu: float = 5.0) -> list[dict]:
    """State-support diagnostics of the fitted model for several ``N``.

    Reports, per ``N``, how many states were never visited (uniform
    transition rows) and the smallest per-state observation count.
    """
    out = []
    for n in n_values:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EstimationWarning)
            m = fit_model(observed, n_states=int(n), nu=nu)
        out.append(
            {
                "n_states": int(n),
                "unvisited": len(m.transitions.unvisited),
                "min_support": int(m.emissions.support_count.min()),
                "fallback_states": len(m.emissions.fallback_states),
                "stationary_residual": m.stationary_residual,
            }
        )
    return out
