"""Synthetic excess-growth-rate paths from a quantile-partitioned HMM with
Poisson jump durations, plus validation metrics and multi-asset dependence."""

from .data import (
    GrowthSeries,
    PriceSeries,
    StatsSummary,
    TestResult,
    compute_growth_rates,
    descriptive_stats,
    jarque_bera,
    ljung_box,
    load_price_series,
)
from .errors import ConfigError, DataError, GrowthsimError, NumericError
from .hmm import HmmModel, fit_model
from .simulate import JumpConfig, PathEnsemble, baseline_generate, simulate_ensemble

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "GrowthSeries",
    "GrowthsimError",
    "HmmModel",
    "JumpConfig",
    "NumericError",
    "PathEnsemble",
    "PriceSeries",
    "StatsSummary",
    "TestResult",
    "baseline_generate",
    "compute_growth_rates",
    "descriptive_stats",
    "fit_model",
    "jarque_bera",
    "ljung_box",
    "load_price_series",
    "simulate_ensemble",
]
