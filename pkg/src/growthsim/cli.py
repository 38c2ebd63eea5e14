"""Command-line pipelines: fit, calibrate, simulate, validate, portfolio, report.

Every command reads one YAML config, derives all randomness from its ``seed``,
writes into a staging directory and moves the files into ``--out`` only when
the whole command succeeded. Plot-ready CSVs are written; nothing is drawn.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import hashlib
import json
import logging
import math
import os
import shutil
import sys
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import yaml

from . import __version__
from .calibrate import GridSpec, grid_search
from .data import (
    DEFAULT_DELTA_T,
    GrowthSeries,
    compute_growth_rates,
    descriptive_stats,
    load_price_series,
    reference_fits,
)
from .dependence import (
    DependenceModel,
    correlation_metrics,
    couple_ensembles,
    fit_cvine,
    fit_gaussian_copula,
    fit_sim,
    fit_t_copula,
    pit_transform,
    simulate_sim,
)
from .errors import ConfigError, DataError, GrowthsimError, NumericError
from .hmm import HmmModel, fit_model
from .simulate import (
    BASELINES,
    NO_JUMPS,
    JumpConfig,
    PathEnsemble,
    baseline_generate,
    simulate_ensemble,
    write_ensemble,
)
from .validate import PROBES, MetricReport, evaluate_ensemble

log = logging.getLogger("growthsim")

COMMANDS = ("fit", "calibrate", "simulate", "validate", "portfolio", "report")
DEPENDENCE_KINDS = ("sim", "gaussian", "student_t", "vine", "none")
DENSITY_BINS = 50


# --------------------------------------------------------------------------- #
# Config
# --------------------------------------------------------------------------- #
@dataclass
class RunConfig:
    tickers: list[str] = field(default_factory=lambda: ["SPY"])
    data_dir: str = "data"
    files: dict[str, str] = field(default_factory=dict)  # ticker -> CSV, default <data_dir>/<ticker>.csv
    market: str | None = None  # defaults to the first ticker
    r_f: float = 0.0
    delta_t: float = DEFAULT_DELTA_T
    test_start: str | None = None  # ISO date; later rows form the out-of-sample window
    n_states: int = 100
    nu: float = 5.0
    jump: JumpConfig = field(default_factory=JumpConfig)
    grid: GridSpec = field(default_factory=GridSpec)
    paths: int = 1000
    horizon: int | None = None  # None -> training length
    seed: int = 0
    alpha: float = 0.05
    bootstrap_b: int = 500
    baselines: list[str] = field(default_factory=lambda: list(BASELINES))
    dependence: list[str] = field(default_factory=lambda: ["student_t"])
    write_ensembles: bool = True
    workers: int = 1

    def validate(self) -> "RunConfig":
        if not self.tickers:
            raise ConfigError("tickers must list at least one ticker")
        if len(set(self.tickers)) != len(self.tickers):
            raise ConfigError("duplicate tickers")
        if self.market is not None and self.market not in self.tickers:
            raise ConfigError(f"market {self.market!r} is not among the tickers")
        if self.delta_t <= 0:
            raise ConfigError("delta_t must be positive")
        if self.n_states < 2:
            raise ConfigError("n_states must be at least 2")
        if not self.nu > 2:
            raise ConfigError("nu must exceed 2")
        if self.paths < 1:
            raise ConfigError("paths must be at least 1")
        if self.horizon is not None and self.horizon < 1:
            raise ConfigError("horizon must be at least 1")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.bootstrap_b < 2:
            raise ConfigError("bootstrap_b must be at least 2")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.test_start is not None:
            try:
                _dt.date.fromisoformat(self.test_start)
            except ValueError:
                raise ConfigError(f"test_start is not an ISO date: {self.test_start!r}") from None
        for b in self.baselines:
            if b not in BASELINES:
                raise ConfigError(f"unknown baseline {b!r}; expected one of {BASELINES}")
        for d in self.dependence:
            if d not in DEPENDENCE_KINDS:
                raise ConfigError(f"unknown dependence kind {d!r}; expected one of {DEPENDENCE_KINDS}")
        self.jump.validate(self.n_states)
        self.grid.validate()
        return self

    @property
    def market_ticker(self) -> str:
        return self.market or self.tickers[0]

    def data_path(self, ticker: str, base: Path) -> Path:
        p = Path(self.files.get(ticker, Path(self.data_dir) / f"{ticker}.csv"))
        return p if p.is_absolute() else base / p

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (JumpConfig, GridSpec)):
                v = v.to_dict()
            elif isinstance(v, float) and math.isinf(v):
                v = "inf"
            elif isinstance(v, (list, dict)):
                v = json.loads(json.dumps(v))
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, d: dict | None) -> "RunConfig":
        d = dict(d or {})
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        try:
            for key, val in d.items():
                if key == "jump":
                    kw[key] = JumpConfig.from_dict(val or {})
                elif key == "grid":
                    kw[key] = _grid_from_dict(val or {})
                elif key == "nu":
                    kw[key] = math.inf if str(val).lower() in ("inf", "infinity") else float(val)
                elif key in ("tickers", "baselines"):
                    kw[key] = [str(x) for x in _listify(val)]
                elif key == "dependence":
                    kw[key] = [str(x) for x in _listify(val)]
                elif key == "files":
                    kw[key] = {str(k): str(v) for k, v in (val or {}).items()}
                elif key in ("n_states", "paths", "seed", "bootstrap_b", "workers"):
                    kw[key] = _int(key, val)
                elif key == "horizon":
                    kw[key] = None if val is None else _int(key, val)
                elif key in ("r_f", "delta_t", "alpha"):
                    kw[key] = float(val)
                elif key == "write_ensembles":
                    kw[key] = bool(val)
                elif key == "test_start":
                    kw[key] = None if val is None else str(val)
                else:
                    kw[key] = None if val is None else str(val)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid config value: {exc}") from None
        return cls(**kw).validate()


def _listify(v):
    if v is None:
        return []
    return v if isinstance(v, (list, tuple)) else [v]


def _int(key: str, v) -> int:
    if isinstance(v, bool) or (isinstance(v, float) and not v.is_integer()):
        raise ConfigError(f"{key} must be an integer, got {v!r}")
    return int(v)


def _grid_from_dict(d: dict) -> GridSpec:
    names = {f.name for f in dataclasses.fields(GridSpec)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown grid keys: {sorted(unknown)}")
    kw = {}
    for k, v in d.items():
        if k in ("epsilons", "lambdas"):
            kw[k] = tuple(float(x) for x in v)
        elif k in ("paths_per_point", "max_lag"):
            kw[k] = _int(k, v)
        elif k == "horizon":
            kw[k] = None if v is None else _int(k, v)
        else:
            kw[k] = float(v)
    return GridSpec(**kw)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = yaml.safe_load(p.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    return RunConfig.from_dict(raw)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)


# --------------------------------------------------------------------------- #
# Helpers
# --------------------------------------------------------------------------- #
def subseed(seed: int, *labels: str) -> int:
    """Deterministic 63-bit seed for a named sub-task."""
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [zlib.crc32(lbl.encode()) for lbl in labels]
    state = np.random.SeedSequence(key).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(x) for x in r])


def _cell(x):
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return "" if not math.isfinite(x) else repr(float(x))
    return x


@dataclass
class Context:
    cfg: RunConfig
    base: Path  # config directory, for relative data paths
    stage: Path
    created: str

    def path(self, name: str) -> Path:
        p = self.stage / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p


@dataclass
class Dataset:
    ticker: str
    train: GrowthSeries
    test: GrowthSeries | None
    dates: tuple


def _load(cfg: RunConfig, base: Path, ticker: str) -> Dataset:
    prices = load_price_series(cfg.data_path(ticker, base), ticker)
    g = compute_growth_rates(prices, cfg.r_f, cfg.delta_t)
    dates = prices.dates[1:]
    if cfg.test_start is None:
        return Dataset(ticker, g, None, dates)
    cut = _dt.date.fromisoformat(cfg.test_start)
    k = sum(1 for d in dates if d < cut)
    if k < 2 or k == len(dates):
        raise DataError(f"{ticker}: test_start {cfg.test_start} leaves an empty train or test window")
    return Dataset(ticker, g.slice(0, k), g.slice(k), dates)


def _fit(cfg: RunConfig, ds: Dataset) -> HmmModel:
    return fit_model(ds.train, cfg.n_states, cfg.nu)


def _horizon(cfg: RunConfig, ds: Dataset) -> int:
    return cfg.horizon or len(ds.train)


# --------------------------------------------------------------------------- #
# Commands
# --------------------------------------------------------------------------- #
def cmd_fit(ctx: Context) -> None:
    cfg = ctx.cfg
    rows = []
    for t in cfg.tickers:
        ds = _load(cfg, ctx.base, t)
        model = _fit(cfg, ds)
        ctx.path(f"model_{t}.json").write_text(model.to_json() + "\n", encoding="utf-8")
        st = descriptive_stats(ds.train)
        payload = {"ticker": t, "observed": _stats_dict(st), "reference": reference_fits(ds.train),
                   "n_states": model.n_states, "stationary_residual": model.stationary_residual,
                   "warnings": list(model.warnings)}
        ctx.path(f"stats_{t}.json").write_text(_dump(payload), encoding="utf-8")
        rows.append(_table1_row(t, "observed", payload["observed"]))
        for name, ref in payload["reference"].items():
            rows.append(_table1_row(t, name, ref))
    _write_csv(ctx.path("table1.csv"), TABLE1_HEADER, rows)


TABLE1_HEADER = ("ticker", "source", "mean_pct", "std_pct", "skewness", "excess_kurtosis",
                 "jb_stat", "jb_p", "lb_raw_stat", "lb_raw_p", "lb_abs_stat", "lb_abs_p")


def _stats_dict(st) -> dict:
    d = st.to_dict()
    return {k: v for k, v in d.items()}


def _table1_row(ticker, source, d) -> list:
    def tp(key, part):
        v = d.get(key)
        return None if not isinstance(v, dict) else v[part]

    return [ticker, source, d["mean_pct"], d["std_pct"], d["skewness"], d["excess_kurtosis"],
            tp("jb", "statistic"), tp("jb", "p_value"), tp("lb_raw", "statistic"),
            tp("lb_raw", "p_value"), tp("lb_abs", "statistic"), tp("lb_abs", "p_value")]


def cmd_calibrate(ctx: Context) -> None:
    cfg = ctx.cfg
    for t in cfg.tickers:
        ds = _load(cfg, ctx.base, t)
        model = _fit(cfg, ds)
        res = grid_search(model, ds.train, cfg.grid, subseed(cfg.seed, "calibrate", t), cfg.jump,
                          workers=cfg.workers)
        res.write_csv(ctx.path(f"grid_{t}.csv"))
        rec = res.best_record()
        rec["grid"] = cfg.grid.to_dict()
        rec["ticker"] = t
        ctx.path(f"grid_best_{t}.json").write_text(_dump(rec), encoding="utf-8")


def _model_ensembles(cfg: RunConfig, ds: Dataset, model: HmmModel, label: str) -> dict[str, PathEnsemble]:
    m = _horizon(cfg, ds)
    s = subseed(cfg.seed, label, ds.ticker)
    return {
        "hmm_nj": simulate_ensemble(model, NO_JUMPS, cfg.paths, m, s, cfg.workers, (0,)),
        "hmm_wj": simulate_ensemble(model, cfg.jump, cfg.paths, m, s, cfg.workers, (1,)),
    }


def cmd_simulate(ctx: Context) -> None:
    cfg = ctx.cfg
    for t in cfg.tickers:
        ds = _load(cfg, ctx.base, t)
        model = _fit(cfg, ds)
        for name, ens in _model_ensembles(cfg, ds, model, "simulate").items():
            write_ensemble(ens, ctx.stage, f"ensemble_{t}_{name}")


TABLE2_FIELDS = ("ks_pass_rate", "ks_pass_se", "ad_pass_rate", "ad_pass_se", "mean_w1", "w1_se",
                 "mean_hellinger", "hellinger_se", "mean_kurtosis", "kurtosis_se", "acf_mae",
                 "acf_mae_se", "coverage_pct", "coverage_se", "jump_fraction")


def _table2_rows(reports: dict[str, dict], window: str) -> list:
    rows = []
    for name, r in reports.items():
        rows.append([window, name] + [r.get(k) for k in TABLE2_FIELDS])
        jr = r.get("jump_report")
        if jr:
            rows.append([window, f"{name}_jump_paths"] + [jr.get(k) for k in TABLE2_FIELDS])
    return rows


def _pooled_density(edges: np.ndarray, x: np.ndarray) -> list[float]:
    h, _ = np.histogram(x, bins=edges, density=True)
    return h.tolist()


def _plot_payload(x: np.ndarray, ensembles: dict[str, PathEnsemble], reports: dict[str, MetricReport]) -> dict:
    lo = min(float(x.min()), *(float(np.quantile(e.growth, 0.0005)) for e in ensembles.values()))
    hi = max(float(x.max()), *(float(np.quantile(e.growth, 0.9995)) for e in ensembles.values()))
    edges = np.linspace(lo, hi, DENSITY_BINS + 1)
    first = next(iter(reports.values()))
    acf = {"lags": list(range(1, first.acf_max_lag + 1)), "observed": first.observed_acf.tolist()}
    qq = {"probes": PROBES.tolist(), "observed": first.envelope.observed.tolist()}
    dens = {"edges": edges.tolist(), "observed": _pooled_density(edges, x)}
    for name, r in reports.items():
        acf[name] = r.simulated_acf.tolist()
        if r.jump_report is not None:
            acf[f"{name}_jump_paths"] = r.jump_report.simulated_acf.tolist()
        qq[name] = {
            "lower": r.envelope.lower.tolist(),
            "upper": r.envelope.upper.tolist(),
            "pooled": np.quantile(ensembles[name].growth, PROBES / 100.0).tolist(),
        }
        dens[name] = _pooled_density(edges, ensembles[name].growth.ravel())
    return {"acf": acf, "qq": qq, "density": dens}


def cmd_validate(ctx: Context) -> None:
    cfg = ctx.cfg
    for t in cfg.tickers:
        ds = _load(cfg, ctx.base, t)
        model = _fit(cfg, ds)
        m = _horizon(cfg, ds)
        ens = _model_ensembles(cfg, ds, model, "validate")
        bseed = subseed(cfg.seed, "baseline", t)
        for k, kind in enumerate(cfg.baselines):
            ens[kind] = baseline_generate(kind, ds.train, cfg.paths, m, bseed, cfg.workers, (k,))
        boot_seed = subseed(cfg.seed, "bootstrap", t)

        def run(obs):
            return {
                name: evaluate_ensemble(obs, e, cfg.alpha, cfg.bootstrap_b, boot_seed, label=name,
                                        workers=cfg.workers)
                for name, e in ens.items()
            }

        ins = run(ds.train)
        oos = run(ds.test) if ds.test is not None else None
        payload = {
            "ticker": t,
            "alpha": cfg.alpha,
            "paths": cfg.paths,
            "horizon": m,
            "in_sample": {k: r.to_dict() for k, r in ins.items()},
            "out_of_sample": None if oos is None else {k: r.to_dict() for k, r in oos.items()},
            "plot": _plot_payload(ds.train.values, ens, ins),
        }
        ctx.path(f"validate_{t}.json").write_text(_dump(payload), encoding="utf-8")
        rows = _table2_rows(payload["in_sample"], "in_sample")
        if oos is not None:
            rows += _table2_rows(payload["out_of_sample"], "out_of_sample")
        _write_csv(ctx.path(f"table2_{t}.csv"), ("window", "model") + TABLE2_FIELDS, rows)
        for name, r in ins.items():
            r.write_per_path_csv(ctx.path(f"per_path_{t}_{name}.csv"))


def _aligned(cfg: RunConfig, base: Path) -> tuple[list[str], np.ndarray]:
    """Training growth rates of all tickers on their common dates, (n, d)."""
    sets = [_load(cfg, base, t) for t in cfg.tickers]
    common = set(sets[0].dates[: len(sets[0].train)])
    for ds in sets[1:]:
        common &= set(ds.dates[: len(ds.train)])
    if len(common) < 30:
        raise DataError(f"only {len(common)} common training dates across {cfg.tickers}")
    cols = []
    for ds in sets:
        idx = {d: i for i, d in enumerate(ds.dates[: len(ds.train)])}
        cols.append(ds.train.values[[idx[d] for d in sorted(common)]])
    return list(cfg.tickers), np.column_stack(cols)


def cmd_portfolio(ctx: Context) -> None:
    cfg = ctx.cfg
    if len(cfg.tickers) < 2:
        raise ConfigError("portfolio needs at least two tickers")
    tickers, obs = _aligned(cfg, ctx.base)
    n, d = obs.shape
    m = cfg.horizon or n
    models = [fit_model(GrowthSeries(t, obs[:, a]), cfg.n_states, cfg.nu) for a, t in enumerate(tickers)]
    s = subseed(cfg.seed, "portfolio")
    base = [simulate_ensemble(mod, cfg.jump, cfg.paths, m, s, cfg.workers, (a,)) for a, mod in enumerate(models)]
    u = pit_transform(obs)
    rows = []
    for kind in cfg.dependence:
        if kind == "none":
            dep, coupled = DependenceModel(kind, tuple(tickers)), base
        elif kind == "sim":
            mk = tickers.index(cfg.market_ticker)
            fits = {t: fit_sim(GrowthSeries(t, obs[:, a]), obs[:, mk]) for a, t in enumerate(tickers) if a != mk}
            coupled = [
                base[mk] if a == mk else simulate_sim(fits[t], base[mk], subseed(cfg.seed, "sim", t))
                for a, t in enumerate(tickers)
            ]
            dep = DependenceModel(kind, tuple(tickers), None, fits, cfg.market_ticker)
        else:
            if kind == "gaussian":
                cop = fit_gaussian_copula(u)
            elif kind == "student_t":
                cop = fit_t_copula(u)
            else:
                cop = fit_cvine(u)
            coupled = couple_ensembles(base, cop, subseed(cfg.seed, "copula", kind))
            dep = DependenceModel(kind, tuple(tickers), cop)
        rep = correlation_metrics(obs, coupled, tickers, cfg.alpha, cfg.bootstrap_b,
                                  subseed(cfg.seed, "dependence", kind))
        ctx.path(f"dependence_{kind}.json").write_text(dep.to_json() + "\n", encoding="utf-8")
        ctx.path(f"dependence_report_{kind}.json").write_text(
            _dump({"kind": kind, "tickers": tickers, **rep.to_dict()}), encoding="utf-8")
        rows.append([kind, rep.frobenius_error, rep.frobenius_se, rep.pairwise_corr_mae]
                    + [rep.per_asset_ks_pass[t] for t in tickers])
        if cfg.write_ensembles:
            for a, t in enumerate(tickers):
                write_ensemble(coupled[a], ctx.stage, f"portfolio_{kind}_{t}")
    _write_csv(ctx.path("table3.csv"),
               ["dependence", "frobenius_error", "frobenius_se", "pairwise_corr_mae"]
               + [f"ks_pass_{t}" for t in tickers], rows)


def cmd_report(ctx: Context, source: Path) -> None:
    """Collect artifacts already in ``source`` into report/ (markdown + CSVs)."""
    stats = sorted(source.glob("stats_*.json"))
    grids = sorted(source.glob("grid_*.csv"))
    vals = sorted(source.glob("validate_*.json"))
    deps = sorted(source.glob("dependence_report_*.json"))
    if not (stats or grids or vals or deps):
        raise DataError(f"no artifacts to report in {source}; run fit/calibrate/validate/portfolio first")
    lines = ["# growthsim report", ""]

    lines += ["## Descriptive statistics", ""]
    if stats:
        rows = []
        for p in stats:
            d = json.loads(p.read_text(encoding="utf-8"))
            rows.append(_table1_row(d["ticker"], "observed", d["observed"]))
            for name, ref in d["reference"].items():
                rows.append(_table1_row(d["ticker"], name, ref))
        _write_csv(ctx.path("report/table1.csv"), TABLE1_HEADER, rows)
        lines += _md_table(TABLE1_HEADER[:6], [r[:6] for r in rows]) + [""]
    else:
        lines += ["_skipped: no stats_*.json (run `fit`)_", ""]

    lines += ["## Jump calibration grid", ""]
    if grids:
        for p in grids:
            t = p.stem[len("grid_"):]
            shutil.copyfile(p, ctx.path(f"report/grid_surface_{t}.csv"))
            best = source / f"grid_best_{t}.json"
            if best.is_file():
                b = json.loads(best.read_text(encoding="utf-8"))
                edges = [k for k, v in b["boundary"].items() if v]
                lines.append(f"- {t}: epsilon* = {b['epsilon']:g}, lambda* = {b['lambda']:g}, "
                             f"J* = {b['J']:.4g}; on grid edge: {', '.join(edges) or 'no'}")
        lines.append("")
    else:
        lines += ["_skipped: no grid_*.csv (run `calibrate`)_", ""]

    lines += ["## Validation", ""]
    if vals:
        for p in vals:
            d = json.loads(p.read_text(encoding="utf-8"))
            t = d["ticker"]
            rows = _table2_rows(d["in_sample"], "in_sample")
            if d.get("out_of_sample"):
                rows += _table2_rows(d["out_of_sample"], "out_of_sample")
            _write_csv(ctx.path(f"report/table2_{t}.csv"), ("window", "model") + TABLE2_FIELDS, rows)
            lines += [f"### {t} (alpha = {d['alpha']}, {d['paths']} paths x {d['horizon']} steps)", ""]
            lines += _md_table(("window", "model", "KS %", "AD %", "W1", "Hellinger", "kurtosis",
                                "ACF-MAE", "coverage %"),
                               [[r[0], r[1], r[2], r[4], r[6], r[8], r[10], r[12], r[14]] for r in rows])
            lines.append("")
            _emit_plot_csvs(ctx, t, d["plot"])
        lines.append("Plot inputs: `density_<T>.csv`, `acf_<T>.csv` (all-path and jump-path curves), "
                     "`qq_<T>.csv`.")
        lines.append("")
    else:
        lines += ["_skipped: no validate_*.json (run `validate`)_", ""]

    lines += ["## Dependence", ""]
    if deps:
        rows = []
        tick = None
        for p in deps:
            d = json.loads(p.read_text(encoding="utf-8"))
            tick = d["tickers"]
            rows.append([d["kind"], d["frobenius_error"], d["frobenius_se"], d["pairwise_corr_mae"]]
                        + [d["per_asset_ks_pass"][t] for t in tick])
        header = ["dependence", "frobenius_error", "frobenius_se", "pairwise_corr_mae"] + [f"ks_pass_{t}" for t in tick]
        _write_csv(ctx.path("report/table3.csv"), header, rows)
        lines += _md_table(header, rows) + [""]
    else:
        lines += ["_skipped: no dependence_report_*.json (run `portfolio`)_", ""]

    ctx.path("report/report.md").write_text("\n".join(lines), encoding="utf-8")


def _emit_plot_csvs(ctx: Context, t: str, plot: dict) -> None:
    acf = plot["acf"]
    names = [k for k in acf if k not in ("lags",)]
    _write_csv(ctx.path(f"report/acf_{t}.csv"), ["lag"] + names,
               zip(acf["lags"], *(acf[k] for k in names)))
    qq = plot["qq"]
    models = [k for k in qq if k not in ("probes", "observed")]
    header = ["probe", "observed"] + [f"{m}_{c}" for m in models for c in ("pooled", "lower", "upper")]
    cols = [qq["probes"], qq["observed"]] + [qq[m][c] for m in models for c in ("pooled", "lower", "upper")]
    _write_csv(ctx.path(f"report/qq_{t}.csv"), header, zip(*cols))
    dens = plot["density"]
    e = dens["edges"]
    models = [k for k in dens if k != "edges"]
    _write_csv(ctx.path(f"report/density_{t}.csv"), ["bin_left", "bin_right"] + models,
               zip(e[:-1], e[1:], *(dens[k] for k in models)))


def _md_table(header, rows) -> list[str]:
    def fmt(x):
        if x is None:
            return "NA"
        if isinstance(x, float):
            return f"{x:.4g}"
        return str(x)

    out = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    out += ["| " + " | ".join(fmt(x) for x in r) + " |" for r in rows]
    return out


# --------------------------------------------------------------------------- #
# Driver
# --------------------------------------------------------------------------- #
def _sha256(p: Path) -> str:
    h = hashlib.sha256()
    with open(p, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def run_command(command: str, cfg: RunConfig, out: Path, base: Path = Path(".")) -> list[Path]:
    """Run one pipeline; returns the artifact paths written under ``out``."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    out.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{command}-", dir=out))
    created = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    ctx = Context(cfg, base, stage, created)
    try:
        if command == "report":
            cmd_report(ctx, out)
        else:
            {"fit": cmd_fit, "calibrate": cmd_calibrate, "simulate": cmd_simulate,
             "validate": cmd_validate, "portfolio": cmd_portfolio}[command](ctx)
        files = sorted(p for p in stage.rglob("*") if p.is_file())
        manifest = {
            "command": command,
            "version": __version__,
            "created": created,
            "seed": cfg.seed,
            "config": cfg.to_dict(),
            "artifacts": {str(p.relative_to(stage)): _sha256(p) for p in files},
        }
        (stage / f"manifest_{command}.json").write_text(_dump(manifest), encoding="utf-8")
        written = []
        for p in sorted(stage.rglob("*")):
            if p.is_file():
                dest = out / p.relative_to(stage)
                dest.parent.mkdir(parents=True, exist_ok=True)
                os.replace(p, dest)
                written.append(dest)
        return written
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="growthsim", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for c in COMMANDS:
        sp = sub.add_parser(c)
        sp.add_argument("--config", type=Path, default=None, help="YAML run configuration")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        sp.add_argument("--ticker", action="append", default=None, help="restrict to ticker (repeatable)")
        sp.add_argument("--workers", type=int, default=None, help="threads for path-level work")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.workers is not None:
            cfg.workers = args.workers
        if args.ticker:
            missing = [t for t in args.ticker if t not in cfg.tickers]
            if missing:
                raise ConfigError(f"--ticker not in config tickers: {missing}")
            cfg.tickers = [t for t in cfg.tickers if t in args.ticker]
            if cfg.market not in (None, *cfg.tickers):
                cfg.market = None
        cfg.validate()
        base = args.config.parent if args.config is not None else Path(".")
        written = run_command(args.command, cfg, args.out, base)
    except GrowthsimError as exc:
        kind = {2: "config", 3: "data", 4: "numeric"}.get(exc.exit_code, "error")
        print(f"growthsim: {kind} error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001 - last-resort structured exit
        print(f"growthsim: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for p in written:
        print(p)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
