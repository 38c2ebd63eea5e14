"""Jump-duration Markov simulation, Student-t decoding and path ensembles.

At every step that is not inside a jump episode the chain draws ``u``; when
``u < epsilon`` an episode of ``K ~ Poisson(lambda)`` steps starts and each of
those steps is placed uniformly in the bottom tail set (probability
``p_neg``) or the top tail set. Otherwise the chain moves by its row of ``T``.

Reproducibility: path ``i`` of an ensemble seeded with ``seed`` uses
``SeedSequence(seed, spawn_key=prefix + (i,))``. Within a path the draws are
taken in a fixed order (initial state, then per-position trigger / Markov /
tail-side / tail-slot uniforms and Poisson counts, then emission noise), so a
path depends only on its own stream and never on scheduling.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

from .data import GrowthSeries
from .errors import ConfigError, DataError
from .hmm import EmissionTable, HmmModel, fit_laplace_mle


@dataclass(frozen=True)
class JumpConfig:
    epsilon: float = 1e-4
    lam: float = 100.0
    n_tail: int = 5
    p_neg: float = 0.52
    enabled: bool = True

    def validate(self, n_states: int | None = None) -> "JumpConfig":
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError(f"jump epsilon must be in [0, 1], got {self.epsilon}")
        if not self.lam > 0:
            raise ConfigError(f"jump lambda must be positive, got {self.lam}")
        if not 0.0 <= self.p_neg <= 1.0:
            raise ConfigError(f"p_neg must be in [0, 1], got {self.p_neg}")
        if self.n_tail < 1:
            raise ConfigError("n_tail must be at least 1")
        if n_states is not None and 2 * self.n_tail >= n_states:
            raise ConfigError(f"2*n_tail={2 * self.n_tail} must be < number of states {n_states}")
        return self

    @property
    def active_epsilon(self) -> float:
        return self.epsilon if self.enabled else 0.0

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "lambda": self.lam,
            "n_tail": self.n_tail,
            "p_neg": self.p_neg,
            "enabled": self.enabled,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "JumpConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        unknown = set(d) - {"epsilon", "lam", "n_tail", "p_neg", "enabled"}
        if unknown:
            raise ConfigError(f"unknown jump keys: {sorted(unknown)}")
        return cls(
            epsilon=float(d.get("epsilon", cls.epsilon)),
            lam=float(d.get("lam", cls.lam)),
            n_tail=int(d.get("n_tail", cls.n_tail)),
            p_neg=float(d.get("p_neg", cls.p_neg)),
            enabled=bool(d.get("enabled", cls.enabled)),
        )


NO_JUMPS = JumpConfig(epsilon=0.0, enabled=False)


@dataclass(frozen=True)
class JumpEpisode:
    start: int  # 0-based time index of the first forced step
    length: int  # forced steps actually applied (0 for a K=0 draw)


@dataclass(frozen=True)
class SimPath:
    states: np.ndarray | None
    growth: np.ndarray
    jump_episodes: tuple[JumpEpisode, ...] = ()

    @property
    def contains_jump(self) -> bool:
        return len(self.jump_episodes) > 0


@dataclass(frozen=True)
class PathEnsemble:
    growth: np.ndarray  # (P, M)
    states: np.ndarray | None  # (P, M), 1-based, None for i.i.d. baselines
    episodes: tuple[tuple[JumpEpisode, ...], ...]
    seed: int
    model_id: str
    kind: str = "hmm"
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        g = np.asarray(self.growth, dtype=float)
        if g.ndim != 2 or g.shape[0] < 1:
            raise DataError("ensemble growth must be a nonempty (paths, horizon) matrix")
        object.__setattr__(self, "growth", g)
        if self.states is not None and np.shape(self.states) != g.shape:
            raise DataError("states and growth shapes differ")
        if len(self.episodes) != g.shape[0]:
            raise DataError("one episode list per path required")

    @property
    def n_paths(self) -> int:
        return self.growth.shape[0]

    @property
    def horizon(self) -> int:
        return self.growth.shape[1]

    @property
    def contains_jump(self) -> np.ndarray:
        return np.array([len(e) > 0 for e in self.episodes], dtype=bool)

    @property
    def jump_fraction(self) -> float:
        return float(self.contains_jump.mean())

    def path(self, i: int) -> SimPath:
        st = None if self.states is None else self.states[i]
        return SimPath(st, self.growth[i], self.episodes[i])

    @property
    def paths(self) -> list[SimPath]:
        return [self.path(i) for i in range(self.n_paths)]

    def subset(self, idx) -> "PathEnsemble":
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return PathEnsemble(
            self.growth[idx],
            None if self.states is None else self.states[idx],
            tuple(self.episodes[i] for i in idx),
            self.seed,
            self.model_id,
            self.kind,
            self.config,
        )

    def trim(self, m: int) -> "PathEnsemble":
        """Keep the first ``m`` steps of every path (episodes clipped)."""
        if m >= self.horizon:
            return self
        eps = tuple(
            tuple(
                JumpEpisode(e.start, min(e.length, m - e.start)) for e in path_eps if e.start < m
            )
            for path_eps in self.episodes
        )
        return PathEnsemble(
            self.growth[:, :m],
            None if self.states is None else self.states[:, :m],
            eps,
            self.seed,
            self.model_id,
            self.kind,
            self.config,
        )

    # -- export ------------------------------------------------------------- #
    def to_csv(self, path: str | Path) -> None:
        """Long format: ``path_id,t,state,growth`` (state blank for baselines)."""
        p, m = self.growth.shape
        pid = np.repeat(np.arange(p), m)
        t = np.tile(np.arange(m), p)
        g = self.growth.ravel()
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("path_id,t,state,growth\n")
            if self.states is None:
                lines = (f"{a},{b},,{c!r}" for a, b, c in zip(pid.tolist(), t.tolist(), g.tolist()))
            else:
                s = self.states.ravel().tolist()
                lines = (
                    f"{a},{b},{c},{d!r}" for a, b, c, d in zip(pid.tolist(), t.tolist(), s, g.tolist())
                )
            fh.write("\n".join(lines))
            fh.write("\n")

    def manifest(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "model_id": self.model_id,
            "n_paths": self.n_paths,
            "horizon": self.horizon,
            "config": self.config,
            "jump_fraction": self.jump_fraction,
            "n_jump_paths": int(self.contains_jump.sum()),
            "episodes": [[[e.start, e.length] for e in eps] for eps in self.episodes],
        }


def load_ensemble_csv(path: str | Path, manifest: dict | None = None) -> PathEnsemble:
    raw = np.genfromtxt(path, delimiter=",", names=True, dtype=None, encoding="utf-8")
    pid = np.asarray(raw["path_id"], dtype=np.int64)
    p = int(pid.max()) + 1
    m = pid.size // p
    growth = np.asarray(raw["growth"], dtype=float).reshape(p, m)
    st = np.asarray(raw["state"], dtype=float)
    states = None if np.all(np.isnan(st)) else st.reshape(p, m).astype(np.int64)
    manifest = manifest or {}
    eps = manifest.get("episodes")
    episodes = (
        tuple(tuple(JumpEpisode(int(a), int(b)) for a, b in e) for e in eps)
        if eps is not None
        else tuple(() for _ in range(p))
    )
    return PathEnsemble(
        growth,
        states,
        episodes,
        int(manifest.get("seed", 0)),
        str(manifest.get("model_id", "")),
        str(manifest.get("kind", "hmm")),
        manifest.get("config", {}),
    )


# --------------------------------------------------------------------------- #
# RNG streams
# --------------------------------------------------------------------------- #
def path_rng(seed: int, key: Sequence[int]) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)


# --------------------------------------------------------------------------- #
# Kernels
# --------------------------------------------------------------------------- #
@numba.njit(nogil=True, cache=True)
def _draw_state(cum, u):
    # first index with cum[j] > u
    lo, hi = 0, cum.size - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if cum[mid] > u:
            hi = mid
        else:
            lo = mid + 1
    return lo


@numba.njit(nogil=True, cache=True)
def _run_chain(cum_rows, cum_pi, u0, trig, mk, side, slot, kdraw, eps, n_tail, p_neg, ep_start, ep_len):
    m = trig.size
    n = cum_pi.size
    s = np.empty(m, dtype=np.int64)
    s[0] = _draw_state(cum_pi, u0) + 1
    t = 1
    n_ep = 0
    while t < m:
        if trig[t] < eps:
            k = kdraw[t]
            ep_start[n_ep] = t
            j = 0
            while j < k and t < m:
                off = int(slot[t] * n_tail)
                if off >= n_tail:
                    off = n_tail - 1
                if side[t] < p_neg:
                    s[t] = 1 + off
                else:
                    s[t] = n - n_tail + 1 + off
                t += 1
                j += 1
            ep_len[n_ep] = j
            n_ep += 1
            if k == 0:
                s[t] = _draw_state(cum_rows[s[t - 1] - 1], mk[t]) + 1
                t += 1
        else:
            s[t] = _draw_state(cum_rows[s[t - 1] - 1], mk[t]) + 1
            t += 1
    return s, n_ep


def _cumulative(p: np.ndarray) -> np.ndarray:
    c = np.cumsum(p, axis=-1)
    c[..., -1] = np.inf  # guards against round-off below 1
    return c


def simulate_states(
    model: HmmModel,
    jump: JumpConfig,
    m: int,
    rng: np.random.Generator,
    _cum: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[np.ndarray, tuple[JumpEpisode, ...]]:
    """One state path of length ``m`` plus its jump episodes."""
    if m < 1:
        raise ConfigError("horizon must be at least 1")
    cum_rows, cum_pi = _cum or (_cumulative(model.transitions.rows), _cumulative(model.stationary))
    u0 = rng.random()
    trig = rng.random(m)
    mk = rng.random(m)
    side = rng.random(m)
    slot = rng.random(m)
    kdraw = rng.poisson(jump.lam, m).astype(np.int64)
    ep_start = np.empty(m, dtype=np.int64)
    ep_len = np.empty(m, dtype=np.int64)
    states, n_ep = _run_chain(
        cum_rows, cum_pi, u0, trig, mk, side, slot, kdraw,
        float(jump.active_epsilon), int(jump.n_tail), float(jump.p_neg), ep_start, ep_len,
    )
    episodes = tuple(JumpEpisode(int(ep_start[i]), int(ep_len[i])) for i in range(n_ep))
    return states, episodes


def decode_growth(states, emissions: EmissionTable, rng: np.random.Generator) -> np.ndarray:
    """``mu_k + sigma_k * Z`` with ``Z ~ t_nu`` (standard normal when nu is inf)."""
    s = np.asarray(states, dtype=np.int64)
    if s.size and (s.min() < 1 or s.max() > emissions.mu.size):
        raise DataError("state labels outside 1..N")
    if math.isinf(emissions.nu):
        z = rng.standard_normal(s.size)
    else:
        z = rng.standard_t(emissions.nu, s.size)
    return emissions.mu[s - 1] + emissions.sigma[s - 1] * z


def _chunks(n: int, workers: int) -> list[range]:
    workers = max(1, min(workers, n))
    step = math.ceil(n / workers)
    return [range(i, min(i + step, n)) for i in range(0, n, step)]


def _run_parallel(fn, n: int, workers: int) -> list:
    out: list = [None] * n

    def work(r: range):
        for i in r:
            out[i] = fn(i)

    if workers <= 1:
        work(range(n))
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(work, _chunks(n, workers)))
    return out


def simulate_ensemble(
    model: HmmModel,
    jump: JumpConfig,
    p: int,
    m: int,
    seed: int,
    workers: int = 1,
    stream_prefix: Sequence[int] = (),
) -> PathEnsemble:
    if p < 1 or m < 1:
        raise ConfigError("need at least one path and one step")
    jump.validate(model.n_states)
    cum = (_cumulative(model.transitions.rows), _cumulative(model.stationary))
    prefix = tuple(stream_prefix)

    def one(i: int):
        rng = path_rng(seed, prefix + (i,))
        s, eps = simulate_states(model, jump, m, rng, cum)
        return s, decode_growth(s, model.emissions, rng), eps

    res = _run_parallel(one, p, workers)
    return PathEnsemble(
        growth=np.stack([r[1] for r in res]),
        states=np.stack([r[0] for r in res]),
        episodes=tuple(r[2] for r in res),
        seed=int(seed),
        model_id=model.model_id(),
        kind="hmm_wj" if jump.active_epsilon > 0 else "hmm_nj",
        config={"jump": jump.to_dict(), "n_states": model.n_states, "nu": _json_nu(model.nu)},
    )


def _json_nu(nu: float):
    return "inf" if math.isinf(nu) else nu


BASELINES = ("bootstrap", "gaussian", "laplace")


def baseline_generate(
    kind: str,
    training,
    p: int,
    m: int,
    seed: int,
    workers: int = 1,
    stream_prefix: Sequence[int] = (),
) -> PathEnsemble:
    """i.i.d. comparison generators: resampling, Gaussian MLE, Laplace MLE."""
    x = training.values if isinstance(training, GrowthSeries) else np.asarray(training, dtype=float)
    if x.size < 2:
        raise DataError("baseline training series needs at least 2 points")
    if kind == "bootstrap":
        draw = lambda rng: x[rng.integers(0, x.size, m)]  # noqa: E731
        params = {}
    elif kind == "gaussian":
        mean, sd = float(x.mean()), float(x.std(ddof=0))
        draw = lambda rng: rng.normal(mean, sd, m)  # noqa: E731
        params = {"mean": mean, "std": sd}
    elif kind == "laplace":
        lap = fit_laplace_mle(x)
        draw = lambda rng: rng.laplace(lap.mu, lap.b, m)  # noqa: E731
        params = {"mu": lap.mu, "b": lap.b}
    else:
        raise ConfigError(f"unknown baseline kind {kind!r}; expected one of {BASELINES}")
    prefix = tuple(stream_prefix)
    rows = _run_parallel(lambda i: draw(path_rng(seed, prefix + (i,))), p, workers)
    return PathEnsemble(
        growth=np.stack(rows),
        states=None,
        episodes=tuple(() for _ in range(p)),
        seed=int(seed),
        model_id=f"baseline:{kind}",
        kind=kind,
        config={"baseline": kind, **params},
    )


def write_ensemble(ens: PathEnsemble, directory: str | Path, name: str, created: str | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ens.to_csv(directory / f"{name}.csv")
    man = ens.manifest()
    if created is not None:
        man["created"] = created
    (directory / f"{name}.manifest.json").write_text(
        json.dumps(man, sort_keys=True, indent=1), encoding="utf-8"
    )
