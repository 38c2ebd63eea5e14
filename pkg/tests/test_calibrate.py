import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from growthsim.calibrate import (
    DEFAULT_EPSILONS,
    DEFAULT_LAMBDAS,
    AcfVector,
    DegeneratePathWarning,
    GridSpec,
    argmin_surface,
    grid_search,
    objective,
    sample_acf,
    state_resolution_sweep,
)
from growthsim.errors import ConfigError, DataError, NumericError
from growthsim.simulate import JumpConfig


def acf_loop(x, lags):
    x = np.asarray(x, dtype=float)
    d = x - x.mean()
    c0 = float(np.sum(d * d))
    return np.array([np.sum(d[:-k] * d[k:]) / c0 for k in range(1, lags + 1)])


def kurt_loop(x):
    d = np.asarray(x, dtype=float) - np.mean(x)
    return np.mean(d**4) / np.mean(d**2) ** 2 - 3


def test_acf_matches_direct_sum():
    x = np.random.default_rng(0).standard_t(4, 1000)
    assert_allclose(sample_acf(x, 300).values, acf_loop(x, 300), atol=1e-12)


def test_acf_alternating_series():
    n = 10_000
    x = (-1.0) ** np.arange(n)
    assert_allclose(sample_acf(x, 2).values, [-(n - 1) / n, (n - 2) / n], atol=1e-12)


def test_acf_shift_invariant():
    x = np.random.default_rng(1).normal(size=500)
    assert_allclose(sample_acf(x + 123.0, 20).values, sample_acf(x, 20).values, atol=1e-10)


def test_acf_white_noise_band():
    n = 100_000
    rho = sample_acf(np.random.default_rng(2).normal(size=n), 252).values
    assert np.mean(np.abs(rho) < 4 / math.sqrt(n)) >= 0.95


def test_acf_guards():
    with pytest.raises(DataError):
        sample_acf(np.arange(10.0), 10)
    with pytest.raises(NumericError):
        sample_acf(np.ones(20), 3)


def test_objective_hand_computation():
    p1 = np.array([1.0, -2.0, 0.5, 3.0, -1.0, 2.0])
    p2 = np.array([0.2, 0.4, -0.8, 1.6, -0.1, 0.3])
    obs = AcfVector(np.array([0.1, -0.2, 0.05]))
    a1, a2 = acf_loop(np.abs(p1), 3), acf_loop(np.abs(p2), 3)
    k_obs = 1.5
    k_sim = 0.5 * (kurt_loop(p1) + kurt_loop(p2))
    expected = np.sum((obs.values - 0.5 * (a1 + a2)) ** 2) + 0.2 * (k_obs - k_sim) ** 2
    ens = np.vstack([p1, p2])
    assert_allclose(objective(obs, k_obs, ens, 0.2), expected, rtol=1e-12)
    pure = np.sum((obs.values - 0.5 * (a1 + a2)) ** 2)
    assert_allclose(objective(obs, k_obs, ens, 0.0), pure, rtol=1e-12)
    # kurtosis term moves J by exactly w_k * (gap change)
    delta = 2.0
    j_far = objective(obs, k_sim + delta, ens, 0.2)
    assert_allclose(j_far - pure, 0.2 * delta**2, rtol=1e-10)


def test_objective_self_comparison_near_zero(heavy_series):
    x = heavy_series.values
    obs = sample_acf(np.abs(x), 50)
    ens = np.vstack([x, x])
    assert objective(obs, kurt_loop(x), ens, 0.2) < 1e-20


def test_objective_permutation_invariant():
    g = np.random.default_rng(3).standard_t(5, (20, 300))
    obs = AcfVector(np.zeros(10))
    perm = np.random.default_rng(4).permutation(20)
    assert_allclose(objective(obs, 3.0, g, 0.2), objective(obs, 3.0, g[perm], 0.2), rtol=1e-12)


def test_objective_skips_degenerate_paths():
    g = np.random.default_rng(5).normal(size=(3, 100))
    g[1] = 0.7
    obs = AcfVector(np.zeros(5))
    with pytest.warns(DegeneratePathWarning):
        j = objective(obs, 0.0, g, 0.2)
    assert_allclose(j, objective(obs, 0.0, g[[0, 2]], 0.2))
    with pytest.warns(DegeneratePathWarning):
        assert objective(obs, 0.0, np.ones((2, 100)), 0.2) == math.inf


def test_grid_spec_defaults_and_validation():
    spec = GridSpec()
    assert spec.epsilons == DEFAULT_EPSILONS and len(spec.epsilons) == 8
    assert spec.lambdas == DEFAULT_LAMBDAS and len(spec.lambdas) == 9
    assert spec.paths_per_point == 200 and spec.w_k == 0.2
    with pytest.raises(ConfigError):
        GridSpec(epsilons=(1e-3, 1e-4)).validate()
    with pytest.raises(ConfigError):
        GridSpec(lambdas=()).validate()


def test_grid_oracle_bowl_recovers_minimum():
    spec = GridSpec()
    target = (5e-3, 70.0)

    def bowl(e, l):
        return (math.log10(e) - math.log10(target[0])) ** 2 + ((l - target[1]) / 50) ** 2

    res = grid_search(None, None, spec, cell_objective=bowl)
    assert res.best[:2] == target
    assert res.best_index == (5, 4)
    assert not any(res.boundary_flags.values())
    i, j = np.unravel_index(np.argmin(res.surface), res.surface.shape)
    assert (i, j) == res.best_index


def test_grid_single_cell():
    res = grid_search(None, None, GridSpec(epsilons=(0.01,), lambdas=(10.0,)), cell_objective=lambda e, l: 3.0)
    assert res.best == (0.01, 10.0, 3.0)
    assert all(res.boundary_flags.values())


def test_argmin_tie_break_prefers_small_epsilon_then_lambda():
    s = np.array([[2.0, 1.0, 1.0], [1.0, 5.0, 1.0]])
    assert argmin_surface(s) == (0, 1)
    assert argmin_surface(np.array([[np.nan, 4.0], [4.0, 9.0]])) == (0, 1)


def test_grid_lower_boundary_flag():
    res = grid_search(None, None, GridSpec(), cell_objective=lambda e, l: e + abs(l - 100) / 1e4)
    assert res.best[:2] == (1e-4, 100.0)
    assert res.boundary_flags["epsilon_lower"] and not res.boundary_flags["lambda_upper"]


def test_grid_search_simulated_is_deterministic(synth_model, heavy_series, tmp_path):
    spec = GridSpec(epsilons=(1e-4, 1e-2), lambdas=(10.0, 100.0), paths_per_point=8, horizon=600, max_lag=50)
    a = grid_search(synth_model, heavy_series, spec, seed=3, workers=1)
    b = grid_search(synth_model, heavy_series, spec, seed=3, workers=4)
    assert_array_equal(a.surface, b.surface)
    assert np.all(np.isfinite(a.surface))
    a.write_csv(tmp_path / "g.csv")
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "epsilon,lambda,J" and len(lines) == 5
    a.write_json(tmp_path / "g.json")


def test_state_resolution_sweep(heavy_series):
    out = state_resolution_sweep(heavy_series, (30, 100))
    assert [r["n_states"] for r in out] == [30, 100]
    assert all(r["stationary_residual"] < 1e-8 for r in out)
