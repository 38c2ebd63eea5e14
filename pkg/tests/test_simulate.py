import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from growthsim._numerics import excess_kurtosis
from growthsim.errors import ConfigError, DataError
from growthsim.hmm import EmissionTable
from growthsim.simulate import (
    NO_JUMPS,
    JumpConfig,
    baseline_generate,
    decode_growth,
    load_ensemble_csv,
    path_rng,
    simulate_ensemble,
    simulate_states,
    write_ensemble,
)


def _states(model, jump, m, seed=1):
    return simulate_states(model, jump, m, path_rng(seed, (0,)))


def test_jump_config_validation():
    with pytest.raises(ConfigError):
        JumpConfig(epsilon=1.5).validate()
    with pytest.raises(ConfigError):
        JumpConfig(lam=0).validate()
    with pytest.raises(ConfigError):
        JumpConfig(n_tail=50).validate(100)
    assert JumpConfig.from_dict({"lambda": 25, "epsilon": 0.01}).lam == 25.0
    with pytest.raises(ConfigError):
        JumpConfig.from_dict({"epsilon": 0.1, "mu": 3})


def test_no_jumps_is_markov_chain(synth_model):
    s, eps = _states(synth_model, NO_JUMPS, 5000)
    assert eps == ()
    assert s.min() >= 1 and s.max() <= 100
    # every observed move has positive probability under T
    rows = synth_model.transitions.rows
    assert np.all(rows[s[:-1] - 1, s[1:] - 1] > 0)


def test_stationary_frequencies(synth_model):
    s, _ = _states(synth_model, NO_JUMPS, 1_000_000, seed=3)
    freq = np.bincount(s - 1, minlength=100) / s.size
    assert 0.5 * np.abs(freq - synth_model.stationary).sum() < 0.02


def test_forced_bottom_tail(synth_model):
    jump = JumpConfig(epsilon=1.0, lam=100, n_tail=1, p_neg=1.0)
    s, eps = _states(synth_model, jump, 400)
    assert np.all(s[1:] == 1)
    assert eps[0].start == 1


@pytest.mark.parametrize("p_neg, lo, hi", [(1.0, 1, 5), (0.0, 96, 100)])
def test_forced_steps_land_in_chosen_tail(synth_model, p_neg, lo, hi):
    jump = JumpConfig(epsilon=0.05, lam=20, n_tail=5, p_neg=p_neg)
    s, eps = _states(synth_model, jump, 3000)
    assert eps
    for e in eps:
        seg = s[e.start : e.start + e.length]
        assert np.all((seg >= lo) & (seg <= hi))


def test_forced_steps_use_both_tails(synth_model):
    s, eps = _states(synth_model, JumpConfig(epsilon=0.02, lam=30, n_tail=5), 20000)
    forced = np.concatenate([s[e.start : e.start + e.length] for e in eps])
    assert np.all((forced <= 5) | (forced >= 96))
    assert 0.3 < np.mean(forced <= 5) < 0.75


def test_zero_length_episodes_consume_no_horizon(synth_model):
    base, _ = _states(synth_model, NO_JUMPS, 2000, seed=9)
    s, eps = _states(synth_model, JumpConfig(epsilon=0.3, lam=1e-12), 2000, seed=9)
    assert len(eps) > 100
    assert all(e.length == 0 for e in eps)
    assert_array_equal(s, base)


def test_episode_truncated_at_horizon(synth_model):
    s, eps = _states(synth_model, JumpConfig(epsilon=1.0, lam=100), 50)
    assert len(eps) == 1
    assert (eps[0].start, eps[0].length) == (1, 49)
    assert s.size == 50


def test_decode_zero_scale_returns_means():
    em = EmissionTable(np.array([-1.0, 2.0]), np.zeros(2), 5.0, np.array([3, 3]))
    out = decode_growth(np.array([1, 2, 2, 1]), em, np.random.default_rng(0))
    assert_array_equal(out, [-1.0, 2.0, 2.0, -1.0])


def test_decode_is_deterministic_and_checks_labels(synth_model):
    s = np.arange(1, 101)
    a = decode_growth(s, synth_model.emissions, path_rng(5, (1,)))
    b = decode_growth(s, synth_model.emissions, path_rng(5, (1,)))
    assert_array_equal(a, b)
    with pytest.raises(DataError):
        decode_growth(np.array([0, 1]), synth_model.emissions, np.random.default_rng(0))


def test_single_path_matches_manual_stream(synth_model):
    ens = simulate_ensemble(synth_model, JumpConfig(), 1, 300, seed=42)
    rng = path_rng(42, (0,))
    s, eps = simulate_states(synth_model, JumpConfig(), 300, rng)
    g = decode_growth(s, synth_model.emissions, rng)
    assert_array_equal(ens.states[0], s)
    assert_array_equal(ens.growth[0], g)
    assert ens.episodes[0] == eps


def test_ensemble_independent_of_workers(synth_model):
    jump = JumpConfig(epsilon=0.002, lam=40)
    a = simulate_ensemble(synth_model, jump, 37, 500, seed=11, workers=1)
    b = simulate_ensemble(synth_model, jump, 37, 500, seed=11, workers=8)
    assert_array_equal(a.growth, b.growth)
    assert_array_equal(a.states, b.states)
    assert a.episodes == b.episodes
    c = simulate_ensemble(synth_model, jump, 37, 500, seed=12)
    assert not np.array_equal(a.growth, c.growth)


def test_jump_fraction_matches_trigger_probability(synth_model):
    eps, m = 1e-4, 2766
    ens = simulate_ensemble(synth_model, JumpConfig(epsilon=eps, lam=100), 1000, m, seed=5, workers=4)
    # a path without jumps evaluates the trigger on all m - 1 steps
    expected = 1 - (1 - eps) ** (m - 1)
    se = np.sqrt(expected * (1 - expected) / 1000)
    assert abs(ens.jump_fraction - expected) < 4 * se
    assert_array_equal(ens.contains_jump, [len(e) > 0 for e in ens.episodes])
    assert all(p.contains_jump == bool(p.jump_episodes) for p in ens.paths[:50])


def test_baseline_bootstrap_values_come_from_training():
    x = np.array([0.5, -1.0, 2.0, 3.5])
    ens = baseline_generate("bootstrap", x, 5, 100, seed=1)
    assert set(np.unique(ens.growth)) <= set(x)
    assert ens.states is None and not ens.contains_jump.any()


@pytest.mark.parametrize("kind, target", [("gaussian", 0.0), ("laplace", 3.0)])
def test_baseline_kurtosis(heavy_series, kind, target):
    ens = baseline_generate(kind, heavy_series, 400, 2766, seed=2, workers=4)
    assert abs(excess_kurtosis(ens.growth.ravel()) - target) < 0.1


def test_baseline_unknown_kind():
    with pytest.raises(ConfigError):
        baseline_generate("garch", np.arange(10.0), 1, 10, 0)


def test_csv_roundtrip_and_manifest(tmp_path, synth_model):
    ens = simulate_ensemble(synth_model, JumpConfig(epsilon=0.01, lam=10), 3, 40, seed=8)
    write_ensemble(ens, tmp_path, "e")
    head = (tmp_path / "e.csv").read_text().splitlines()
    assert head[0] == "path_id,t,state,growth"
    assert len(head) == 1 + 3 * 40
    man = json.loads((tmp_path / "e.manifest.json").read_text())
    assert man["seed"] == 8 and man["horizon"] == 40
    back = load_ensemble_csv(tmp_path / "e.csv", man)
    assert_array_equal(back.growth, ens.growth)
    assert_array_equal(back.states, ens.states)
    assert back.episodes == ens.episodes


def test_trim_and_subset(synth_model):
    ens = simulate_ensemble(synth_model, JumpConfig(epsilon=0.01, lam=50), 6, 200, seed=4)
    t = ens.trim(60)
    assert t.horizon == 60
    assert all(e.start < 60 and e.start + e.length <= 60 for eps in t.episodes for e in eps)
    sub = ens.subset(ens.contains_jump)
    assert sub.n_paths == int(ens.contains_jump.sum())
