import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import gp_posterior, mc_expected_improvement
from sweetspot.bayopt import (BayOpConfig, GpSurrogate, candidate_grid, expected_improvement, gp_fit,
                              latin_hypercube, penalty, penalty_latency_only, run_bayopt, suggest_next,
                              write_trials_csv)
from sweetspot.core import Config, ConfigError, ConfigSpace, Measurement, SlaObjective, enumerate_grid
from sweetspot.model import ModelParams
from sweetspot.systems import ModelSystem, ReplaySystem

SLA = SlaObjective(99, 500)
SPACE = ConfigSpace.from_ranges(0, 400, 2, 1.3, 3.0, 0.1)
SURFACE = ModelParams(150, 0.3, 0.4, 0.02, 2.1)


def m(tail, energy):
    return Measurement(tail, energy, 1.0)


def test_penalty_within_sla_is_energy():
    assert penalty(m(400, 2000), SLA) == 2000


def test_penalty_follows_equation_above_bound():
    assert penalty(m(600, 3.0), SLA) == pytest.approx(101 * 3.0)


def test_penalty_at_boundary():
    assert penalty(m(500, 7.0), SLA) == 7.0


@given(st.floats(0, 2000), st.floats(0, 1e4), st.floats(0.01, 100))
def test_penalty_scales_with_energy(tail, energy, c):
    assert penalty(m(tail, energy * c), SLA) == pytest.approx(c * penalty(m(tail, energy), SLA))


@given(st.floats(0, 1e4))
def test_penalty_continuous_at_bound(energy):
    assert penalty(m(500 - 1e-9, energy), SLA) == pytest.approx(penalty(m(500 + 1e-9, energy), SLA))


def test_latency_only_penalty():
    assert penalty_latency_only(m(400, 1)) == 400
    assert penalty_latency_only(m(0, 1)) == 0


@given(st.floats(0, 1e4), st.floats(0, 1e4))
def test_latency_only_orders_like_tail(a, b):
    assert (penalty_latency_only(m(a, 1)) < penalty_latency_only(m(b, 5))) == (a < b)


def test_gp_single_observation_interpolates():
    gp = gp_fit([[0.3, 0.7]], [2.5])
    mu, _ = gp.predict([[0.3, 0.7]])
    assert mu[0] == pytest.approx(2.5, abs=math.sqrt(gp.noise_var))


def test_gp_matches_explicit_solve():
    rng = np.random.default_rng(0)
    x = rng.random((5, 2))
    y = 1.5 * x[:, 0] - 0.7 * x[:, 1] + 0.2
    xs = np.vstack([x, rng.random((4, 2))])
    gp = GpSurrogate.with_hyperparameters(x, y, (0.5, 1.0), 1e-4)
    mu, var = gp.predict(xs)
    mu_o, var_o = gp_posterior(x, y, xs, (0.5, 1.0), 1e-4)
    assert np.allclose(mu, mu_o, atol=1e-6)
    assert np.allclose(var, var_o, atol=1e-6)


def test_gp_duplicate_points_with_disagreement():
    gp = gp_fit([[0.5, 0.5], [0.5, 0.5], [0.1, 0.9]], [1.0, 2.0, 0.0])
    mu, var = gp.predict([[0.5, 0.5]])
    assert np.isfinite(mu).all() and np.isfinite(var).all()


def test_gp_variance_at_observed_points_bounded_by_noise():
    rng = np.random.default_rng(3)
    x = rng.random((12, 2))
    y = np.sin(4 * x[:, 0]) + x[:, 1] ** 2
    gp = gp_fit(x, y)
    _, var = gp.predict(x)
    assert np.all(var <= (gp.noise_var + gp.jitter) * gp.y_std ** 2 + 1e-12)


def test_gp_hyperparameters_come_from_grid():
    rng = np.random.default_rng(4)
    x = rng.random((10, 2))
    gp = gp_fit(x, x[:, 0])
    assert set(gp.length_scales) <= {0.05, 0.1, 0.2, 0.5, 1.0}
    assert gp.noise_var in (1e-4, 1e-2, 1e-1)


def test_ei_closed_forms():
    assert expected_improvement(3.0, 0.0, 3.0) == 0
    assert expected_improvement(2.0, 0.0, 3.0) == 1
    assert expected_improvement(0.0, 1.0, 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi))


def test_ei_matches_monte_carlo():
    rng = np.random.default_rng(5)
    for _ in range(10):
        mu, sigma, best = rng.normal(0, 1), rng.uniform(0.2, 2), rng.normal(0, 1)
        want = mc_expected_improvement(mu, sigma, best, seed=int(rng.integers(1 << 30)))
        assert expected_improvement(mu, sigma, best) == pytest.approx(want, rel=0.02, abs=1e-3)


@given(st.floats(-10, 10), st.floats(0, 10), st.floats(-10, 10))
def test_ei_non_negative(mu, sigma, best):
    assert expected_improvement(mu, sigma, best) >= 0


def test_suggest_prefers_unobserved_candidate():
    space = ConfigSpace((0, 2), (2.0,))
    gp = GpSurrogate.with_hyperparameters(space.normalize([Config(0, 2.0)]), [1.0], (0.5, 0.5), 1e-4)
    assert suggest_next(gp, [Config(0, 2.0), Config(2, 2.0)], 1.0, space) == Config(2, 2.0)


def test_suggest_is_total_on_observed_candidates():
    cands = enumerate_grid(ConfigSpace((0, 2, 4), (1.0, 2.0)))
    x = ConfigSpace((0, 2, 4), (1.0, 2.0)).normalize(cands)
    gp = GpSurrogate.with_hyperparameters(x, np.arange(len(cands), dtype=float), (0.5, 0.5), 1e-4)
    assert suggest_next(gp, cands, -100.0, ConfigSpace((0, 2, 4), (1.0, 2.0))) in cands


def test_suggest_subsamples_large_grids_deterministically():
    cands = enumerate_grid(SPACE)
    gp = GpSurrogate.with_hyperparameters(SPACE.normalize(cands[:3]), [1.0, 2.0, 3.0], (0.5, 0.5), 1e-2)
    a = suggest_next(gp, cands, 0.5, SPACE, seed=1, max_candidates=100)
    assert a == suggest_next(gp, cands, 0.5, SPACE, seed=1, max_candidates=100)


def test_latin_hypercube_is_stratified():
    pts = latin_hypercube(SPACE, 10, np.random.default_rng(0))
    x = SPACE.normalize(pts)
    for axis in range(2):
        strata = sorted(np.minimum((x[:, axis] * 10).astype(int), 9))
        assert len(set(strata)) >= 8


def test_knob_restriction_keeps_anchor():
    cfg = BayOpConfig(n_trials=14, knobs="dvfs_only", anchor_itr=100)
    res = run_bayopt(ModelSystem(SURFACE, SPACE), SLA, cfg, SPACE)
    assert {t.config.itr_us for t in res.trials} == {100}
    cfg = BayOpConfig(n_trials=14, knobs="itr_only")
    res = run_bayopt(ModelSystem(SURFACE, SPACE), SLA, cfg, SPACE)
    assert {t.config.dvfs_ghz for t in res.trials} == {SPACE.f_max}
    assert len(candidate_grid(SPACE, "itr_only")) == len(SPACE.itr_values)


def test_bayop_config_validation():
    for bad in (dict(n_init=0), dict(n_init=31), dict(knobs="all"), dict(penalty="x"),
                dict(trial_window_s=0)):
        with pytest.raises(ConfigError):
            BayOpConfig(**bad)


def test_pure_quasi_random_budget():
    res = run_bayopt(ModelSystem(SURFACE, SPACE), SLA, BayOpConfig(n_trials=8, n_init=8), SPACE)
    assert len(res.trials) == 8
    assert res.best == min(res.trials, key=lambda t: t.penalty).config


def test_same_seed_same_trials():
    a = run_bayopt(ModelSystem(SURFACE, SPACE), SLA, BayOpConfig(seed=4, n_trials=16), SPACE)
    b = run_bayopt(ModelSystem(SURFACE, SPACE), SLA, BayOpConfig(seed=4, n_trials=16), SPACE)
    assert a.trials == b.trials


def test_best_so_far_non_increasing_and_penalty_exact():
    res = run_bayopt(ModelSystem(SURFACE, SPACE), SLA, BayOpConfig(seed=2, n_trials=16), SPACE)
    bsf = res.best_so_far()
    assert all(b <= a for a, b in zip(bsf, bsf[1:]))
    assert all(t.penalty == penalty(t.measurement, SLA) for t in res.trials)
    assert len(set(t.config for t in res.trials)) == len(res.trials)


def test_best_config_is_reapplied():
    system = ModelSystem(SURFACE, SPACE)
    res = run_bayopt(system, SLA, BayOpConfig(n_trials=12), SPACE)
    assert system.config == res.best


def test_failed_measurements_do_not_abort():
    space = ConfigSpace((0, 2, 4, 6), (1.0, 2.0))
    table = {Config(2, 2.0): Measurement(100, 5.0, 1.0), Config(4, 1.0): Measurement(100, 3.0, 1.0)}
    system = ReplaySystem(table)
    res = run_bayopt(system, SLA, BayOpConfig(n_trials=8, n_init=3, trial_window_s=1.0), space)
    assert len(res.trials) == 8
    failed = [t for t in res.trials if t.failed]
    assert failed and all(t.penalty == math.inf for t in failed)
    assert res.best == Config(4, 1.0)
    assert system.applied[-1] == Config(4, 1.0)


def test_all_trials_failing_returns_inf_best():
    res = run_bayopt(ReplaySystem({}), SLA, BayOpConfig(n_trials=4, n_init=2), ConfigSpace((0, 2), (1.0, 2.0)))
    assert all(t.failed for t in res.trials)
    assert res.best_trial.penalty == math.inf


def test_latency_only_penalty_run():
    res = run_bayopt(ModelSystem(SURFACE, SPACE), SLA, BayOpConfig(penalty="latency_only", n_trials=20), SPACE)
    # the fastest config on this surface is (itr=0, f_max)
    assert res.best_trial.measurement.tail_latency_us <= 1.2 * (150 / 3.0 ** 1.3)


def test_trials_csv(tmp_path):
    res = run_bayopt(ModelSystem(SURFACE, SPACE), SLA, BayOpConfig(n_trials=10), SPACE)
    write_trials_csv(tmp_path / "t.csv", res)
    with open(tmp_path / "t.csv") as fh:
        recs = list(csv.DictReader(fh))
    assert len(recs) == 10
    applied = [r for r in recs if r["applied"] == "true"]
    assert len(applied) == 1 and int(applied[0]["trial"]) == res.best_trial.index
