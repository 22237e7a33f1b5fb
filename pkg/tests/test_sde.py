"""Simulator contract: grids, policies, determinism, convergence."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import picontrol.bench_gbm as bg
from picontrol.sde import (AnalyticPolicy, BasisSet, ParametrizedPolicy,
                           SimulationError, TimeGrid, ZeroPolicy, replay,
                           simulate)
from _util import free_problem, frozen_problem


# ---------------------------------------------------------------------------
# TimeGrid

def test_grid_endpoint_is_exact():
    g = TimeGrid(0.0, 1.0, 7)
    assert g.times[-1] == 1.0
    assert g.times[0] == 0.0
    assert len(g.times) == 8
    assert g.dt == pytest.approx(1.0 / 7)


def test_grid_rejects_bad_spans():
    with pytest.raises(ValueError):
        TimeGrid(1.0, 1.0, 10)
    with pytest.raises(ValueError):
        TimeGrid(0.0, -1.0, 10)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 1.0, 0)


def test_node_index_is_left_node():
    g = TimeGrid(0.0, 1.0, 4)
    assert g.node_index(0.0) == 0
    assert g.node_index(0.24) == 0
    assert g.node_index(0.25) == 1
    assert g.node_index(0.999) == 3
    assert g.node_index(1.0) == 3  # clamped to the last step


@given(n_steps=st.integers(1, 300), frac=st.floats(0.0, 1.0, exclude_max=True))
@settings(max_examples=200, deadline=None)
def test_node_index_brackets_t(n_steps, frac):
    g = TimeGrid(-1.5, 2.5, n_steps)
    t = g.t0 + frac * (g.t1 - g.t0)
    k = g.node_index(t)
    assert 0 <= k <= n_steps - 1
    assert g.times[k] <= t + 1e-9
    assert t < g.times[k + 1] + 1e-9


# ---------------------------------------------------------------------------
# simulate

def test_frozen_dynamics_keep_state_constant():
    ens = simulate(frozen_problem(x0=0.5), ZeroPolicy(1), 50, seed=0)
    assert np.all(ens.states == 0.5)
    assert np.all(ens.controls == 0.0)


def test_initial_states_equal_x0():
    prob = free_problem(dim=2, x0=1.25)
    ens = simulate(prob, ZeroPolicy(2), 64, seed=5)
    assert np.all(ens.states[:, 0] == 1.25)


def test_gbm_terminal_mean_matches_closed_form():
    # E X(1) = x0 e^{1/2}; Euler bias at dt = 0.01 is far below the noise band
    prob = bg.make_problem(bg.GBMSpec(n_steps=100))
    ens = simulate(prob, ZeroPolicy(1), 100_000, seed=11)
    x1 = ens.states[:, -1, 0]
    se = x1.std(ddof=1) / np.sqrt(len(x1))
    assert abs(x1.mean() - 0.5 * np.exp(0.5)) < 3 * se


def test_free_brownian_mean_and_covariance():
    prob = free_problem(dim=2, n_steps=10, t1=1.0)
    ens = simulate(prob, ZeroPolicy(2), 100_000, seed=12)
    d = ens.states[:, -1] - ens.states[:, 0]
    n = d.shape[0]
    assert np.all(np.abs(d.mean(axis=0)) < 4 / np.sqrt(n))
    cov = np.cov(d.T)
    assert np.all(np.abs(np.diag(cov) - 1.0) < 4 * np.sqrt(2.0 / n))
    assert abs(cov[0, 1]) < 4 / np.sqrt(n)


def test_same_seed_is_bit_identical_across_worker_counts():
    prob = free_problem(n_steps=50)
    a = simulate(prob, ZeroPolicy(1), 1000, seed=123, n_workers=1)
    b = simulate(prob, ZeroPolicy(1), 1000, seed=123, n_workers=4)
    c = simulate(prob, ZeroPolicy(1), 1000, seed=123, n_workers=3)
    assert np.array_equal(a.noise, b.noise)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.noise, c.noise)


def test_different_seeds_differ():
    prob = free_problem(n_steps=5)
    a = simulate(prob, ZeroPolicy(1), 10, seed=1)
    b = simulate(prob, ZeroPolicy(1), 10, seed=2)
    assert not np.array_equal(a.noise, b.noise)


def test_replay_reconstructs_states_exactly(gbm_spec):
    prob = bg.make_log_problem(bg.GBMSpec(n_steps=40))
    pol = bg.log_optimal_policy(gbm_spec)
    ens = simulate(prob, pol, 200, seed=7)
    again = replay(prob, pol, ens.noise)
    assert np.array_equal(again.states, ens.states)
    assert np.array_equal(again.controls, ens.controls)


def test_stored_controls_match_policy_at_stored_states(gbm_spec):
    prob = bg.make_log_problem(bg.GBMSpec(n_steps=25))
    pol = bg.log_optimal_policy(gbm_spec)
    ens = simulate(prob, pol, 100, seed=8)
    for k in (0, 10, 24):
        u = pol.evaluate(prob.grid.times[k], ens.states[:, k])
        assert np.allclose(u, ens.controls[:, k], atol=0, rtol=0)


def test_nonfinite_state_error_names_path_and_step():
    def explosive_drift(t, x):
        return x * 1e40

    prob = free_problem(n_steps=10)
    prob = type(prob)(dim_x=1, dim_w=1, drift=explosive_drift,
                      diffusion=prob.diffusion, running_cost=prob.running_cost,
                      terminal_cost=prob.terminal_cost, x0=np.array([1.0]),
                      grid=prob.grid)
    with np.errstate(over="ignore"), pytest.raises(SimulationError) as err:
        simulate(prob, ZeroPolicy(1), 8, seed=0)
    assert err.value.path_index >= 0
    assert err.value.step >= 0
    assert "path" in str(err.value) and "step" in str(err.value)


def test_nonfinite_control_error():
    bad = AnalyticPolicy(func=lambda t, x: np.full(x.shape[0], np.nan), dim_w=1)
    with pytest.raises(SimulationError) as err:
        simulate(free_problem(n_steps=4), bad, 5, seed=0)
    assert "control" in str(err.value)


def test_zero_paths_and_negative_seed_rejected():
    prob = free_problem(n_steps=3)
    with pytest.raises(ValueError):
        simulate(prob, ZeroPolicy(1), 0, seed=0)
    with pytest.raises(ValueError):
        simulate(prob, ZeroPolicy(1), 5, seed=-1)


def test_ensemble_arrays_are_read_only():
    ens = simulate(free_problem(n_steps=3), ZeroPolicy(1), 5, seed=0)
    with pytest.raises(ValueError):
        ens.states[0, 0, 0] = 99.0


# ---------------------------------------------------------------------------
# policies and bases

def test_parametrized_policy_uses_left_node_coefficients():
    basis = BasisSet(1, lambda t, x: np.ones((x.shape[0], 1)), "const")
    grid = TimeGrid(0.0, 1.0, 4)
    A = np.arange(4, dtype=float).reshape(4, 1, 1)
    pol = ParametrizedPolicy(coefficients=A, basis=basis, ctrl_grid=grid)
    x = np.zeros((3, 1))
    assert np.all(pol.evaluate(0.0, x) == 0.0)
    assert np.all(pol.evaluate(0.26, x) == 1.0)
    assert np.all(pol.evaluate(0.99, x) == 3.0)


def test_parametrized_policy_validates_shapes():
    basis = BasisSet(2, lambda t, x: np.ones((x.shape[0], 2)), "pair")
    grid = TimeGrid(0.0, 1.0, 3)
    with pytest.raises(ValueError):
        ParametrizedPolicy(np.zeros((2, 1, 2)), basis, grid)   # wrong node count
    with pytest.raises(ValueError):
        ParametrizedPolicy(np.zeros((3, 1, 1)), basis, grid)   # wrong k_basis
    with pytest.raises(ValueError):
        ParametrizedPolicy(np.full((3, 1, 2), np.nan), basis, grid)


def test_basis_feature_count_is_enforced():
    bad = BasisSet(3, lambda t, x: np.ones((x.shape[0], 2)), "lying")
    with pytest.raises(ValueError):
        bad(0.0, np.zeros((4, 1)))


# ---------------------------------------------------------------------------
# Euler convergence

def test_weak_error_halves_when_dt_halves():
    # Coupled comparison against the exact solution X(1) = x0 exp(W(1))
    # (drift x/2 cancels the Ito correction), so the weak error of the mean is
    # measured with the statistical noise differenced out.
    fine = bg.make_problem(bg.GBMSpec(n_steps=80))
    ens = simulate(fine, ZeroPolicy(1), 200_000, seed=8)
    x_exact = 0.5 * np.exp(ens.noise.sum(axis=1)[:, 0])
    errs = [(ens.states[:, -1, 0] - x_exact).mean()]
    for n_steps, fold in ((40, 2), (20, 4)):
        noise = ens.noise.reshape(-1, n_steps, fold, 1).sum(axis=2)
        coarse = replay(bg.make_problem(bg.GBMSpec(n_steps=n_steps)),
                        ZeroPolicy(1), noise)
        errs.append((coarse.states[:, -1, 0] - x_exact).mean())
    ratio_cm = errs[2] / errs[1]
    ratio_mf = errs[1] / errs[0]
    assert 1.5 <= ratio_cm <= 2.5
    assert 1.5 <= ratio_mf <= 2.5
