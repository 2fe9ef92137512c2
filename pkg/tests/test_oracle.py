import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sfpsg.engine import Checkpoint, RunConfig, RunRecord, StageLog
from sfpsg.errors import IndexMismatch, NoConvergence
from sfpsg.oracle import (
    backward_induction, compare, fixed_point_residual, integrate_ode, ode_rhs,
    solve_stage_nash, verify_solution,
)
from sfpsg.response import PerturbationSpec

from conftest import COORDINATION, MATCHING_PENNIES, make_acceptance_game, single_state_game
from oracles import bisection_2x2, grid_search_2x2, logit_pair


def zero_sum_2x2(seed):
    a = np.random.default_rng(seed).uniform(-1, 1, (2, 2))
    return a, -a


# -- stage solver -------------------------------------------------------------------------

@pytest.mark.parametrize("tau", [0.1, 1.0, 7.0])
def test_matching_pennies_is_uniform(tau):
    sol = solve_stage_nash([MATCHING_PENNIES, -MATCHING_PENNIES], PerturbationSpec(tau))
    for p in sol.profile:
        np.testing.assert_array_equal(p, [0.5, 0.5])
    assert sol.residual == 0.0 and sol.unique


def test_identical_interest_example_is_unique():
    r = np.array([[1.0, 0.0], [0.0, 0.0]])
    perturb = PerturbationSpec(2.0)
    sol = solve_stage_nash([r, r], perturb)
    assert sol.unique and len(sol.fixed_points) == 1
    # residual recomputed by hand with the two-action logit formula
    p, q = sol.profile[0][0], sol.profile[1][0]
    assert abs(p - logit_pair(q, 0.0, 2.0)) <= 1e-10
    assert abs(q - logit_pair(p, 0.0, 2.0)) <= 1e-10


def test_identical_interest_small_tau_reports_multiple_points():
    r = np.eye(2)
    sol = solve_stage_nash([r, r], PerturbationSpec(0.1))
    assert not sol.unique
    assert len(sol.fixed_points) >= 2


@pytest.mark.parametrize("seed", range(8))
def test_zero_sum_matches_bisection(seed):
    a, b = zero_sum_2x2(seed)
    tau = 0.3 + seed * 0.2
    sol = solve_stage_nash([a, b], PerturbationSpec(tau))
    p, q = bisection_2x2(a, b, tau)
    assert abs(sol.profile[0][0] - p) <= 1e-8
    assert abs(sol.profile[1][0] - q) <= 1e-8


@pytest.mark.parametrize("seed", range(3))
def test_matches_dense_grid_search(seed):
    a, b = zero_sum_2x2(100 + seed)
    if seed == 2:
        b = a.copy()   # identical interest
    sol = solve_stage_nash([a, b], PerturbationSpec(1.0))
    p, q = grid_search_2x2(a, b, 1.0)
    assert abs(sol.profile[0][0] - p) <= 2e-4
    assert abs(sol.profile[1][0] - q) <= 2e-4


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.3, 3.0))
def test_opponent_only_shift_leaves_fixed_point_unchanged(seed, tau):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1, 1, (2, 3))
    rows = [a, -a]
    shifted = [a + rng.uniform(-3, 3, (1, 3)), -a + rng.uniform(-3, 3, (2, 1))]
    perturb = PerturbationSpec(tau)
    x, y = solve_stage_nash(rows, perturb).profile, solve_stage_nash(shifted, perturb).profile
    for u, v in zip(x, y):
        np.testing.assert_allclose(u, v, atol=1e-9)


def test_no_convergence_is_reported():
    r = np.array([[2.0, -1.0], [-1.0, 1.0]])
    with pytest.raises(NoConvergence) as info:
        solve_stage_nash([r, -r], PerturbationSpec(0.01), damping=1.0, max_iter=3)
    assert info.value.iterations == 3


# -- backward induction ---------------------------------------------------------------------

def test_horizon_one_is_stage_game(acceptance_game):
    perturb = PerturbationSpec(2.0)
    sol = backward_induction(acceptance_game, 1, perturb)
    np.testing.assert_array_equal(sol.q[0], acceptance_game.payoffs)
    for s in range(2):
        stage = solve_stage_nash([acceptance_game.payoffs[i, s] for i in range(2)], perturb)
        for x, y in zip(sol.pi[0][s], stage.profile):
            np.testing.assert_allclose(x, y, atol=1e-12)


def test_zero_discount_gives_identical_stages():
    g = make_acceptance_game(discounts=(0.0, 0.0))
    sol = backward_induction(g, 4, PerturbationSpec(2.0))
    for k in range(4):
        np.testing.assert_array_equal(sol.q[k], g.payoffs)
        for s in range(2):
            for x, y in zip(sol.pi[k][s], sol.pi[3][s]):
                np.testing.assert_allclose(x, y, atol=1e-10)


def test_horizon_two_hand_computed(acceptance_game):
    tau = 2.0
    sol = backward_induction(acceptance_game, 2, PerturbationSpec(tau))
    # terminal stage: pennies is uniform with value 0; coordination from bisection
    p, q = bisection_2x2(COORDINATION, COORDINATION, tau)
    v1 = {0: 0.0, 1: p * q * 1.0 + (1 - p) * (1 - q) * 0.5}
    np.testing.assert_allclose(sol.values[1, 0], [0.0, 0.0], atol=1e-10)
    np.testing.assert_allclose(sol.values[1, 1], [v1[1], v1[1]], atol=1e-9)
    gammas = (0.9, 0.8)
    # state 0 is steered by player 0: action 0 -> (0.8, 0.2), action 1 -> (0.2, 0.8)
    for i, sign in ((0, 1.0), (1, -1.0)):
        g = gammas[i]
        expect = np.array([
            [sign * 1 + g * 0.2 * v1[1], sign * -1 + g * 0.2 * v1[1]],
            [sign * -1 + g * 0.8 * v1[1], sign * 1 + g * 0.8 * v1[1]],
        ])
        np.testing.assert_allclose(sol.q[0, i, 0], expect, atol=1e-9)
    # state 1 is steered by player 1
    for i in range(2):
        g = gammas[i]
        expect = COORDINATION + g * np.array([[0.2 * v1[1], 0.8 * v1[1]]] * 2)
        np.testing.assert_allclose(sol.q[0, i, 1], expect, atol=1e-9)


def test_verify_solution_on_acceptance_game(acceptance_game):
    sol = backward_induction(acceptance_game, 6, PerturbationSpec(2.0))
    checks = verify_solution(acceptance_game, sol)
    assert checks["fixed_point_residual"] <= 1e-10
    assert checks["recursion_residual"] <= 1e-12
    assert checks["terminal_exact"] and checks["unique"]
    assert checks["max_decomposition_residual"] <= 1e-10


def test_verify_solution_catches_tampering(acceptance_game):
    sol = backward_induction(acceptance_game, 3, PerturbationSpec(2.0))
    sol.q[1, 0, 0, 0, 0] += 1e-6
    assert verify_solution(acceptance_game, sol)["recursion_residual"] > 1e-7


def test_slot_maps_to_stage_from_the_end(acceptance_game):
    sol = backward_induction(acceptance_game, 3, PerturbationSpec(2.0))
    assert sol.stage(0) == 2 and sol.stage(2) == 0
    np.testing.assert_array_equal(sol.q_at_m(0, 1, 0), acceptance_game.payoffs[0, 1])
    with pytest.raises(IndexMismatch):
        sol.stage(3)


# -- ODE ------------------------------------------------------------------------------------

def test_ode_vanishes_at_fixed_point():
    a, b = zero_sum_2x2(5)
    perturb = PerturbationSpec(0.7)
    sol = solve_stage_nash([a, b], perturb)
    for d in ode_rhs(sol.profile, [a, b], perturb):
        assert np.max(np.abs(d)) <= 1e-9
    for d in ode_rhs([np.full(2, 0.5)] * 2, [MATCHING_PENNIES, -MATCHING_PENNIES], perturb):
        np.testing.assert_array_equal(d, 0.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ode_tangents_sum_to_zero(seed):
    rng = np.random.default_rng(seed)
    q = rng.uniform(-1, 1, (3, 4))
    profile = [rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(4))]
    for d in ode_rhs(profile, [q, -q], PerturbationSpec(0.5)):
        assert abs(d.sum()) <= 1e-12


def test_euler_reaches_fixed_point():
    a, b = zero_sum_2x2(17)
    perturb = PerturbationSpec(1.0)
    start = [np.array([0.9, 0.1]), np.array([0.2, 0.8])]
    end = integrate_ode(start, [a, b], perturb, step=1e-3, n_steps=20_000)
    target = solve_stage_nash([a, b], perturb).profile
    for x, y in zip(end, target):
        assert np.max(np.abs(x - y)) <= 1e-4


# -- compare -----------------------------------------------------------------------------------

def _oracle_record(game, sol, epochs=(10, 20)):
    """A record whose checkpoints hold the oracle's own strategies and Q."""
    n, S, H = game.n_players, game.n_states, sol.horizon
    cps = []
    for t in epochs:
        beliefs = [np.stack([[sol.pi_at_m(m, s)[j] for s in range(S)] for m in range(H)])
                   for j in range(n)]
        q = [np.stack([[sol.q_at_m(m, s, i) for s in range(S)] for m in range(H)])
             for i in range(n)]
        cps.append(Checkpoint(t, beliefs, q, np.zeros((H, S, n)), np.zeros((H, S), int)))
    cfg = RunConfig(epochs=max(epochs), tau=sol.tau)
    return RunRecord(0, cfg, game, StageLog(), cps, {})


def test_self_comparison_is_zero(acceptance_game):
    sol = backward_induction(acceptance_game, 4, PerturbationSpec(2.0))
    cmp = compare(_oracle_record(acceptance_game, sol), sol)
    assert cmp.final_pi == 0.0 and cmp.final_q == 0.0
    assert cmp.max_m == 3 and not cmp.ambiguous
    assert len(cmp.rows) == 2 * 4 * 2 * 2


def test_compare_needs_long_enough_horizon(acceptance_game):
    long = backward_induction(acceptance_game, 4, PerturbationSpec(2.0))
    short = backward_induction(acceptance_game, 2, PerturbationSpec(2.0))
    with pytest.raises(IndexMismatch):
        compare(_oracle_record(acceptance_game, long), short)


def test_compare_rejects_other_game(acceptance_game):
    sol = backward_induction(single_state_game(COORDINATION, COORDINATION), 2,
                             PerturbationSpec(1.0))
    other = backward_induction(acceptance_game, 2, PerturbationSpec(1.0))
    with pytest.raises(IndexMismatch):
        compare(_oracle_record(acceptance_game, other), sol)


def test_trend_detects_shrinking_series():
    from sfpsg.oracle import Comparison

    falling = Comparison([], [(t, 1.0 / t) for t in range(1, 11)], [], 0.1, 0.0, [], 0)
    flat = Comparison([], [(t, 0.3) for t in range(1, 11)], [], 0.3, 0.0, [], 0)
    assert falling.trend_ok() and not flat.trend_ok()


def test_fixed_point_residual_is_independent_of_solver():
    a, b = zero_sum_2x2(3)
    perturb = PerturbationSpec(0.8)
    profile = solve_stage_nash([a, b], perturb).profile
    assert fixed_point_residual([a, b], profile, perturb) <= 1e-10
    p, q = bisection_2x2(a, b, 0.8)
    assert abs(p - logit_pair(a[0] @ [q, 1 - q], a[1] @ [q, 1 - q], 0.8)) <= 1e-12
