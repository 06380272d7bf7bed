"""Tests for the tabular MDP core."""

import numpy as np
import pytest

from htmdp.mdp import (
    FiniteMdp,
    IterationLimitError,
    action_gap,
    bellman_optimal_apply,
    greedy_policy,
    policy_evaluation,
    policy_iteration,
    policy_transition,
    resolvent_apply,
    value_iteration,
)

from oracles import bellman_sweeps, neumann_resolvent


def two_state_mdp(gamma=0.9):
    """Action 0 stays, action 1 swaps; r = [[1,0],[0,2]].

    Hand-solved optimum: V = (18, 20), pi* = (swap, stay),
    Q* = [[17.2, 18.0], [20.0, 16.2]].
    """
    p = np.zeros((2, 2, 2))
    p[0, 0, 0] = p[1, 0, 1] = 1.0  # stay
    p[0, 1, 1] = p[1, 1, 0] = 1.0  # swap
    r = np.array([[1.0, 0.0], [2.0, 0.0]])
    return FiniteMdp(p=p, r=r, gamma=gamma)


def random_mdp(rng, n=4, a=3, gamma=0.9):
    p = rng.random((n, a, n)) + 1e-3
    p /= p.sum(axis=2, keepdims=True)
    r = rng.normal(size=(n, a))
    return FiniteMdp(p=p, r=r, gamma=gamma)


class TestFiniteMdp:
    def test_validation_rejects_bad_rows(self):
        p = np.ones((2, 1, 2))  # rows sum to 2
        with pytest.raises(ValueError, match="sum to 1"):
            FiniteMdp(p=p, r=np.zeros((2, 1)), gamma=0.9)

    def test_validation_rejects_bad_discount(self):
        p = np.zeros((1, 1, 1))
        p[0, 0, 0] = 1.0
        with pytest.raises(ValueError, match="discount"):
            FiniteMdp(p=p, r=np.zeros((1, 1)), gamma=1.0)

    def test_validation_rejects_nonfinite_reward(self):
        p = np.zeros((1, 1, 1))
        p[0, 0, 0] = 1.0
        with pytest.raises(ValueError, match="reward"):
            FiniteMdp(p=p, r=np.array([[np.inf]]), gamma=0.9)


class TestBellman:
    def test_zero_fixed_point(self):
        mdp = two_state_mdp()
        zero_r = FiniteMdp(p=mdp.p, r=np.zeros_like(mdp.r), gamma=0.9)
        np.testing.assert_array_equal(bellman_optimal_apply(zero_r, np.zeros((2, 2))), 0.0)

    def test_single_application_adds_reward(self):
        p = np.ones((1, 1, 1))
        mdp = FiniteMdp(p=p, r=np.array([[1.0]]), gamma=0.9)
        assert bellman_optimal_apply(mdp, np.zeros((1, 1)))[0, 0] == 1.0

    def test_contraction_on_random_pairs(self):
        rng = np.random.default_rng(7)
        mdp = random_mdp(rng)
        for _ in range(100):
            q1 = rng.normal(size=(4, 3)) * 10
            q2 = rng.normal(size=(4, 3)) * 10
            lhs = np.abs(
                bellman_optimal_apply(mdp, q1) - bellman_optimal_apply(mdp, q2)
            ).max()
            assert lhs <= mdp.gamma * np.abs(q1 - q2).max() + 1e-12


class TestValueIteration:
    def test_geometric_series(self):
        p = np.ones((1, 1, 1))
        mdp = FiniteMdp(p=p, r=np.array([[1.0]]), gamma=0.9)
        res = value_iteration(mdp, tol=1e-10)
        # Q* = 1/(1-gamma) = 10
        assert abs(res.q[0, 0] - 10.0) <= res.error_bound + 1e-10
        assert res.residual <= 1e-10

    def test_hand_solved_two_state(self):
        res = value_iteration(two_state_mdp(), tol=1e-12)
        expected = np.array([[17.2, 18.0], [20.0, 16.2]])
        np.testing.assert_allclose(res.q, expected, atol=1e-9)

    def test_matches_long_sweep_oracle(self):
        rng = np.random.default_rng(3)
        mdp = random_mdp(rng, n=3, gamma=0.9)
        res = value_iteration(mdp, tol=1e-10)
        np.testing.assert_allclose(res.q, bellman_sweeps(mdp, 10_000), atol=1e-8)

    def test_iteration_limit_error_carries_residual(self):
        mdp = two_state_mdp()
        with pytest.raises(IterationLimitError, match="residual") as exc:
            value_iteration(mdp, tol=1e-12, max_iterations=3)
        assert exc.value.residual > 0

    def test_fixed_point_residual(self):
        mdp = two_state_mdp()
        res = value_iteration(mdp, tol=1e-10)
        assert np.abs(bellman_optimal_apply(mdp, res.q) - res.q).max() <= 1e-10


class TestPolicyEvaluation:
    def test_hand_linear_solve(self):
        # 2-state deterministic cycle, r=(1,0), gamma=0.5:
        # V(0) = 1 + 0.5*V(1), V(1) = 0 + 0.5*V(0) -> V(0) = 4/3.
        p = np.zeros((2, 1, 2))
        p[0, 0, 1] = 1.0
        p[1, 0, 0] = 1.0
        mdp = FiniteMdp(p=p, r=np.array([[1.0], [0.0]]), gamma=0.5)
        q = policy_evaluation(mdp, np.array([0, 0]))
        np.testing.assert_allclose(q[0, 0], 4.0 / 3.0, rtol=1e-12)

    def test_constant_reward_fixed_point(self):
        rng = np.random.default_rng(0)
        mdp = random_mdp(rng)
        const = FiniteMdp(p=mdp.p, r=np.full_like(mdp.r, 2.0), gamma=0.9)
        q = policy_evaluation(const, np.zeros(4, dtype=int))
        np.testing.assert_allclose(q, 2.0 / 0.1, rtol=1e-10)

    def test_optimal_policy_matches_value_iteration(self):
        mdp = two_state_mdp()
        q_star = value_iteration(mdp, tol=1e-12).q
        q_pi = policy_evaluation(mdp, greedy_policy(q_star))
        np.testing.assert_allclose(q_pi, q_star, atol=1e-8)

    def test_stay_policy_hand_solution(self):
        # Always-stay on the two-state MDP: V = (10, 20).
        q = policy_evaluation(two_state_mdp(), np.array([0, 0]))
        np.testing.assert_allclose(q, [[10.0, 18.0], [20.0, 9.0]], rtol=1e-12)


class TestPolicyIteration:
    def test_matches_value_iteration(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            mdp = random_mdp(rng, n=5, a=3, gamma=0.95)
            q_pi = policy_iteration(mdp)
            q_vi = value_iteration(mdp, tol=1e-12).q
            np.testing.assert_allclose(q_pi, q_vi, atol=1e-9)


class TestGreedyAndGap:
    def test_greedy_and_ties(self):
        q = np.array([[1.0, 0.0], [0.5, 0.5]])
        np.testing.assert_array_equal(greedy_policy(q), [0, 0])

    def test_shift_invariance(self):
        rng = np.random.default_rng(5)
        q = rng.normal(size=(6, 4))
        np.testing.assert_array_equal(greedy_policy(q), greedy_policy(q + 3.7))

    def test_gap_basic(self):
        q = np.array([[1.0, 0.0], [1.0, 0.0]])
        per_state, global_gap = action_gap(q)
        np.testing.assert_array_equal(per_state, [1.0, 1.0])
        assert global_gap == 1.0

    def test_gap_identical_columns(self):
        q = np.tile(np.array([[2.0], [3.0]]), (1, 2))
        assert action_gap(q)[1] == 0.0

    def test_gap_needs_two_actions(self):
        with pytest.raises(ValueError, match="two actions"):
            action_gap(np.ones((3, 1)))

    def test_gap_perturbation_at_argmin(self):
        rng = np.random.default_rng(9)
        q = rng.normal(size=(5, 3))
        per_state, global_gap = action_gap(q)
        s = int(np.argmin(per_state))
        eps = 0.01
        q2 = q.copy()
        q2[s, np.argmax(q[s])] += eps
        per2, global2 = action_gap(q2)
        if int(np.argmin(per2)) == s:
            assert abs(global2 - (global_gap + eps)) < 1e-12

    def test_gap_decay_under_perturbation(self):
        rng = np.random.default_rng(21)
        for _ in range(50):
            q = rng.normal(size=(6, 3)) * 5
            eps = float(rng.random()) * 0.5
            q2 = q + rng.uniform(-eps, eps, size=q.shape)
            bound = np.abs(q2 - q).max()
            assert action_gap(q2)[1] >= action_gap(q)[1] - 2 * bound - 1e-12

    def test_state_mask(self):
        q = np.array([[1.0, 0.0], [5.0, 0.0]])
        _, masked = action_gap(q, state_mask=np.array([False, True]))
        assert masked == 5.0


class TestPolicyTransitionAndResolvent:
    def test_rows_stochastic(self):
        rng = np.random.default_rng(2)
        mdp = random_mdp(rng)
        m = policy_transition(mdp, np.array([0, 1, 2, 0]))
        np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-12)

    def test_deterministic_single_entry(self):
        mdp = two_state_mdp()
        m = policy_transition(mdp, np.array([1, 0]))
        assert ((m > 0).sum(axis=1) == 1).all()

    def test_constant_vector_preserved(self):
        rng = np.random.default_rng(4)
        mdp = random_mdp(rng)
        m = policy_transition(mdp, np.array([1, 1, 0, 2]))
        np.testing.assert_allclose(m @ np.ones(12), 1.0, atol=1e-12)

    def test_resolvent_constant_input(self):
        mdp = two_state_mdp()
        y = resolvent_apply(mdp, np.array([0, 1]), np.ones((2, 2)))
        np.testing.assert_allclose(y, 1.0 / (1.0 - 0.9), rtol=1e-10)

    def test_resolvent_zero(self):
        mdp = two_state_mdp()
        np.testing.assert_array_equal(resolvent_apply(mdp, np.array([0, 1]), np.zeros((2, 2))), 0.0)

    def test_resolvent_matches_neumann_series(self):
        rng = np.random.default_rng(13)
        mdp = random_mdp(rng)
        policy = np.array([2, 0, 1, 1])
        x = rng.normal(size=(4, 3))
        y = resolvent_apply(mdp, policy, x)
        np.testing.assert_allclose(y, neumann_resolvent(mdp, policy, x), atol=1e-8)

    def test_resolvent_norm_bound(self):
        rng = np.random.default_rng(17)
        mdp = random_mdp(rng, gamma=0.95)
        for _ in range(20):
            x = rng.normal(size=(4, 3))
            y = resolvent_apply(mdp, np.array([0, 0, 1, 2]), x)
            assert np.abs(y).max() <= np.abs(x).max() / (1 - 0.95) + 1e-9
