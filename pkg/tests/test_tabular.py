"""Exact dynamic-programming oracles on tiny MDPs."""

import numpy as np
import pytest

from marq import tabular
from marq.errors import CapabilityError, ParameterError, SupportError


def two_state_chain(gamma=0.9, stay_reward=1.0):
    """State 0 hops to absorbing state 1; staying in 1 pays ``stay_reward``."""
    transitions = np.zeros((2, 2, 2))
    transitions[0, 0, 1] = 1.0  # advance
    transitions[0, 1, 0] = 1.0  # stall
    transitions[1, :, 1] = 1.0  # absorbing
    rewards = np.array([[0.0, 0.0], [stay_reward, 0.0]])
    return tabular.TabularMDP(transitions, rewards, gamma)


class TestBellmanBackup:
    def test_zero_q_returns_rewards(self):
        rng = np.random.default_rng(0)
        mdp = tabular.random_mdp(rng, 4, 3)
        backup = tabular.bellman_optimality_backup(mdp, np.zeros((4, 3)))
        np.testing.assert_allclose(backup, mdp.rewards)

    def test_absorbing_zero_reward_state_stays_zero(self):
        transitions = np.zeros((2, 2, 2))
        transitions[0, :, 1] = 1.0
        transitions[1, :, 1] = 1.0
        rewards = np.array([[1.0, 2.0], [0.0, 0.0]])
        mdp = tabular.TabularMDP(transitions, rewards, 0.9)
        q = np.zeros((2, 2))
        for _ in range(50):
            q = tabular.bellman_optimality_backup(mdp, q)
        np.testing.assert_allclose(q[1], 0.0, atol=1e-15)

    def test_chain_fixed_point_matches_geometric_series(self):
        gamma = 0.9
        mdp = two_state_chain(gamma=gamma, stay_reward=1.0)
        q_star = tabular.value_iteration(mdp, tol=1e-14)
        loop_value = 1.0 / (1.0 - gamma)
        np.testing.assert_allclose(q_star[1, 0], loop_value, atol=1e-10)
        np.testing.assert_allclose(q_star[0, 0], gamma * loop_value, atol=1e-10)

    def test_contraction_in_sup_norm(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            mdp = tabular.random_mdp(rng, 5, 3, gamma=float(rng.uniform(0.3, 0.95)))
            q1 = rng.normal(size=(5, 3))
            q2 = rng.normal(size=(5, 3))
            lhs = np.max(
                np.abs(
                    tabular.bellman_optimality_backup(mdp, q1)
                    - tabular.bellman_optimality_backup(mdp, q2)
                )
            )
            assert lhs <= mdp.gamma * np.max(np.abs(q1 - q2)) + 1e-12

    def test_value_iteration_init_independent(self):
        rng = np.random.default_rng(2)
        mdp = tabular.random_mdp(rng, 6, 3, gamma=0.8)
        from_zero = tabular.value_iteration(mdp)
        from_random = tabular.value_iteration(mdp, q0=rng.normal(scale=10.0, size=(6, 3)))
        np.testing.assert_allclose(from_zero, from_random, atol=1e-10)


class TestPenalizedIterate:
    def test_zero_alpha_equals_plain_backup(self):
        rng = np.random.default_rng(3)
        mdp = tabular.random_mdp(rng, 4, 2)
        q = rng.normal(size=(4, 2))
        policy = tabular.random_positive_policy(rng, 4, 2)
        got = tabular.penalized_iterate(mdp, q, policy, alpha=0.0)
        np.testing.assert_allclose(got, tabular.bellman_optimality_backup(mdp, q))

    def test_matched_policies_shift_uniformly(self):
        rng = np.random.default_rng(4)
        mdp = tabular.random_mdp(rng, 5, 3)
        q = rng.normal(size=(5, 3))
        policy = tabular.random_positive_policy(rng, 5, 3)
        got = tabular.penalized_iterate(mdp, q, policy, alpha=0.7)
        np.testing.assert_allclose(
            got, tabular.bellman_optimality_backup(mdp, q) - 0.7, atol=1e-14
        )

    def test_matches_scripted_stationarity_formula(self):
        rng = np.random.default_rng(5)
        mdp = tabular.random_mdp(rng, 3, 3)
        q = rng.normal(size=(3, 3))
        policy = tabular.random_positive_policy(rng, 3, 3)
        behavior = tabular.random_positive_policy(rng, 3, 3)
        got = tabular.penalized_iterate(mdp, q, policy, alpha=0.4, behavior=behavior)
        backup = tabular.bellman_optimality_backup(mdp, q)
        for s in range(3):
            for a in range(3):
                expected = backup[s, a] - 0.4 * policy[s, a] / behavior[s, a]
                assert abs(got[s, a] - expected) < 1e-14


class TestCrossAgentIterate:
    def test_identical_policies_reduce_to_uniform_shift(self):
        rng = np.random.default_rng(6)
        mdp = tabular.random_mdp(rng, 4, 2)
        q = rng.normal(size=(4, 2))
        policy = tabular.random_positive_policy(rng, 4, 2)
        got = tabular.cross_agent_iterate(mdp, q, policy, policy, alpha=0.3)
        np.testing.assert_allclose(
            got, tabular.penalized_iterate(mdp, q, policy, alpha=0.3), atol=1e-14
        )

    def test_explicit_ratio_arithmetic(self):
        rng = np.random.default_rng(7)
        mdp = tabular.random_mdp(rng, 2, 2)
        q = np.zeros((2, 2))
        pi_l = np.full((2, 2), 0.5)
        pi_d = np.full((2, 2), 0.5)
        pi_l[0, 0], pi_l[0, 1] = 0.9, 0.1
        pi_d[0, 0], pi_d[0, 1] = 0.1, 0.9
        got = tabular.cross_agent_iterate(mdp, q, pi_l, pi_d, alpha=0.5)
        backup = tabular.bellman_optimality_backup(mdp, q)
        assert abs(got[0, 0] - (backup[0, 0] - 4.5)) < 1e-12

    def test_strict_underestimation_per_iterate(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            s, a = int(rng.integers(2, 8)), int(rng.integers(2, 5))
            mdp = tabular.random_mdp(rng, s, a)
            q = rng.normal(size=(s, a))
            pi_l = tabular.random_positive_policy(rng, s, a)
            pi_d = tabular.random_positive_policy(rng, s, a)
            got = tabular.cross_agent_iterate(mdp, q, pi_l, pi_d, alpha=0.1)
            assert np.all(got < tabular.bellman_optimality_backup(mdp, q))

    def test_fixed_point_lower_bounds_donor_optimum(self):
        rng = np.random.default_rng(9)
        mdp = tabular.random_mdp(rng, 2, 2, gamma=0.8)
        pi_l = tabular.random_positive_policy(rng, 2, 2)
        pi_d = tabular.random_positive_policy(rng, 2, 2)
        q_cross = tabular.iterate_to_fixed_point(mdp, pi_l, pi_d, alpha=1.0, tol=1e-12)
        q_star = tabular.value_iteration(mdp, tol=1e-12)
        assert np.all(q_cross < q_star)
        residual = tabular.cross_agent_iterate(mdp, q_cross, pi_l, pi_d, 1.0) - q_cross
        assert np.max(np.abs(residual)) < 1e-10

    def test_alpha_must_be_positive(self):
        rng = np.random.default_rng(10)
        mdp = tabular.random_mdp(rng, 2, 2)
        policy = tabular.random_positive_policy(rng, 2, 2)
        with pytest.raises(ParameterError):
            tabular.cross_agent_iterate(mdp, np.zeros((2, 2)), policy, policy, alpha=0.0)

    def test_zero_donor_probability_rejected(self):
        rng = np.random.default_rng(11)
        mdp = tabular.random_mdp(rng, 2, 2)
        policy = tabular.random_positive_policy(rng, 2, 2)
        bad = policy.copy()
        bad[0, 0] = 0.0
        with pytest.raises(SupportError):
            tabular.cross_agent_iterate(mdp, np.zeros((2, 2)), policy, bad, alpha=0.5)


class TestLimitsAndIO:
    def test_oversized_mdp_rejected(self):
        transitions = np.full((17, 2, 17), 1.0 / 17)
        rewards = np.zeros((17, 2))
        with pytest.raises(CapabilityError):
            tabular.TabularMDP(transitions, rewards, 0.9)

    def test_nonstochastic_rows_rejected(self):
        transitions = np.zeros((2, 2, 2))
        transitions[:, :, 0] = 0.7  # rows sum to 0.7
        with pytest.raises(ParameterError):
            tabular.TabularMDP(transitions, np.zeros((2, 2)), 0.9)

    def test_text_round_trip(self, tmp_path):
        rng = np.random.default_rng(12)
        mdp = tabular.random_mdp(rng, 3, 2, gamma=0.85)
        path = tmp_path / "mdp.txt"
        path.write_text(tabular.dump_mdp_text(mdp))
        loaded = tabular.load_mdp_file(path)
        assert loaded.gamma == mdp.gamma
        np.testing.assert_array_equal(loaded.transitions, mdp.transitions)
        np.testing.assert_array_equal(loaded.rewards, mdp.rewards)
