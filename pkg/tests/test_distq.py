"""Distributional Q: mean values, policies, Bellman targets, quantile loss."""

import math

import numpy as np
import pytest

from marq import distq, numkit
from marq.errors import CheckpointError, ParameterError
from marq.replay import Transition


def constant_output_qnet(per_action_values, num_quantiles, obs_width=2):
    """Zero-weight network whose biases pin each action's quantiles."""
    num_actions = len(per_action_values)
    net = numkit.zeros_dense([obs_width, num_actions * num_quantiles])
    for a, value in enumerate(per_action_values):
        net.biases[0][a * num_quantiles : (a + 1) * num_quantiles] = value
    return distq.QuantileQNet(net, num_actions, num_quantiles)


class TestMeanQ:
    def test_constant_quantiles(self):
        qnet = constant_output_qnet([3.5, 3.5], num_quantiles=4)
        np.testing.assert_allclose(distq.mean_q(qnet, np.zeros(2)), 3.5)

    def test_two_quantile_average(self):
        qnet = constant_output_qnet([0.0, 0.0], num_quantiles=2)
        qnet.net.biases[0][:2] = [1.0, 3.0]
        assert distq.mean_q(qnet, np.zeros(2))[0] == 2.0

    def test_random_net_matches_reshape_oracle(self):
        rng = np.random.default_rng(0)
        qnet = distq.make_qnet(3, num_actions=4, num_quantiles=5, hidden_sizes=(6,), rng=rng)
        obs = rng.normal(size=3)
        raw = numkit.forward(qnet.net, obs)
        expected = raw.reshape(4, 5).mean(axis=1)
        np.testing.assert_allclose(distq.mean_q(qnet, obs), expected, rtol=1e-14)


class TestPolicyFromQ:
    def test_equal_values_give_uniform(self):
        qnet = constant_output_qnet([1.0, 1.0, 1.0], num_quantiles=2)
        policy = distq.policy_from_q(qnet, np.zeros(2), temperature=1.0)
        np.testing.assert_allclose(policy.probs, 1.0 / 3.0, atol=1e-15)

    def test_full_epsilon_is_uniform(self):
        qnet = constant_output_qnet([5.0, -1.0], num_quantiles=2)
        policy = distq.policy_from_q(qnet, np.zeros(2), epsilon=1.0)
        np.testing.assert_allclose(policy.probs, 0.5)

    def test_softmax_matches_hand_computation(self):
        qnet = constant_output_qnet([1.0, 2.0], num_quantiles=3)
        policy = distq.policy_from_q(qnet, np.zeros(2), temperature=1.0)
        z = math.exp(1.0) + math.exp(2.0)
        np.testing.assert_allclose(
            policy.probs, [math.exp(1.0) / z, math.exp(2.0) / z], rtol=1e-12
        )

    def test_epsilon_floor_on_probabilities(self):
        rng = np.random.default_rng(1)
        qnet = distq.make_qnet(2, 4, 3, (5,), rng)
        for eps in (0.05, 0.3, 0.9):
            policy = distq.policy_from_q(qnet, rng.normal(size=2), epsilon=eps)
            assert policy.probs.min() >= eps / 4 - 1e-15
            assert abs(policy.probs.sum() - 1.0) < 1e-12

    def test_no_mode_selected_raises(self):
        qnet = constant_output_qnet([0.0, 0.0], num_quantiles=2)
        with pytest.raises(ParameterError):
            distq.policy_from_q(qnet, np.zeros(2), temperature=None, epsilon=None)


class TestBellmanTargets:
    def target_net(self, per_action_values, num_quantiles=2):
        qnet = constant_output_qnet(per_action_values, num_quantiles)
        return distq.TargetNet(qnet, tau=0.005)

    def test_terminal_transition_targets_reward_only(self):
        target = self.target_net([4.0, 9.0])
        t = Transition(0, np.zeros(2), 0, reward=2.5, next_obs=np.zeros(2), done=True)
        np.testing.assert_allclose(distq.bellman_target_quantiles(target, t, 0.9), 2.5)

    def test_zero_discount_targets_reward_only(self):
        target = self.target_net([4.0, 9.0])
        t = Transition(0, np.zeros(2), 0, reward=-1.0, next_obs=np.zeros(2), done=False)
        np.testing.assert_allclose(distq.bellman_target_quantiles(target, t, 0.0), -1.0)

    def test_toy_argmax_and_discount(self):
        # Action 1 dominates at s'; its quantiles are (2, 4).
        qnet = constant_output_qnet([1.0, 0.0], num_quantiles=2)
        qnet.net.biases[0][2:] = [2.0, 4.0]
        target = distq.TargetNet(qnet, tau=0.005)
        t = Transition(0, np.zeros(2), 0, reward=1.0, next_obs=np.zeros(2), done=False)
        got = distq.bellman_target_quantiles(target, t, 0.5)
        np.testing.assert_allclose(got, [1.0 + 0.5 * 2.0, 1.0 + 0.5 * 4.0])

    def test_targets_isolated_from_online_net(self):
        rng = np.random.default_rng(2)
        online = distq.make_qnet(2, 2, 3, (4,), rng)
        target = distq.TargetNet(online.copy(), tau=0.5)
        t = Transition(0, np.zeros(2), 0, 1.0, rng.normal(size=2), False)
        before = distq.bellman_target_quantiles(target, t, 0.9)
        for arr in online.net.param_arrays():
            arr += 123.0
        after = distq.bellman_target_quantiles(target, t, 0.9)
        assert np.array_equal(before, after)


def brute_force_qhl(pred, targ, taus, kappa):
    total = 0.0
    k = len(pred)
    for i in range(k):
        for j in range(len(targ)):
            u = targ[j] - pred[i]
            weight = abs(taus[i] - (1.0 if u < 0 else 0.0))
            huber = 0.5 * u * u if abs(u) <= kappa else kappa * (abs(u) - 0.5 * kappa)
            total += weight * huber / kappa
    return total / k


class TestQuantileHuberLoss:
    def test_perfect_fit_is_zero(self):
        taus = distq.quantile_midpoints(3)
        values = np.array([1.7, 1.7, 1.7])
        loss, grad = distq.quantile_huber_loss(values, values, taus)
        assert loss == 0.0
        np.testing.assert_allclose(grad, 0.0)

    def test_single_quantile_closed_form(self):
        # K=1, tau=0.5, |u| <= kappa: loss = 0.5 * u^2 / (2 kappa).
        taus = distq.quantile_midpoints(1)
        kappa = 2.0
        u = 0.8
        loss, _ = distq.quantile_huber_loss(np.array([0.0]), np.array([u]), taus, kappa)
        assert abs(loss - 0.5 * (0.5 * u * u) / kappa) < 1e-15

    def test_matches_brute_force_random_sweep(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            k = int(rng.integers(1, 9))
            kappa = float(rng.uniform(0.2, 3.0))
            taus = distq.quantile_midpoints(k)
            pred = rng.normal(scale=2.0, size=k)
            targ = rng.normal(scale=2.0, size=k)
            loss, _ = distq.quantile_huber_loss(pred, targ, taus, kappa)
            assert abs(loss - brute_force_qhl(pred, targ, taus, kappa)) < 1e-12

    def test_gradient_matches_central_differences(self):
        rng = np.random.default_rng(4)
        taus = distq.quantile_midpoints(4)
        kappa = 1.0
        pred = rng.normal(size=4)
        targ = rng.normal(size=4) + 0.3
        _, grad = distq.quantile_huber_loss(pred, targ, taus, kappa)
        step = 1e-6
        for i in range(4):
            hi = pred.copy()
            hi[i] += step
            lo = pred.copy()
            lo[i] -= step
            numeric = (
                distq.quantile_huber_loss(hi, targ, taus, kappa)[0]
                - distq.quantile_huber_loss(lo, targ, taus, kappa)[0]
            ) / (2 * step)
            assert abs(grad[i] - numeric) / max(abs(grad[i]), abs(numeric), 1e-8) < 1e-4

    def test_nonpositive_kappa_rejected(self):
        taus = distq.quantile_midpoints(2)
        with pytest.raises(ParameterError):
            distq.quantile_huber_loss(np.zeros(2), np.zeros(2), taus, kappa=0.0)


class TestPolyak:
    def test_full_tau_copies_online(self):
        rng = np.random.default_rng(5)
        online = distq.make_qnet(2, 2, 2, (3,), rng)
        target = distq.TargetNet(distq.make_qnet(2, 2, 2, (3,), rng), tau=1.0)
        distq.polyak_update(online, target)
        for a, b in zip(online.net.param_arrays(), target.qnet.net.param_arrays()):
            assert np.array_equal(a, b)

    def test_halfway_blend(self):
        online = constant_output_qnet([2.0, 2.0], 2)
        target = distq.TargetNet(constant_output_qnet([0.0, 0.0], 2), tau=0.5)
        distq.polyak_update(online, target)
        np.testing.assert_allclose(target.qnet.net.biases[0], 1.0)

    def test_geometric_decay_with_fixed_online(self):
        rng = np.random.default_rng(6)
        online = distq.make_qnet(2, 2, 2, (3,), rng)
        target = distq.TargetNet(distq.make_qnet(2, 2, 2, (3,), rng), tau=0.1)
        gap0 = max(
            np.max(np.abs(a - b))
            for a, b in zip(online.net.param_arrays(), target.qnet.net.param_arrays())
        )
        for step in range(1, 6):
            distq.polyak_update(online, target)
            gap = max(
                np.max(np.abs(a - b))
                for a, b in zip(online.net.param_arrays(), target.qnet.net.param_arrays())
            )
            np.testing.assert_allclose(gap, gap0 * 0.9**step, rtol=1e-12)


class TestCheckpointBlob:
    def test_round_trip_with_adam(self):
        rng = np.random.default_rng(7)
        qnet = distq.make_qnet(3, 2, 4, (5, 4), rng)
        adam = numkit.init_adam(qnet.net, learning_rate=0.01)
        adam.step_count = 9
        adam.m_weights[0][:] = rng.normal(size=adam.m_weights[0].shape)
        blob = distq.save_qnet_blob(qnet, adam)
        loaded, loaded_adam = distq.load_qnet_blob(blob)
        assert loaded.num_actions == 2 and loaded.num_quantiles == 4
        for a, b in zip(qnet.net.param_arrays(), loaded.net.param_arrays()):
            assert np.array_equal(a, b)
        assert loaded_adam.step_count == 9
        assert np.array_equal(adam.m_weights[0], loaded_adam.m_weights[0])
        assert distq.save_qnet_blob(loaded, loaded_adam) == blob

    def test_truncated_blob_rejected(self):
        rng = np.random.default_rng(8)
        qnet = distq.make_qnet(2, 2, 2, (3,), rng)
        blob = distq.save_qnet_blob(qnet)
        with pytest.raises(CheckpointError):
            distq.load_qnet_blob(blob[:-5])

    def test_bad_magic_rejected(self):
        with pytest.raises(CheckpointError):
            distq.load_qnet_blob(b"XXXX" + b"\x00" * 64)
