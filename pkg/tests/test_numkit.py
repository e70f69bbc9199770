"""Kernel tests: forward/backward oracles, Adam, softmax, gradient checker."""

import math

import numpy as np
import pytest

from marq import numkit
from marq.errors import NumericError, ParameterError, ShapeError


def hand_forward(net, x):
    """Independent layer-by-layer oracle using scalar Python arithmetic."""
    values = [float(v) for v in x]
    for layer, (w, b) in enumerate(zip(net.weights, net.biases)):
        nxt = []
        for row in range(w.shape[0]):
            acc = float(b[row])
            for col in range(w.shape[1]):
                acc += float(w[row, col]) * values[col]
            nxt.append(acc)
        if layer < net.num_layers - 1:
            nxt = [v if v > 0.0 else 0.0 for v in nxt]
        values = nxt
    return np.array(values)


class TestForward:
    def test_zero_network_returns_zeros(self):
        net = numkit.zeros_dense([3, 5, 2])
        out = numkit.forward(net, np.array([1.0, -2.0, 3.0]))
        assert np.array_equal(out, np.zeros(2))

    def test_identity_single_layer(self):
        net = numkit.zeros_dense([3, 3])
        net.weights[0][:] = np.eye(3)
        x = np.array([0.5, -1.5, 2.0])
        assert np.array_equal(numkit.forward(net, x), x)

    def test_random_net_matches_hand_oracle(self):
        rng = np.random.default_rng(7)
        net = numkit.init_dense([3, 4, 2], rng)
        x = np.array([1.0, 0.0, -1.0])
        np.testing.assert_allclose(numkit.forward(net, x), hand_forward(net, x), rtol=1e-12)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(8)
        net = numkit.init_dense([4, 6, 3], rng)
        xs = rng.normal(size=(5, 4))
        batch, _ = numkit.forward_batch(net, xs)
        for i in range(5):
            np.testing.assert_allclose(batch[i], numkit.forward(net, xs[i]), rtol=1e-13)

    def test_dimension_mismatch_raises(self):
        net = numkit.zeros_dense([3, 2])
        with pytest.raises(ShapeError):
            numkit.forward(net, np.zeros(4))


class TestBackward:
    def test_zero_cotangent_gives_zero_bundle(self):
        rng = np.random.default_rng(1)
        net = numkit.init_dense([3, 4, 2], rng)
        bundle, g_in = numkit.backward(net, rng.normal(size=3), np.zeros(2))
        for arr in bundle.param_arrays():
            assert np.array_equal(arr, np.zeros_like(arr))
        assert np.array_equal(g_in, np.zeros(3))

    def test_linear_unit_analytic(self):
        # y = w x + b with output_grad 1: dL/dw = x, dL/db = 1.
        net = numkit.zeros_dense([1, 1])
        net.weights[0][0, 0] = 0.7
        net.biases[0][0] = -0.2
        bundle, g_in = numkit.backward(net, np.array([3.0]), np.array([1.0]))
        assert bundle.weights[0][0, 0] == 3.0
        assert bundle.biases[0][0] == 1.0
        assert g_in[0] == 0.7

    def test_matches_central_differences(self):
        rng = np.random.default_rng(2)
        net = numkit.init_dense([4, 8, 3], rng)
        x = rng.normal(size=4)
        cotangent = rng.normal(size=3)

        def loss_fn(probe):
            out = numkit.forward(probe, x)
            bundle, _ = numkit.backward(probe, x, cotangent)
            return float(out @ cotangent), bundle

        report = numkit.finite_diff_check(loss_fn, net, tolerance=1e-4)
        assert report.passed, report

    def test_shape_mismatch_raises(self):
        net = numkit.zeros_dense([2, 3])
        with pytest.raises(ShapeError):
            numkit.backward(net, np.zeros(2), np.zeros(4))


class TestAdam:
    def test_zero_gradient_is_identity(self):
        rng = np.random.default_rng(3)
        net = numkit.init_dense([2, 3, 1], rng)
        before = [a.copy() for a in net.param_arrays()]
        state = numkit.init_adam(net)
        numkit.adam_step(net, numkit.zero_grads(net), state)
        assert state.step_count == 1
        for prev, cur in zip(before, net.param_arrays()):
            assert np.array_equal(prev, cur)

    def test_first_step_magnitude_is_learning_rate(self):
        # Bias correction makes the first update lr * g / (|g| + eps) ~ lr.
        net = numkit.zeros_dense([1, 1])
        net.weights[0][0, 0] = 1.0
        state = numkit.init_adam(net, learning_rate=0.05)
        grads = numkit.zero_grads(net)
        grads.weights[0][0, 0] = 0.37
        numkit.adam_step(net, grads, state)
        delta = 1.0 - net.weights[0][0, 0]
        assert abs(delta - 0.05) < 1e-6 * 0.05

    def test_two_steps_match_scripted_oracle_exactly(self):
        rng = np.random.default_rng(4)
        net = numkit.zeros_dense([1, 1])
        w0 = 0.3
        net.weights[0][0, 0] = w0
        net.biases[0][0] = -0.1
        state = numkit.init_adam(net, learning_rate=1e-3)
        gs = [rng.normal(size=2), rng.normal(size=2)]

        # Scripted recomputation with the same operation order.
        params = np.array([w0, -0.1])
        m = np.zeros(2)
        v = np.zeros(2)
        for t, g in enumerate(gs, start=1):
            grads = numkit.zero_grads(net)
            grads.weights[0][0, 0] = g[0]
            grads.biases[0][0] = g[1]
            numkit.adam_step(net, grads, state)

            bc1 = 1.0 - 0.9**t
            bc2 = 1.0 - 0.999**t
            m *= 0.9
            m += 0.1 * g
            v *= 0.999
            v += 0.001 * (g * g)
            params -= 1e-3 * (m / bc1) / (np.sqrt(v / bc2) + 1e-8)

        assert net.weights[0][0, 0] == params[0]
        assert net.biases[0][0] == params[1]
        assert state.step_count == 2

    def test_nonfinite_gradient_rejected_without_touching_params(self):
        rng = np.random.default_rng(5)
        net = numkit.init_dense([2, 2], rng)
        before = [a.copy() for a in net.param_arrays()]
        state = numkit.init_adam(net)
        grads = numkit.zero_grads(net)
        grads.weights[0][0, 0] = np.nan
        with pytest.raises(NumericError):
            numkit.adam_step(net, grads, state)
        assert state.step_count == 0
        for prev, cur in zip(before, net.param_arrays()):
            assert np.array_equal(prev, cur)


class TestFiniteDiffCheck:
    def test_quadratic_loss_is_exact(self):
        rng = np.random.default_rng(6)
        net = numkit.init_dense([3, 4], rng)

        def loss_fn(probe):
            value = sum(float(np.sum(a * a)) for a in probe.param_arrays())
            return value, numkit.GradBundle(
                [2.0 * w for w in probe.weights], [2.0 * b for b in probe.biases]
            )

        report = numkit.finite_diff_check(loss_fn, net, tolerance=1e-9)
        assert report.passed
        assert report.worst_rel_error < 1e-9

    def test_corrupted_gradient_is_flagged(self):
        rng = np.random.default_rng(7)
        net = numkit.init_dense([3, 4], rng)

        def loss_fn(probe):
            value = sum(float(np.sum(a * a)) for a in probe.param_arrays())
            grads = numkit.GradBundle(
                [2.0 * w for w in probe.weights], [2.0 * b for b in probe.biases]
            )
            grads.weights[0][0, 0] *= 2.0  # deliberate corruption
            return value, grads

        report = numkit.finite_diff_check(loss_fn, net, tolerance=1e-4)
        assert not report.passed
        assert report.worst_location == "w[0].flat[0]"


class TestSoftmax:
    def test_equal_logits_uniform(self):
        probs, _ = numkit.softmax_logsumexp(np.zeros(4))
        np.testing.assert_allclose(probs, 0.25, atol=1e-15)

    def test_extreme_logits_do_not_overflow(self):
        probs, lse = numkit.softmax_logsumexp(np.array([1000.0, 0.0]))
        assert np.all(np.isfinite(probs))
        assert probs[0] > 1.0 - 1e-12
        assert abs(lse - 1000.0) < 1e-9

    def test_matches_direct_normalization(self):
        logits = np.array([1.0, 2.0, 3.0])
        probs, lse = numkit.softmax_logsumexp(logits)
        raw = [math.exp(v) for v in logits]
        total = sum(raw)
        np.testing.assert_allclose(probs, [r / total for r in raw], rtol=1e-12)
        assert abs(lse - math.log(total)) < 1e-12

    def test_simplex_property_random_sweep(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            n = int(rng.integers(2, 8))
            logits = rng.normal(scale=5.0, size=n)
            temperature = float(rng.uniform(0.1, 5.0))
            probs, _ = numkit.softmax_logsumexp(logits, temperature)
            assert np.all(probs >= 0.0)
            assert abs(probs.sum() - 1.0) <= 1e-12

    def test_nonpositive_temperature_rejected(self):
        with pytest.raises(ParameterError):
            numkit.softmax_logsumexp(np.zeros(2), temperature=0.0)
