"""Dense numeric kernel: ReLU MLPs, reverse-mode gradients, Adam, softmax.

Everything runs in float64; networks are plain multilayer perceptrons with
ReLU on hidden layers and an identity output layer. The kernel is small on
purpose: forward, exact backward, an Adam step, and a central-difference
gradient checker are all the learned components need.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ParameterError, ShapeError

Array = np.ndarray


@dataclass
class DenseNet:
    """Fully connected network; ``weights[i]`` has shape (fan_out, fan_in)."""

    layer_sizes: list[int]
    weights: list[Array]
    biases: list[Array]

    def __post_init__(self) -> None:
        sizes = self.layer_sizes
        if len(sizes) < 2 or any(int(s) <= 0 for s in sizes):
            raise ShapeError(f"layer_sizes must be >=2 positive ints, got {sizes}")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ShapeError("one weight matrix and bias vector per layer required")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i + 1], sizes[i]):
                raise ShapeError(
                    f"layer {i}: weight shape {w.shape} != {(sizes[i + 1], sizes[i])}"
                )
            if b.shape != (sizes[i + 1],):
                raise ShapeError(f"layer {i}: bias shape {b.shape} != ({sizes[i + 1]},)")

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def input_width(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_width(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> "DenseNet":
        return DenseNet(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def param_arrays(self) -> list[Array]:
        return list(self.weights) + list(self.biases)

    def num_params(self) -> int:
        return sum(a.size for a in self.param_arrays())


@dataclass
class GradBundle:
    """Per-parameter gradients mirroring a DenseNet's weight/bias shapes."""

    weights: list[Array]
    biases: list[Array]

    def param_arrays(self) -> list[Array]:
        return list(self.weights) + list(self.biases)

    def scale(self, factor: float) -> "GradBundle":
        return GradBundle(
            [w * factor for w in self.weights], [b * factor for b in self.biases]
        )

    def add_(self, other: "GradBundle") -> "GradBundle":
        for a, b in zip(self.weights, other.weights):
            a += b
        for a, b in zip(self.biases, other.biases):
            a += b
        return self


@dataclass
class AdamState:
    """Adam moments plus hyperparameters; moment shapes mirror the network."""

    learning_rate: float
    beta1: float
    beta2: float
    epsilon: float
    step_count: int
    m_weights: list[Array]
    v_weights: list[Array]
    m_biases: list[Array]
    v_biases: list[Array]


def init_dense(layer_sizes: Sequence[int], rng: np.random.Generator) -> DenseNet:
    """Seeded uniform init in +-1/sqrt(fan_in) per layer."""
    sizes = [int(s) for s in layer_sizes]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=(fan_out,)))
    return DenseNet(sizes, weights, biases)


def zeros_dense(layer_sizes: Sequence[int]) -> DenseNet:
    sizes = [int(s) for s in layer_sizes]
    weights = [np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(o) for o in sizes[1:]]
    return DenseNet(sizes, weights, biases)


def zero_grads(net: DenseNet) -> GradBundle:
    return GradBundle(
        [np.zeros_like(w) for w in net.weights],
        [np.zeros_like(b) for b in net.biases],
    )


def init_adam(
    net: DenseNet,
    learning_rate: float = 3e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> AdamState:
    if learning_rate <= 0:
        raise ParameterError(f"learning_rate must be > 0, got {learning_rate}")
    return AdamState(
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
        step_count=0,
        m_weights=[np.zeros_like(w) for w in net.weights],
        v_weights=[np.zeros_like(w) for w in net.weights],
        m_biases=[np.zeros_like(b) for b in net.biases],
        v_biases=[np.zeros_like(b) for b in net.biases],
    )


def forward_batch(
    net: DenseNet, inputs: Array, keep_cache: bool = False
) -> tuple[Array, list[Array] | None]:
    """Batched forward pass; ``inputs`` is (batch, input_width).

    The cache holds the post-activation input of every layer, which is all
    backward_batch needs (ReLU masks are recovered from positivity).
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_width:
        raise ShapeError(f"expected (batch, {net.input_width}) inputs, got {x.shape}")
    cache = [x] if keep_cache else None
    last = net.num_layers - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        x = x @ w.T + b
        if i < last:
            x = np.maximum(x, 0.0)  # ReLU; subgradient 0 at 0
            if keep_cache:
                cache.append(x)
    return x, cache


def forward(net: DenseNet, inputs: Array) -> Array:
    """Single-vector forward pass."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected 1-d input, got shape {x.shape}")
    out, _ = forward_batch(net, x[None, :])
    return out[0]


def backward_batch(
    net: DenseNet, cache: list[Array], output_grad: Array
) -> tuple[GradBundle, Array]:
    """Reverse-mode gradients of sum(outputs * output_grad) over a batch.

    Returns gradients for every parameter (summed over the batch) and the
    gradient with respect to the batch inputs.
    """
    g = np.asarray(output_grad, dtype=np.float64)
    if g.ndim != 2 or g.shape[1] != net.output_width:
        raise ShapeError(f"output_grad shape {g.shape} != (batch, {net.output_width})")
    if g.shape[0] != cache[0].shape[0]:
        raise ShapeError("output_grad batch size does not match the cached forward")
    d_weights: list[Array] = [None] * net.num_layers  # type: ignore[list-item]
    d_biases: list[Array] = [None] * net.num_layers  # type: ignore[list-item]
    for i in range(net.num_layers - 1, -1, -1):
        acts = cache[i]
        d_weights[i] = g.T @ acts
        d_biases[i] = g.sum(axis=0)
        g = g @ net.weights[i]
        if i > 0:
            g = g * (cache[i] > 0.0)
    return GradBundle(d_weights, d_biases), g


def backward(net: DenseNet, inputs: Array, output_grad: Array) -> tuple[GradBundle, Array]:
    """Single-vector reverse-mode pass; see backward_batch."""
    x = np.asarray(inputs, dtype=np.float64)
    g = np.asarray(output_grad, dtype=np.float64)
    if x.ndim != 1 or g.ndim != 1:
        raise ShapeError("backward expects 1-d input and output_grad")
    _, cache = forward_batch(net, x[None, :], keep_cache=True)
    bundle, g_in = backward_batch(net, cache, g[None, :])
    return bundle, g_in[0]


def adam_step(net: DenseNet, grads: GradBundle, state: AdamState) -> tuple[DenseNet, AdamState]:
    """Bias-corrected Adam update, applied in place.

    Non-finite gradients are rejected before any parameter is touched.
    """
    params = net.param_arrays()
    gs = grads.param_arrays()
    if len(params) != len(gs):
        raise ShapeError("gradient bundle does not match network layout")
    for p, g in zip(params, gs):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient; parameters left untouched")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    moments_m = state.m_weights + state.m_biases
    moments_v = state.v_weights + state.v_biases
    for p, g, m, v in zip(params, gs, moments_m, moments_v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        if not np.all(np.isfinite(p)):
            raise NumericError("parameters became non-finite during Adam update")
    return net, state


@dataclass
class FiniteDiffReport:
    """Outcome of a central-difference gradient check."""

    passed: bool
    worst_rel_error: float
    worst_location: str
    num_params: int


def finite_diff_check(
    loss_fn: Callable[[DenseNet], tuple[float, GradBundle]],
    net: DenseNet,
    tolerance: float,
    step: float = 1e-5,
) -> FiniteDiffReport:
    """Compare analytic gradients against central differences.

    ``loss_fn`` must return the scalar loss and its analytic gradient at the
    given parameters and be deterministic. Per-entry relative error is
    ``|a - n| / max(|a|, |n|, 1e-8)``; the report never raises.
    """
    _, analytic = loss_fn(net)
    worst = 0.0
    where = ""
    count = 0
    param_groups = [("w", net.weights, analytic.weights), ("b", net.biases, analytic.biases)]
    for kind, arrays, grads in param_groups:
        for layer, (arr, grad) in enumerate(zip(arrays, grads)):
            flat = arr.reshape(-1)
            gflat = grad.reshape(-1)
            for idx in range(flat.size):
                count += 1
                orig = flat[idx]
                flat[idx] = orig + step
                hi, _ = loss_fn(net)
                flat[idx] = orig - step
                lo, _ = loss_fn(net)
                flat[idx] = orig
                numeric = (hi - lo) / (2.0 * step)
                a = gflat[idx]
                rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                if rel > worst:
                    worst = rel
                    where = f"{kind}[{layer}].flat[{idx}]"
    return FiniteDiffReport(
        passed=worst < tolerance,
        worst_rel_error=worst,
        worst_location=where,
        num_params=count,
    )


def softmax_logsumexp(logits: Array, temperature: float = 1.0) -> tuple[Array, float]:
    """Numerically stable softmax of ``logits / temperature``.

    Returns the probability vector and logsumexp of the scaled logits.
    """
    if temperature <= 0:
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    if not np.all(np.isfinite(z)):
        raise NumericError("softmax requires finite logits")
    m = np.max(z)
    shifted = z - m
    total = np.sum(np.exp(shifted))
    lse = m + np.log(total)
    probs = np.exp(shifted) / total
    return probs, float(lse)


def softmax_batch(logits: Array, temperature: float = 1.0) -> Array:
    """Row-wise stable softmax for a (batch, n) array of logits."""
    if temperature <= 0:
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_batch(logits: Array, temperature: float = 1.0) -> Array:
    """Row-wise log-probabilities of ``softmax_batch`` without underflow to -inf."""
    if temperature <= 0:
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))
