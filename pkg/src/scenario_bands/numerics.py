"""Dense numerical kernel: small MLPs with hand-derived gradients, Adam,
seeded Gaussian sampling, and a finite-difference gradient checker.

Everything is 64-bit and numpy-backed. Weight matrices are C-ordered with
shape (fan_in, fan_out), so a layer computes ``x @ W + b``; a 1-D input is a
single sample, a 2-D input is a batch of independent rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np


class Activation(NamedTuple):
    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    d2f: Callable[[np.ndarray], np.ndarray]


def _logistic(z):
    # split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _logistic_d(z):
    s = _logistic(z)
    return s * (1.0 - s)


def _logistic_d2(z):
    s = _logistic(z)
    return s * (1.0 - s) * (1.0 - 2.0 * s)


def _tanh_d(z):
    t = np.tanh(z)
    return 1.0 - t * t


def _tanh_d2(z):
    t = np.tanh(z)
    return -2.0 * t * (1.0 - t * t)


ACTIVATIONS: dict[str, Activation] = {
    "identity": Activation(lambda z: z, lambda z: np.ones_like(z), lambda z: np.zeros_like(z)),
    "relu": Activation(
        lambda z: np.maximum(z, 0.0),
        lambda z: (z > 0).astype(np.float64),
        lambda z: np.zeros_like(z),
    ),
    "tanh": Activation(np.tanh, _tanh_d, _tanh_d2),
    "logistic": Activation(_logistic, _logistic_d, _logistic_d2),
}


@dataclass
class MlpParams:
    """Weights, biases and per-layer activation tags of a dense MLP.

    ``weights[l]`` has shape (fan_in, fan_out); ``biases[l]`` has shape
    (fan_out,). Adjacent layers must chain: fan_in of layer l equals
    fan_out of layer l-1.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("weights, biases and activations must have equal length")
        if len(self.weights) == 0:
            raise ValueError("an MLP needs at least one layer")
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in self.biases]
        for i, (w, b, a) in enumerate(zip(self.weights, self.biases, self.activations)):
            if w.ndim != 2:
                raise ValueError(f"layer {i}: weight must be 2-D, got shape {w.shape}")
            if b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: bias shape {b.shape} does not match fan_out {w.shape[1]}")
            if a not in ACTIVATIONS:
                raise ValueError(f"layer {i}: unknown activation {a!r}")
            if i > 0 and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ValueError(
                    f"layer {i}: fan_in {w.shape[0]} does not chain from previous fan_out "
                    f"{self.weights[i - 1].shape[1]}"
                )

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim] + [w.shape[1] for w in self.weights]

    def arrays(self) -> list[np.ndarray]:
        """Parameters as a flat list [W0, b0, W1, b1, ...]."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        """New MlpParams with parameters replaced from an arrays() style list."""
        if len(arrays) != 2 * self.n_layers:
            raise ValueError("wrong number of parameter arrays")
        return MlpParams(
            weights=[np.array(arrays[2 * i]) for i in range(self.n_layers)],
            biases=[np.array(arrays[2 * i + 1]) for i in range(self.n_layers)],
            activations=list(self.activations),
        )

    def copy(self) -> "MlpParams":
        return self.with_arrays(self.arrays())


def init_mlp(rng: np.random.Generator, layer_dims: Sequence[int], activations: Sequence[str]) -> MlpParams:
    """Fresh MLP with weights ~ N(0, 2/fan_in) and zero biases."""
    if len(layer_dims) < 2:
        raise ValueError("layer_dims needs an input and an output dimension")
    if len(activations) != len(layer_dims) - 1:
        raise ValueError("need one activation per layer")
    weights = []
    biases = []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        std = math.sqrt(2.0 / fan_in)
        weights.append(rng.standard_normal((fan_in, fan_out)) * std)
        biases.append(np.zeros(fan_out))
    return MlpParams(weights=weights, biases=biases, activations=list(activations))


@dataclass
class Tape:
    """Activation record from mlp_forward: layer inputs and pre-activations."""

    inputs: list[np.ndarray] = field(default_factory=list)
    preacts: list[np.ndarray] = field(default_factory=list)
    squeeze: bool = False


def mlp_forward(params: MlpParams, x) -> tuple[np.ndarray, Tape]:
    """Forward pass. Returns (output, tape); the tape feeds mlp_backward.

    x may be a single sample (1-D) or a batch (2-D, one sample per row);
    the output has matching rank.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    a = x[None, :] if squeeze else x
    if a.ndim != 2 or a.shape[1] != params.input_dim:
        raise ValueError(f"input of width {a.shape[-1] if a.ndim else 0} does not match input_dim {params.input_dim}")
    tape = Tape(squeeze=squeeze)
    for w, b, name in zip(params.weights, params.biases, params.activations):
        tape.inputs.append(a)
        z = a @ w + b
        tape.preacts.append(z)
        a = ACTIVATIONS[name].f(z)
    if not np.all(np.isfinite(a)):
        raise FloatingPointError("non-finite values in forward output")
    return (a[0] if squeeze else a), tape


def mlp_backward(params: MlpParams, tape: Tape, output_gradient) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
    """Reverse pass over a tape from mlp_forward on the same params.

    Returns (weight_grads, bias_grads, input_grad). For batched tapes the
    parameter gradients accumulate over rows; input_grad keeps the batch
    shape.
    """
    if len(tape.inputs) != params.n_layers:
        raise ValueError("tape does not match the network depth")
    gy = np.asarray(output_gradient, dtype=np.float64)
    if tape.squeeze:
        if gy.shape != (params.output_dim,):
            raise ValueError(f"output_gradient shape {gy.shape} does not match output_dim {params.output_dim}")
        gy = gy[None, :]
    elif gy.shape != (tape.inputs[0].shape[0], params.output_dim):
        raise ValueError("output_gradient shape does not match the taped batch")
    weight_grads: list[np.ndarray] = [None] * params.n_layers  # type: ignore[list-item]
    bias_grads: list[np.ndarray] = [None] * params.n_layers  # type: ignore[list-item]
    for l in range(params.n_layers - 1, -1, -1):
        w = params.weights[l]
        a_prev, z = tape.inputs[l], tape.preacts[l]
        if a_prev.shape[1] != w.shape[0]:
            raise ValueError(f"layer {l}: stale tape (input width {a_prev.shape[1]} vs fan_in {w.shape[0]})")
        d = gy * ACTIVATIONS[params.activations[l]].df(z)
        weight_grads[l] = a_prev.T @ d
        bias_grads[l] = d.sum(axis=0)
        gy = d @ w.T
    return weight_grads, bias_grads, (gy[0] if tape.squeeze else gy)


def grad_check(loss_and_grad, arrays: Sequence[np.ndarray], fd_step: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    loss_and_grad maps the list of parameter arrays to (scalar_loss,
    gradient_arrays). Arrays are perturbed in place and restored. The
    relative error is |analytic - fd| / max(1e-8, |analytic| + |fd|).
    """
    if fd_step <= 0:
        raise ValueError("fd_step must be positive")
    loss, grads = loss_and_grad(arrays)
    if not math.isfinite(loss):
        raise FloatingPointError("loss is not finite")
    worst = 0.0
    for k, arr in enumerate(arrays):
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + fd_step
            up, _ = loss_and_grad(arrays)
            arr[idx] = orig - fd_step
            down, _ = loss_and_grad(arrays)
            arr[idx] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise FloatingPointError("loss is not finite at a perturbed point")
            fd = (up - down) / (2.0 * fd_step)
            analytic = float(grads[k][idx])
            err = abs(analytic - fd) / max(1e-8, abs(analytic) + abs(fd))
            worst = max(worst, err)
    return worst


@dataclass
class AdamState:
    """Adam moments plus hyperparameters, one moment pair per parameter array."""

    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int
    learning_rate: float
    beta1: float
    beta2: float
    epsilon: float

    def __post_init__(self):
        if self.step_count < 0:
            raise ValueError("step_count must be >= 0")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ValueError("learning_rate and epsilon must be positive")

    @classmethod
    def fresh(cls, arrays: Sequence[np.ndarray], learning_rate: float,
              beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        return cls(
            first_moment=[np.zeros_like(a) for a in arrays],
            second_moment=[np.zeros_like(a) for a in arrays],
            step_count=0,
            learning_rate=learning_rate,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


def adam_step(arrays: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              state: AdamState) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update. Returns new arrays and new state."""
    if len(arrays) != len(grads) or len(arrays) != len(state.first_moment):
        raise ValueError("arrays, grads and state must have matching lengths")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    new_arrays, new_m, new_v = [], [], []
    for a, g, m, v in zip(arrays, grads, state.first_moment, state.second_moment):
        if g.shape != a.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter shape {a.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_arrays.append(a - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon))
        new_m.append(m)
        new_v.append(v)
    return new_arrays, AdamState(new_m, new_v, t, state.learning_rate, b1, b2, state.epsilon)


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; one seed, one stream."""
    if not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ValueError("seed must be a non-negative integer")
    return np.random.Generator(np.random.PCG64(int(seed)))


def sample_gaussian(rng: np.random.Generator, length: int, sigma: float) -> np.ndarray:
    """i.i.d. draws from N(0, sigma^2), as a standard-normal draw scaled last.

    Scaling after the draw makes the sigma-ratio identity exact: the same
    rng state at sigma=3 yields elementwise 3x the sigma=1 stream. Draws
    come from PCG64's ziggurat standard normal.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if length < 0:
        raise ValueError("length must be >= 0")
    return rng.standard_normal(length) * sigma


def nearest_rank(q: float, n: int) -> int:
    """1-based nearest-rank index ceil(q*n) for q in (0, 1].

    A 1e-9 guard below the product keeps decimal q values (e.g. 0.95 * 100)
    from landing one rank high through float excess.
    """
    if not 0.0 < q <= 1.0:
        raise ValueError("quantile level must lie in (0, 1]")
    if n < 1:
        raise ValueError("need at least one value")
    rank = math.ceil(q * n - 1e-9)
    return min(max(rank, 1), n)


def nearest_rank_quantile(values, q: float) -> float:
    """Nearest-rank empirical quantile: the ceil(q*n)-th smallest value."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("values must be a non-empty 1-D array")
    return float(np.sort(v)[nearest_rank(q, v.size) - 1])
