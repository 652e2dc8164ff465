"""
Feed-forward network core: MLP forward pass, reverse-mode gradients, Adam and
finite-difference gradient verification. Everything runs in float64.
"""
import zlib
from dataclasses import dataclass, field
from typing import Callable, List, Sequence, Tuple, Union

import numpy as np

from tdu.exceptions import InvalidArgumentError

# loss_fn(outputs) -> (loss, d_loss / d_outputs)
LossFn = Callable[[np.ndarray], Tuple[float, np.ndarray]]


class RngStream:
    """
    Splittable counter-based random stream (Philox)

    Child streams are derived from a stable hash of their name, so the same
    (seed, name path) always yields the same numbers in any process.
    """

    def __init__(self, seed: int, path: Tuple[int, ...] = ()):
        if not isinstance(seed, (int, np.integer)) or seed < 0 or seed >= 2**64:
            raise InvalidArgumentError(f"seed must be a 64-bit non-negative integer, got {seed!r}")
        self.seed = int(seed)
        self.path = tuple(path)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self.generator = np.random.Generator(np.random.Philox(sequence))

    def split(self, name: str) -> "RngStream":
        """Return an independent child stream identified by `name`"""
        return RngStream(self.seed, self.path + (zlib.crc32(name.encode("utf-8")),))

    def state_dict(self) -> dict:
        """JSON-serialisable generator position"""
        state = self.generator.bit_generator.state
        return {
            "seed": self.seed,
            "path": list(self.path),
            "counter": [int(x) for x in state["state"]["counter"]],
            "key": [int(x) for x in state["state"]["key"]],
            "buffer": [int(x) for x in state["buffer"]],
            "buffer_pos": int(state["buffer_pos"]),
            "has_uint32": int(state["has_uint32"]),
            "uinteger": int(state["uinteger"]),
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "RngStream":
        stream = cls(int(state["seed"]), tuple(state["path"]))
        stream.generator.bit_generator.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": np.array(state["counter"], dtype=np.uint64),
                "key": np.array(state["key"], dtype=np.uint64),
            },
            "buffer": np.array(state["buffer"], dtype=np.uint64),
            "buffer_pos": int(state["buffer_pos"]),
            "has_uint32": int(state["has_uint32"]),
            "uinteger": int(state["uinteger"]),
        }
        return stream

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def binomial(self, n, p, size=None):
        return self.generator.binomial(n, p, size)

    def random(self, size=None):
        return self.generator.random(size)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={self.path})"


@dataclass(frozen=True)
class MlpParams:
    """
    Weights of a rectified-linear MLP

    `weights[i]` has shape (out_i, in_i) and `biases[i]` shape (out_i,).
    Hidden layers use ReLU; the output layer is linear.
    """

    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.weights) == 0 or len(self.weights) != len(self.biases):
            raise InvalidArgumentError("MlpParams needs one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise InvalidArgumentError(f"layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if i > 0 and self.weights[i - 1].shape[0] != w.shape[1]:
                raise InvalidArgumentError(
                    f"layer {i}: input size {w.shape[1]} does not chain with previous output {self.weights[i - 1].shape[0]}"
                )

    @property
    def layer_sizes(self) -> List[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def num_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def arrays(self) -> List[np.ndarray]:
        """Weights and biases interleaved: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(tuple(w.copy() for w in self.weights), tuple(b.copy() for b in self.biases))

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def unflatten(self, vector: np.ndarray) -> "MlpParams":
        """Build params of the same shapes from a flat vector"""
        vector = np.asarray(vector, dtype=np.float64)
        if vector.size != self.num_parameters:
            raise InvalidArgumentError(f"expected {self.num_parameters} values, got {vector.size}")
        pieces, offset = [], 0
        for array in self.arrays():
            pieces.append(vector[offset:offset + array.size].reshape(array.shape).copy())
            offset += array.size
        return MlpParams(tuple(pieces[0::2]), tuple(pieces[1::2]))

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "MlpParams":
        return MlpParams(tuple(fn(w) for w in self.weights), tuple(fn(b) for b in self.biases))

    def zip_map(self, other: "MlpParams", fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "MlpParams":
        return MlpParams(
            tuple(fn(a, b) for a, b in zip(self.weights, other.weights)),
            tuple(fn(a, b) for a, b in zip(self.biases, other.biases)),
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def equals(self, other: "MlpParams") -> bool:
        """Exact (bitwise value) equality"""
        return len(self.weights) == len(other.weights) and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )


def mlp_init(
    layer_sizes: Sequence[int],
    rng: RngStream,
    scale_mode: Union[str, Tuple[str, float]] = "he_uniform",
) -> MlpParams:
    """
    Initialise an MLP

    Args:
        layer_sizes: [input, hidden..., output]
        rng: Stream the weights are drawn from
        scale_mode: "he_uniform" (U(-sqrt(6/fan_in), sqrt(6/fan_in))) or
            ("fixed_scale", s) for N(0, s^2) weights

    Returns:
        Parameters with zero biases

    Raises:
        InvalidArgumentError: If fewer than two sizes or a non-positive size is given
    """
    sizes = list(layer_sizes)
    if len(sizes) < 2 or any(int(n) != n or n <= 0 for n in sizes):
        raise InvalidArgumentError(f"layer_sizes must hold >= 2 positive integers, got {sizes}")

    if isinstance(scale_mode, tuple):
        mode, scale = scale_mode
    else:
        mode, scale = scale_mode, None
    if mode not in ("he_uniform", "fixed_scale") or (mode == "fixed_scale" and (scale is None or scale < 0)):
        raise InvalidArgumentError(f"unknown scale_mode {scale_mode!r}")

    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        if mode == "he_uniform":
            limit = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        else:
            w = rng.normal(0.0, scale, size=(fan_out, fan_in))
        weights.append(np.asarray(w, dtype=np.float64))
        biases.append(np.zeros(fan_out, dtype=np.float64))
    return MlpParams(tuple(weights), tuple(biases))


@dataclass
class ForwardCache:
    """Layer inputs and pre-activations kept for the backward pass"""

    inputs: List[np.ndarray] = field(default_factory=list)
    preactivations: List[np.ndarray] = field(default_factory=list)


def _as_batch(params: MlpParams, inputs: np.ndarray) -> Tuple[np.ndarray, bool]:
    x = np.asarray(inputs, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.weights[0].shape[1]:
        raise InvalidArgumentError(
            f"input of shape {np.shape(inputs)} does not match first layer size {params.weights[0].shape[1]}"
        )
    return x, single


def mlp_forward_cached(params: MlpParams, inputs: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    """Batched forward pass returning the cache needed by `mlp_backward`"""
    x, single = _as_batch(params, inputs)
    cache = ForwardCache()
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        cache.inputs.append(x)
        z = x @ w.T + b
        cache.preactivations.append(z)
        x = z if i == last else np.maximum(z, 0.0)
    return (x[0] if single else x), cache


def mlp_forward(params: MlpParams, inputs: np.ndarray) -> np.ndarray:
    """
    Forward pass for one input vector or a batch of rows

    Raises:
        InvalidArgumentError: On input dimension mismatch
    """
    out, _ = mlp_forward_cached(params, inputs)
    return out


def mlp_backward(params: MlpParams, cache: ForwardCache, d_outputs: np.ndarray) -> MlpParams:
    """
    Vector-Jacobian product of the forward pass

    Args:
        params: Parameters used for the forward pass
        cache: Cache returned by `mlp_forward_cached`
        d_outputs: Gradient of a scalar loss w.r.t. the network outputs

    Returns:
        Gradient with the same structure as `params`
    """
    g = np.asarray(d_outputs, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    n_layers = len(params.weights)
    grad_w: List[np.ndarray] = [None] * n_layers
    grad_b: List[np.ndarray] = [None] * n_layers
    for i in reversed(range(n_layers)):
        if i != n_layers - 1:
            # ReLU subgradient is 0 at exactly 0
            g = g * (cache.preactivations[i] > 0.0)
        grad_w[i] = g.T @ cache.inputs[i]
        grad_b[i] = g.sum(axis=0)
        if i > 0:
            g = g @ params.weights[i]
    return MlpParams(tuple(grad_w), tuple(grad_b))


def mlp_grad(params: MlpParams, inputs: np.ndarray, loss_fn: LossFn) -> Tuple[float, MlpParams]:
    """
    Exact gradient of a scalar loss of the network outputs over a batch

    Args:
        params: Network parameters
        inputs: Batch of inputs
        loss_fn: Maps outputs to (loss, d_loss/d_outputs); quantities treated
            as stop-gradient simply do not contribute to d_loss/d_outputs

    Returns:
        Tuple of (loss, gradient)
    """
    outputs, cache = mlp_forward_cached(params, inputs)
    loss, d_outputs = loss_fn(outputs)
    d_outputs = np.asarray(d_outputs, dtype=np.float64)
    if d_outputs.shape != np.shape(outputs):
        raise InvalidArgumentError(f"loss gradient shape {d_outputs.shape} != output shape {np.shape(outputs)}")
    return float(loss), mlp_backward(params, cache, d_outputs)


@dataclass(frozen=True)
class AdamState:
    """First/second moments, step count and hyper-parameters of Adam"""

    m: MlpParams
    v: MlpParams
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: MlpParams, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    zeros = params.map(np.zeros_like)
    return AdamState(m=zeros, v=zeros.copy(), t=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: MlpParams, grad: MlpParams, state: AdamState) -> Tuple[MlpParams, AdamState]:
    """
    One Adam update with bias correction

    Returns:
        Tuple of (new params, new state); inputs are left untouched
    """
    if [a.shape for a in grad.arrays()] != [a.shape for a in params.arrays()]:
        raise InvalidArgumentError("gradient shapes do not match parameter shapes")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    m = state.m.zip_map(grad, lambda m_, g: b1 * m_ + (1.0 - b1) * g)
    v = state.v.zip_map(grad, lambda v_, g: b2 * v_ + (1.0 - b2) * g * g)
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    step = m.zip_map(v, lambda m_, v_: state.lr * (m_ / c1) / (np.sqrt(v_ / c2) + state.eps))
    new_params = params.zip_map(step, lambda p, s: p - s)
    return new_params, AdamState(m=m, v=v, t=t, lr=state.lr, beta1=b1, beta2=b2, eps=state.eps)


def finite_difference_grad(
    loss_of_vector: Callable[[np.ndarray], float],
    vector: np.ndarray,
    step: float = 1e-5,
) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector"""
    vector = np.asarray(vector, dtype=np.float64)
    grad = np.empty_like(vector)
    for i in range(vector.size):
        plus = vector.copy()
        minus = vector.copy()
        plus[i] += step
        minus[i] -= step
        grad[i] = (loss_of_vector(plus) - loss_of_vector(minus)) / (2.0 * step)
    return grad


def gradient_check(
    analytic: np.ndarray,
    numeric: np.ndarray,
    rel_tol: float = 1e-4,
    abs_floor: float = 1e-7,
) -> Tuple[bool, float]:
    """
    Compare an analytic gradient with a numeric one

    A component passes if its absolute error is below `abs_floor` or its
    relative error is below `rel_tol`.

    Returns:
        Tuple of (all components pass, max relative error over components
        above the absolute floor)
    """
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    abs_err = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    rel_err = np.where(scale > 0, abs_err / np.where(scale > 0, scale, 1.0), 0.0)
    passing = (abs_err <= abs_floor) | (rel_err <= rel_tol)
    above = abs_err > abs_floor
    worst = float(rel_err[above].max()) if np.any(above) else 0.0
    return bool(np.all(passing)), worst
