"""Small fully-connected networks with manually implemented gradients.

Parameters live in a single flat float64 vector so checkpoints, optimizer
state and finite-difference checks all operate on one array. Layout per
layer: weight matrix (out, in) row-major, then bias (out,). Hidden layers
use tanh; the output layer is linear.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

__all__ = [
    "MlpSpec",
    "MlpError",
    "num_params",
    "init_params",
    "forward",
    "backward",
    "AdamState",
    "adam_step",
]


class MlpError(ValueError):
    pass


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    output_dim: int
    hidden_dims: Tuple[int, ...] = (256, 256, 128, 128)

    def __post_init__(self):
        dims = (self.input_dim, self.output_dim) + tuple(self.hidden_dims)
        if any(int(d) <= 0 for d in dims):
            raise MlpError(f"all dims must be > 0, got {self}")
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))

    @property
    def layer_dims(self) -> List[Tuple[int, int]]:
        """(in, out) per layer, input to output."""
        sizes = [self.input_dim, *self.hidden_dims, self.output_dim]
        return list(zip(sizes[:-1], sizes[1:]))


def num_params(spec: MlpSpec) -> int:
    return sum(i * o + o for i, o in spec.layer_dims)


def _views(spec: MlpSpec, params: np.ndarray):
    """Zero-copy (W, b) views into the flat vector, one pair per layer."""
    out = []
    off = 0
    for i, o in spec.layer_dims:
        W = params[off : off + i * o].reshape(o, i)
        off += i * o
        b = params[off : off + o]
        off += o
        out.append((W, b))
    return out


def init_params(spec: MlpSpec, seed: int, final_scale: float = 1.0) -> np.ndarray:
    """Fan-in-scaled Gaussian init; final_scale shrinks the output layer
    (useful for near-zero initial policy means)."""
    rng = np.random.default_rng(seed)
    params = np.zeros(num_params(spec))
    layers = _views(spec, params)
    for li, ((i, o), (W, b)) in enumerate(zip(spec.layer_dims, layers)):
        scale = 1.0 / np.sqrt(i)
        if li == len(layers) - 1:
            scale *= final_scale
        W[...] = scale * rng.standard_normal((o, i))
        b[...] = 0.0
    return params


def forward(spec: MlpSpec, params: np.ndarray, x: np.ndarray):
    """Batched forward pass: x (B, input_dim) -> (y (B, output_dim), cache)."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != spec.input_dim:
        raise MlpError(f"input dim {x.shape[1]} != {spec.input_dim}")
    if len(params) != num_params(spec):
        raise MlpError("parameter vector does not match spec layout")
    layers = _views(spec, params)
    activations = [x]
    h = x
    for li, (W, b) in enumerate(layers):
        z = h @ W.T + b
        h = z if li == len(layers) - 1 else np.tanh(z)
        activations.append(h)
    y = activations[-1]
    cache = (activations, squeeze)
    return (y[0] if squeeze else y), cache


def backward(spec: MlpSpec, params: np.ndarray, cache, dy: np.ndarray):
    """Gradient of sum(dy * y) wrt params and input. Returns (dparams, dx)."""
    activations, squeeze = cache
    dy = np.asarray(dy, dtype=np.float64)
    if squeeze and dy.ndim == 1:
        dy = dy[None, :]
    layers = _views(spec, params)
    dparams = np.zeros_like(params)
    dlayers = _views(spec, dparams)
    delta = dy
    for li in range(len(layers) - 1, -1, -1):
        W, _ = layers[li]
        dW, db = dlayers[li]
        if li != len(layers) - 1:
            delta = delta * (1.0 - activations[li + 1] ** 2)  # tanh'
        dW[...] = delta.T @ activations[li]
        db[...] = delta.sum(axis=0)
        delta = delta @ W
    dx = delta[0] if squeeze else delta
    return dparams, dx


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @staticmethod
    def zeros(n: int) -> "AdamState":
        return AdamState(np.zeros(n), np.zeros(n), 0)


def adam_step(
    params: np.ndarray,
    grads: np.ndarray,
    state: AdamState,
    lr: float = 3e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> np.ndarray:
    """One Adam update (minimization); mutates state, returns new params."""
    if params.shape != grads.shape:
        raise MlpError("params/grads shape mismatch")
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grads
    state.v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps)
