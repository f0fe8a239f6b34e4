"""Dense feed-forward decoder with hand-rolled reverse-mode gradients and ADAM.

The decoder maps a binary code to the natural-parameter space of the
observation model. Forward passes go through the selected kernel backend;
backward passes and optimizer updates are plain NumPy since they run once
per training step, not once per pursuit candidate.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from bbsc import backend


class Activation(enum.IntEnum):
    IDENTITY = backend.ACT_IDENTITY
    RELU = backend.ACT_RELU
    SIGMOID = backend.ACT_SIGMOID
    SOFTMAX = backend.ACT_SOFTMAX


class DimensionError(ValueError):
    """Shape mismatch, carrying the expected and actual widths."""

    def __init__(self, what: str, expected: int, actual: int):
        self.expected = int(expected)
        self.actual = int(actual)
        super().__init__(f"{what}: expected width {expected}, got {actual}")


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: Activation

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.ndim != 1:
            raise ValueError("weight must be 2-D and bias 1-D")
        if self.bias.shape[0] != self.weight.shape[0]:
            raise DimensionError("bias", self.weight.shape[0], self.bias.shape[0])
        self.activation = Activation(self.activation)

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]


class DecoderNetwork:
    """Stack of dense layers mapping {0,1}^K to the output space."""

    def __init__(self, layers: list[DenseLayer]):
        if not layers:
            raise ValueError("a decoder needs at least one layer")
        for prev, cur in zip(layers, layers[1:]):
            if cur.in_dim != prev.out_dim:
                raise DimensionError("layer chain", prev.out_dim, cur.in_dim)
        self.layers = list(layers)
        # kernel argument lists; in-place parameter updates keep these valid
        self._weights = [l.weight for l in self.layers]
        self._biases = [l.bias for l in self.layers]
        self._acts = [int(l.activation) for l in self.layers]

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def final_activation(self) -> Activation:
        return self.layers[-1].activation

    def params(self) -> list[np.ndarray]:
        out = []
        for l in self.layers:
            out.append(l.weight)
            out.append(l.bias)
        return out

    def forward(self, z: np.ndarray) -> np.ndarray:
        """Decode one binary K-vector. Validates the contract on z."""
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 1 or z.shape[0] != self.input_dim:
            raise DimensionError("code", self.input_dim, z.shape[-1] if z.ndim else 0)
        if not np.all((z == 0.0) | (z == 1.0)):
            raise ValueError("code entries must be 0 or 1")
        return self.forward_many(z[None, :])[0]

    def forward_many(self, Z: np.ndarray) -> np.ndarray:
        """Decode a batch of codes, shape (B, K) -> (B, output_dim).

        Entries are trusted to be binary; only the width is checked.
        """
        Z = np.ascontiguousarray(Z, dtype=np.float64)
        if Z.ndim != 2 or Z.shape[1] != self.input_dim:
            raise DimensionError("code batch", self.input_dim, Z.shape[-1])
        return backend.forward_batch(Z, self._weights, self._biases, self._acts)

    def forward_trace(self, Z: np.ndarray):
        """Forward pass keeping pre- and post-activation intermediates.

        NumPy path (not the kernel backend): only used by backward, which
        needs the intermediates anyway.
        """
        Z = np.ascontiguousarray(Z, dtype=np.float64)
        pre, post = [], [Z]
        A = Z
        for l in self.layers:
            P = A @ l.weight.T + l.bias
            A = _activate(P, l.activation)
            pre.append(P)
            post.append(A)
        return pre, post


def _activate(P: np.ndarray, act: Activation) -> np.ndarray:
    if act == Activation.IDENTITY:
        return P
    if act == Activation.RELU:
        return np.maximum(P, 0.0)
    if act == Activation.SIGMOID:
        out = np.empty_like(P)
        pos = P >= 0.0
        out[pos] = 1.0 / (1.0 + np.exp(-P[pos]))
        e = np.exp(P[~pos])
        out[~pos] = e / (1.0 + e)
        return out
    if act == Activation.SOFTMAX:
        e = np.exp(P - P.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)
    raise ValueError(f"unknown activation {act}")


def init_network(
    input_dim: int,
    hidden: tuple[int, ...],
    output_dim: int,
    final_activation: Activation,
    rng: np.random.Generator,
) -> DecoderNetwork:
    """Seeded Glorot-uniform initialization, ReLU hidden layers, zero biases."""
    dims = [input_dim, *hidden, output_dim]
    layers = []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        act = final_activation if i == len(dims) - 2 else Activation.RELU
        layers.append(DenseLayer(W, np.zeros(fan_out), act))
    return DecoderNetwork(layers)


@dataclass
class GradientBuffer:
    """Per-parameter gradient arrays congruent with a parameter list."""

    arrays: list[np.ndarray]
    count: int = 0

    @classmethod
    def zeros_like(cls, params: list[np.ndarray]) -> "GradientBuffer":
        return cls([np.zeros_like(p) for p in params], 0)

    def add(self, other: "GradientBuffer") -> "GradientBuffer":
        if len(other.arrays) != len(self.arrays):
            raise DimensionError("gradient buffer", len(self.arrays), len(other.arrays))
        for mine, theirs in zip(self.arrays, other.arrays):
            if mine.shape != theirs.shape:
                raise ValueError("gradient buffer shapes do not match")
            mine += theirs
        self.count += other.count
        return self

    def scale(self, s: float) -> "GradientBuffer":
        for a in self.arrays:
            a *= s
        return self

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays)


def backward(net: DecoderNetwork, Z: np.ndarray, upstream: np.ndarray) -> GradientBuffer:
    """Accumulate dL/dtheta for upstream = dL/d f(z), summed over the batch.

    Z is (K,) or (B, K) with upstream shaped to match. The result over a
    batch equals the sum of per-datum calls.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    U = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    if Z.shape[1] != net.input_dim:
        raise DimensionError("code batch", net.input_dim, Z.shape[1])
    if U.shape != (Z.shape[0], net.output_dim):
        raise DimensionError("upstream", net.output_dim, U.shape[-1])

    pre, post = net.forward_trace(Z)
    buf = GradientBuffer.zeros_like(net.params())
    G = U
    for li in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[li]
        P, A_in, A_out = pre[li], post[li], post[li + 1]
        if layer.activation == Activation.IDENTITY:
            D = G
        elif layer.activation == Activation.RELU:
            D = G * (P > 0.0)
        elif layer.activation == Activation.SIGMOID:
            D = G * A_out * (1.0 - A_out)
        elif layer.activation == Activation.SOFTMAX:
            # J^T u = s * (u - <u, s>) rowwise
            D = A_out * (G - np.einsum("ij,ij->i", G, A_out)[:, None])
        else:  # pragma: no cover
            raise ValueError(f"unknown activation {layer.activation}")
        buf.arrays[2 * li] += D.T @ A_in
        buf.arrays[2 * li + 1] += D.sum(axis=0)
        if li > 0:
            G = D @ layer.weight
    buf.count = Z.shape[0]
    return buf


@dataclass
class AdamState:
    """First/second-moment estimates plus the shared step hyperparameters."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    rho: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[np.ndarray], rho: float = 1e-3,
                   beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            t=0, rho=rho, beta1=beta1, beta2=beta2, eps=eps,
        )


def adam_step(params: list[np.ndarray], grads: GradientBuffer, state: AdamState) -> None:
    """One ADAM ascent step on params, in place.

    grads holds the gradient of the objective being maximized. Rejects
    non-finite gradients before touching anything, so a failed step never
    leaves a partial update behind.
    """
    if len(params) != len(grads.arrays):
        raise DimensionError("adam parameters", len(params), len(grads.arrays))
    if not grads.all_finite():
        raise ValueError("non-finite gradient entries; no update applied")
    state.t += 1
    b1t = 1.0 - state.beta1 ** state.t
    b2t = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads.arrays, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p += state.rho * (m / b1t) / (np.sqrt(v / b2t) + state.eps)
        if not np.isfinite(p).all():
            raise FloatingPointError("parameters became non-finite during update")
