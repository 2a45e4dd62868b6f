"""Minimal dense-network stack: forward, reverse-mode gradients, Adam.

All math is float64.  Inputs may be single vectors (d,) or batches (n, d);
gradients for batched calls sum over the batch rows, so the caller controls
per-row weighting through the output gradient it passes to backward().
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("linear", "relu", "sigmoid")
_ACT_TAG = {name: i for i, name in enumerate(ACTIVATIONS)}

_MAGIC = b"VAPR"
_FORMAT_VERSION = 1
_KIND_NETWORK = 1


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _activate_inplace(name, pre):
    """Apply the activation, reusing the pre-activation buffer where possible."""
    if name == "linear":
        return pre
    if name == "relu":
        return np.maximum(pre, 0.0, out=pre)
    if name == "sigmoid":
        return sigmoid(pre)
    raise ValueError(f"unknown activation {name!r}")


def _grad_from_activation(name, grad, act):
    """grad * activation'(pre), recovered from the stored activation value."""
    if name == "linear":
        return grad
    if name == "relu":
        return grad * (act > 0.0)
    if name == "sigmoid":
        return grad * (act * (1.0 - act))
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class DenseLayer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str = "linear"

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ValueError("W must be (out, in) and b must be (out,)")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self):
        return self.W.shape[1]

    @property
    def out_dim(self):
        return self.W.shape[0]


@dataclass
class Network:
    layers: list[DenseLayer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("network needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValueError(
                    f"layer shapes do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )

    @property
    def input_dim(self):
        return self.layers[0].in_dim

    @property
    def output_dim(self):
        return self.layers[-1].out_dim

    def copy(self) -> "Network":
        return Network(
            [DenseLayer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers]
        )


@dataclass
class GradientTape:
    """Per-parameter gradient buffers mirroring a Network's layers."""

    dW: list[np.ndarray] = field(default_factory=list)
    db: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def zeros_like(cls, net: Network) -> "GradientTape":
        return cls(
            dW=[np.zeros_like(l.W) for l in net.layers],
            db=[np.zeros_like(l.b) for l in net.layers],
        )

    def add(self, other: "GradientTape", scale=1.0):
        for i in range(len(self.dW)):
            self.dW[i] += scale * other.dW[i]
            self.db[i] += scale * other.db[i]

    def scale(self, factor):
        for i in range(len(self.dW)):
            self.dW[i] *= factor
            self.db[i] *= factor


def init_network(dims, activations, seed) -> Network:
    """Build a network with He-uniform (relu) / Xavier-uniform (other) weights.

    dims is the full chain [in, h1, ..., out]; activations has one entry per
    layer.  Biases start at zero; weights come from the seeded generator in
    layer order, so identical (dims, activations, seed) give identical nets.
    """
    if len(activations) != len(dims) - 1:
        raise ValueError("need one activation per layer")
    rng = np.random.default_rng(seed)
    layers = []
    for (fan_in, fan_out), act in zip(zip(dims, dims[1:]), activations):
        if act == "relu":
            limit = np.sqrt(6.0 / fan_in)
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(DenseLayer(W, np.zeros(fan_out), act))
    return Network(layers)


def forward(net: Network, x):
    """Run the network; returns (y, cache) with per-layer inputs and activations."""
    x = np.asarray(x, dtype=np.float64)
    vector_input = x.ndim == 1
    if vector_input:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ValueError(f"expected input dim {net.input_dim}, got shape {x.shape}")
    cache = []
    h = x
    for layer in net.layers:
        # Contiguous transpose: this BLAS runs A @ B far faster than A @ B.T.
        pre = h @ np.ascontiguousarray(layer.W.T)
        pre += layer.b
        act = _activate_inplace(layer.activation, pre)
        cache.append((h, act))
        h = act
    if vector_input:
        return h[0], (cache, True)
    return h, (cache, False)


def backward(net: Network, cache, dy):
    """Reverse-mode gradients from a matching forward() cache.

    dy is the gradient of a scalar loss w.r.t. the forward output (same
    shape).  Returns (tape, dx).
    """
    layer_cache, vector_input = cache
    if len(layer_cache) != len(net.layers):
        raise ValueError("cache does not match network (stale cache?)")
    dy = np.asarray(dy, dtype=np.float64)
    if vector_input:
        dy = dy[None, :]
    if dy.shape[1] != net.output_dim or dy.shape[0] != layer_cache[-1][1].shape[0]:
        raise ValueError("output gradient shape does not match cached forward pass")

    tape = GradientTape([None] * len(net.layers), [None] * len(net.layers))
    grad = dy
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        h, act = layer_cache[i]
        if h.shape[1] != layer.in_dim or act.shape[1] != layer.out_dim:
            raise ValueError("cache does not match network (stale cache?)")
        dpre = _grad_from_activation(layer.activation, grad, act)
        tape.dW[i] = dpre.T @ h
        tape.db[i] = dpre.sum(axis=0)
        grad = dpre @ layer.W
    if vector_input:
        return tape, grad[0]
    return tape, grad


def slice_cache(cache, idx):
    """Restrict a batched forward cache to the given rows (e.g. WTA winners)."""
    layer_cache, vector_input = cache
    if vector_input:
        raise ValueError("cannot slice a vector-input cache")
    return [(h[idx], pre[idx]) for h, pre in layer_cache], False


@dataclass
class AdamState:
    """Adam moments plus hyperparameters for one Network."""

    mW: list[np.ndarray]
    mb: list[np.ndarray]
    vW: list[np.ndarray]
    vb: list[np.ndarray]
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def for_network(cls, net: Network, lr=1e-4, weight_decay=0.0) -> "AdamState":
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        if weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        return cls(
            mW=[np.zeros_like(l.W) for l in net.layers],
            mb=[np.zeros_like(l.b) for l in net.layers],
            vW=[np.zeros_like(l.W) for l in net.layers],
            vb=[np.zeros_like(l.b) for l in net.layers],
            lr=lr,
            weight_decay=weight_decay,
        )


def adam_step(net: Network, tape: GradientTape, state: AdamState) -> Network:
    """One Adam update with bias correction; mutates net in place.

    weight_decay enters as a plain L2 gradient term on weights only (coupled
    decay), leaving biases untouched.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for i, layer in enumerate(net.layers):
        gW = tape.dW[i]
        if state.weight_decay > 0.0:
            gW = gW + state.weight_decay * layer.W
        state.mW[i] = state.beta1 * state.mW[i] + (1.0 - state.beta1) * gW
        state.vW[i] = state.beta2 * state.vW[i] + (1.0 - state.beta2) * gW * gW
        layer.W -= state.lr * (state.mW[i] / c1) / (np.sqrt(state.vW[i] / c2) + state.eps)

        gb = tape.db[i]
        state.mb[i] = state.beta1 * state.mb[i] + (1.0 - state.beta1) * gb
        state.vb[i] = state.beta2 * state.vb[i] + (1.0 - state.beta2) * gb * gb
        layer.b -= state.lr * (state.mb[i] / c1) / (np.sqrt(state.vb[i] / c2) + state.eps)
    return net


def lr_schedule(epoch, lr0, n_decay):
    """Exponential decay by 0.8 every n_decay epochs, capped at 10 occurrences."""
    if epoch < 0 or n_decay < 1:
        raise ValueError("epoch must be >= 0 and n_decay >= 1")
    return lr0 * 0.8 ** min(epoch // n_decay, 10)


# ---------------------------------------------------------------------------
# Checkpoint I/O (little-endian binary, magic "VAPR")
# ---------------------------------------------------------------------------


def _pack_network(net: Network) -> bytes:
    parts = [struct.pack("<I", len(net.layers))]
    for layer in net.layers:
        parts.append(
            struct.pack("<IIB", layer.in_dim, layer.out_dim, _ACT_TAG[layer.activation])
        )
    for layer in net.layers:
        parts.append(np.ascontiguousarray(layer.W, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(layer.b, dtype="<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, n) -> bytes:
        if self.off + n > len(self.data):
            raise ValueError("checkpoint truncated")
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)


def _unpack_network(r: _Reader) -> Network:
    (n_layers,) = r.unpack("<I")
    descr = [r.unpack("<IIB") for _ in range(n_layers)]
    layers = []
    for in_dim, out_dim, tag in descr:
        W = r.array((out_dim, in_dim))
        b = r.array((out_dim,))
        layers.append(DenseLayer(W, b, ACTIVATIONS[tag]))
    return Network(layers)


def save_network(path, net: Network, adam: AdamState | None = None):
    """Write a single network (optionally with Adam state) to a checkpoint file."""
    parts = [_MAGIC, struct.pack("<IB", _FORMAT_VERSION, _KIND_NETWORK)]
    parts.append(_pack_network(net))
    parts.append(struct.pack("<B", 0 if adam is None else 1))
    if adam is not None:
        parts.append(
            struct.pack(
                "<Qddddd",
                adam.step,
                adam.lr,
                adam.beta1,
                adam.beta2,
                adam.eps,
                adam.weight_decay,
            )
        )
        for bufs in (adam.mW, adam.mb, adam.vW, adam.vb):
            for arr in bufs:
                parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def load_network(path):
    """Read a checkpoint written by save_network; returns (net, adam_or_None)."""
    with open(path, "rb") as f:
        r = _Reader(f.read())
    if r.take(4) != _MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    version, kind = r.unpack("<IB")
    if version != _FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    if kind != _KIND_NETWORK:
        raise ValueError("checkpoint does not hold a bare network")
    net = _unpack_network(r)
    (has_adam,) = r.unpack("<B")
    adam = None
    if has_adam:
        step, lr, b1, b2, eps, wd = r.unpack("<Qddddd")
        adam = AdamState.for_network(net, lr=lr, weight_decay=wd)
        adam.step, adam.beta1, adam.beta2, adam.eps = step, b1, b2, eps
        for bufs in (adam.mW, adam.mb, adam.vW, adam.vb):
            for i, layer in enumerate(net.layers):
                bufs[i] = r.array(bufs[i].shape)
    return net, adam
