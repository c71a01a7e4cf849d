"""Small fully-connected networks with hand-written backpropagation.

Inputs are batched row-wise: ``x`` has shape ``(batch, input_dim)``; a 1-D
vector is treated as a batch of one and returned as 1-D.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .io import atomic_open

ACTIVATIONS = ("linear", "relu", "tanh")
_MAGIC = b"DNET"
_VERSION = 1


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "linear":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "linear":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0).astype(float)
    return 1.0 - a * a


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray    # (out,)
    activation: str = "linear"

    def __post_init__(self):
        self.weight = np.array(self.weight, dtype=float, ndmin=2)
        self.bias = np.array(self.bias, dtype=float).reshape(-1)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError("bias length must equal the weight row count")


@dataclass
class DenseNet:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if b.weight.shape[1] != a.weight.shape[0]:
                raise ValueError("consecutive layer dimensions do not chain")

    @classmethod
    def create(cls, dims, activations, seed: int = 0) -> "DenseNet":
        """Glorot-uniform weights, zero biases.

        ``dims = [in, h1, ..., out]``; ``activations`` has one entry per layer
        (a single string applies to all hidden layers, output stays linear).
        """
        dims = list(dims)
        n = len(dims) - 1
        if n < 1:
            raise ValueError("dims needs an input and an output size")
        if isinstance(activations, str):
            activations = [activations] * (n - 1) + ["linear"]
        if len(activations) != n:
            raise ValueError(f"expected {n} activations, got {len(activations)}")
        rng = np.random.default_rng(seed)
        layers = []
        for fan_in, fan_out, act in zip(dims[:-1], dims[1:], activations):
            a = np.sqrt(6.0 / (fan_in + fan_out))
            layers.append(Layer(rng.uniform(-a, a, size=(fan_out, fan_in)), np.zeros(fan_out), act))
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def n_params(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers)

    def copy(self) -> "DenseNet":
        return DenseNet([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def get_params(self) -> np.ndarray:
        return np.concatenate([np.concatenate([l.weight.ravel(), l.bias]) for l in self.layers])

    def set_params(self, flat) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {flat.size}")
        pos = 0
        for l in self.layers:
            l.weight = flat[pos:pos + l.weight.size].reshape(l.weight.shape).copy()
            pos += l.weight.size
            l.bias = flat[pos:pos + l.bias.size].copy()
            pos += l.bias.size

    def _check_input(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x2 = x[None] if single else x
        if x2.ndim != 2 or x2.shape[1] != self.input_dim:
            raise ValueError(f"input has shape {x.shape}; expected (..., {self.input_dim})")
        return x2, single

    def forward_cache(self, x):
        """Output plus the per-layer ``(input, preactivation, output)`` cache."""
        a, single = self._check_input(x)
        cache = []
        for l in self.layers:
            z = a @ l.weight.T + l.bias
            out = _act(l.activation, z)
            cache.append((a, z, out))
            a = out
        return (a[0] if single else a), (cache, single)

    def __call__(self, x) -> np.ndarray:
        return self.forward_cache(x)[0]

    def backward_cache(self, cache, upstream):
        cache, single = cache
        g = np.asarray(upstream, dtype=float)
        g = g[None] if single and g.ndim == 1 else g
        if g.shape != cache[-1][2].shape:
            raise ValueError(f"upstream gradient has shape {g.shape}; expected {cache[-1][2].shape}")
        grads = []
        for l, (a_in, z, a_out) in zip(reversed(self.layers), reversed(cache)):
            dz = g * _act_grad(l.activation, z, a_out)
            grads.append((dz.T @ a_in, dz.sum(axis=0)))
            g = dz @ l.weight
        return GradientSet(grads[::-1]), (g[0] if single else g)


@dataclass
class GradientSet:
    """Per-layer ``(d weight, d bias)`` pairs, congruent with a :class:`DenseNet`."""

    grads: list[tuple[np.ndarray, np.ndarray]]

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in self.grads])

    def scaled(self, c: float) -> "GradientSet":
        return GradientSet([(c * gw, c * gb) for gw, gb in self.grads])

    def __add__(self, other: "GradientSet") -> "GradientSet":
        return GradientSet([(a + c, b + d) for (a, b), (c, d) in zip(self.grads, other.grads)])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(gw)) and np.all(np.isfinite(gb)) for gw, gb in self.grads)

    def check_congruent(self, net: DenseNet) -> None:
        if len(self.grads) != len(net.layers) or any(
                gw.shape != l.weight.shape or gb.shape != l.bias.shape
                for (gw, gb), l in zip(self.grads, net.layers)):
            raise ValueError("gradient shapes do not match the network")


def net_forward(net: DenseNet, x) -> np.ndarray:
    return net(x)


def net_backward(net: DenseNet, x, upstream) -> tuple[GradientSet, np.ndarray]:
    """Parameter gradients (summed over the batch) and the input gradient of ``<upstream, net(x)>``."""
    _, cache = net.forward_cache(x)
    return net.backward_cache(cache, upstream)


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-3
    momentum: float = 0.9

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")


@dataclass
class OptimizerState:
    velocity: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    steps: int = 0


def optimizer_step(net: DenseNet, grads: GradientSet, state: OptimizerState | None = None,
                   config: OptimizerConfig | None = None) -> tuple[DenseNet, OptimizerState]:
    """Heavy-ball update ``v <- mu v - lr g``, ``p <- p + v``; modifies ``net`` in place."""
    config = config or OptimizerConfig()
    state = state if state is not None else OptimizerState()
    grads.check_congruent(net)
    if not grads.is_finite():
        raise ValueError("non-finite gradient")
    if not state.velocity:
        state.velocity = [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in net.layers]
    new_v = []
    for l, (vw, vb), (gw, gb) in zip(net.layers, state.velocity, grads.grads):
        vw = config.momentum * vw - config.lr * gw
        vb = config.momentum * vb - config.lr * gb
        l.weight = l.weight + vw
        l.bias = l.bias + vb
        new_v.append((vw, vb))
    state.velocity = new_v
    state.steps += 1
    return net, state


# checkpoint: magic | version u32 | n_layers u32 | per layer (in u32, out u32, act u8)
#             | float64 parameters | u32 metadata length | JSON metadata
_HEAD = struct.Struct("<4sII")
_LAYER = struct.Struct("<IIB")


def save_net(path, net: DenseNet, metadata: dict | None = None) -> None:
    parts = [_HEAD.pack(_MAGIC, _VERSION, len(net.layers))]
    for l in net.layers:
        parts.append(_LAYER.pack(l.weight.shape[1], l.weight.shape[0], ACTIVATIONS.index(l.activation)))
    parts.append(net.get_params().astype("<f8").tobytes())
    meta = json.dumps(metadata or {}, sort_keys=True).encode()
    parts.append(struct.pack("<I", len(meta)) + meta)
    with atomic_open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_net(path) -> tuple[DenseNet, dict]:
    raw = Path(path).read_bytes()
    try:
        magic, version, n = _HEAD.unpack_from(raw)
        if magic != _MAGIC or version != _VERSION:
            raise ValueError(f"{path}: not a network checkpoint")
        pos = _HEAD.size
        shapes = []
        for _ in range(n):
            fan_in, fan_out, act = _LAYER.unpack_from(raw, pos)
            shapes.append((fan_in, fan_out, ACTIVATIONS[act]))
            pos += _LAYER.size
        layers = [Layer(np.zeros((o, i)), np.zeros(o), a) for i, o, a in shapes]
        net = DenseNet(layers)
        count = net.n_params
        net.set_params(np.frombuffer(raw, dtype="<f8", count=count, offset=pos))
        pos += 8 * count
        (mlen,) = struct.unpack_from("<I", raw, pos)
        meta = json.loads(raw[pos + 4:pos + 4 + mlen].decode())
    except (struct.error, IndexError, UnicodeDecodeError, json.JSONDecodeError) as err:
        raise ValueError(f"{path}: corrupt network checkpoint ({err})") from err
    return net, meta
