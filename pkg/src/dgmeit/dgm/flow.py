"""Conditional affine coupling layers and single-scale flow stacks.

The stack maps data ``x`` to latent ``z`` (the normalising direction)::

    y[I1] = x[I1]
    y[I2] = x[I2] * exp(s) + t,    (s, t) = M(x[I1], condition)

so the negative log-likelihood is ``-log N(z; 0, I) - sum(logdet)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nnet import DenseNet


class NonFiniteFlowError(FloatingPointError):
    pass


@dataclass
class CouplingLayer:
    """Affine coupling with ``st_net: [x[I1], condition] -> [s, t]``."""

    fixed: np.ndarray      # I1
    transformed: np.ndarray  # I2
    st_net: DenseNet

    def __post_init__(self):
        self.fixed = np.asarray(self.fixed, dtype=np.int64).reshape(-1)
        self.transformed = np.asarray(self.transformed, dtype=np.int64).reshape(-1)
        both = np.concatenate([self.fixed, self.transformed])
        if len(np.unique(both)) != len(both) or not np.array_equal(np.sort(both), np.arange(len(both))):
            raise ValueError("fixed and transformed indices must partition 0..n-1")
        if self.st_net.output_dim != 2 * len(self.transformed):
            raise ValueError("st_net must emit 2 * len(transformed) values")

    @property
    def dim(self) -> int:
        return len(self.fixed) + len(self.transformed)

    @property
    def cond_dim(self) -> int:
        return self.st_net.input_dim - len(self.fixed)

    def scale_shift(self, x_fixed, condition):
        x_fixed = np.atleast_2d(x_fixed)
        cond = np.atleast_2d(np.asarray(condition, dtype=float))
        if cond.shape[0] != x_fixed.shape[0]:
            cond = np.broadcast_to(cond, (x_fixed.shape[0], cond.shape[1]))
        out = self.st_net(np.hstack([x_fixed, cond]))
        k = len(self.transformed)
        s, t = out[:, :k], out[:, k:]
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(t))):
            raise NonFiniteFlowError("coupling network produced non-finite scale/shift")
        return s, t


def make_coupling(dim: int, cond_dim: int, fixed, hidden: int = 16, seed: int = 0,
                  activation: str = "tanh") -> CouplingLayer:
    fixed = np.asarray(fixed, dtype=np.int64)
    transformed = np.setdiff1d(np.arange(dim), fixed)
    net = DenseNet.create([len(fixed) + cond_dim, hidden, 2 * len(transformed)], activation, seed=seed)
    return CouplingLayer(fixed, transformed, net)


def _batch(x):
    x = np.asarray(x, dtype=float)
    return (x[None], True) if x.ndim == 1 else (x, False)


def coupling_forward(layer: CouplingLayer, x, condition) -> tuple[np.ndarray, np.ndarray | float]:
    """``(y, logdet)`` with ``logdet = sum(s)``."""
    xb, single = _batch(x)
    s, t = layer.scale_shift(xb[:, layer.fixed], condition)
    y = xb.copy()
    y[:, layer.transformed] = xb[:, layer.transformed] * np.exp(s) + t
    if not np.all(np.isfinite(y)):
        raise NonFiniteFlowError("coupling output is not finite")
    logdet = s.sum(axis=1)
    return (y[0], float(logdet[0])) if single else (y, logdet)


def coupling_inverse(layer: CouplingLayer, y, condition) -> np.ndarray:
    yb, single = _batch(y)
    s, t = layer.scale_shift(yb[:, layer.fixed], condition)
    x = yb.copy()
    x[:, layer.transformed] = np.exp(-s) * (yb[:, layer.transformed] - t)
    if not np.all(np.isfinite(x)):
        raise NonFiniteFlowError("coupling inverse is not finite")
    return x[0] if single else x


@dataclass(frozen=True)
class Permutation:
    perm: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.perm, dtype=np.int64)
        if not np.array_equal(np.sort(p), np.arange(len(p))):
            raise ValueError("not a permutation")
        object.__setattr__(self, "perm", p)

    @property
    def inverse(self) -> np.ndarray:
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(len(self.perm))
        return inv


def make_stack(dim: int, cond_dim: int, n_layers: int, hidden: int = 16, seed: int = 0,
               activation: str = "tanh") -> list:
    """Alternating half-splits, with a seeded random permutation between couplings."""
    rng = np.random.default_rng(seed)
    stack = []
    d = max(dim // 2, 0)
    for k in range(n_layers):
        fixed = np.arange(d) if k % 2 == 0 else np.arange(d, dim)
        if dim == 1:
            fixed = np.arange(0)
        stack.append(make_coupling(dim, cond_dim, fixed, hidden, seed=seed * 1000 + k, activation=activation))
        if k < n_layers - 1:
            stack.append(Permutation(rng.permutation(dim)))
    return stack


def flow_forward(stack, x, condition):
    """Data to latent; returns ``(z, total logdet)``."""
    z, single = _batch(x)
    total = np.zeros(len(z))
    for elem in stack:
        if isinstance(elem, Permutation):
            z = z[:, elem.perm]
        else:
            z, ld = coupling_forward(elem, z, condition)
            total += ld
    return (z[0], float(total[0])) if single else (z, total)


def flow_inverse(stack, z, condition):
    """Latent to data; returns ``(x, logdet of the inverse map)``."""
    x, single = _batch(z)
    total = np.zeros(len(x))
    for elem in reversed(stack):
        if isinstance(elem, Permutation):
            x = x[:, elem.inverse]
        else:
            s, _ = elem.scale_shift(x[:, elem.fixed], condition)
            x = coupling_inverse(elem, x, condition)
            total -= s.sum(axis=1)
    return (x[0], float(total[0])) if single else (x, total)


def flow_nll(stack, x, condition) -> float | np.ndarray:
    """``-[log N(z; 0, I) + log|det dz/dx|]`` for ``z`` the stack's image of ``x``."""
    z, logdet = flow_forward(stack, x, condition)
    z2 = np.atleast_2d(z)
    n = z2.shape[1]
    nll = 0.5 * n * np.log(2 * np.pi) + 0.5 * np.sum(z2**2, axis=1) - np.atleast_1d(logdet)
    if not np.all(np.isfinite(nll)):
        raise NonFiniteFlowError("negative log-likelihood is not finite")
    return float(nll[0]) if np.ndim(z) == 1 else nll


def conditioning_loss(h_net: DenseNet, v, targets) -> float:
    """Mean squared error of ``H(v_i)`` against the flattened targets (per pixel)."""
    out = np.atleast_2d(h_net(np.atleast_2d(v)))
    tgt = np.atleast_2d(np.asarray(targets, dtype=float)).reshape(out.shape[0], -1)
    if out.shape != tgt.shape:
        raise ValueError(f"H emits {out.shape}; targets have shape {tgt.shape}")
    return float(np.mean((out - tgt) ** 2))


def cnf_total_loss(stack, h_net: DenseNet, v, targets, alpha: float) -> float:
    """Mean NLL of ``targets`` conditioned on ``H(v)`` plus ``alpha`` times the conditioning loss."""
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    v2 = np.atleast_2d(v)
    tgt = np.atleast_2d(np.asarray(targets, dtype=float)).reshape(len(v2), -1)
    h = np.atleast_2d(h_net(v2))
    nll = np.mean([flow_nll(stack, tgt[i], h[i]) for i in range(len(v2))])
    return float(nll + alpha * conditioning_loss(h_net, v2, tgt))
