"""Conditional VAE objective and its two-stage composition.

Stage one fits an encoder ``Phi`` (outputs ``[mu, log std]``) and decoder
``Psi`` on images; stage two regresses measurements onto sampled latents
with ``f_FCN``; reconstruction is ``Psi(f_FCN(v))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nnet import DenseNet, OptimizerConfig, OptimizerState, optimizer_step


@dataclass(frozen=True)
class DiagonalGaussian:
    mu: np.ndarray
    sigma_std: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        std = np.asarray(self.sigma_std, dtype=float)
        if mu.shape != std.shape:
            raise ValueError("mu and sigma_std must have the same shape")
        if not np.all(std > 0):
            raise ValueError("sigma_std must be strictly positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma_std", std)


def reparameterize(g: DiagonalGaussian, eps) -> np.ndarray:
    eps = np.asarray(eps, dtype=float)
    if eps.shape[-1:] != g.mu.shape[-1:]:
        raise ValueError(f"eps has shape {eps.shape}; latent size is {g.mu.shape[-1]}")
    return g.mu + g.sigma_std * eps


def kl_to_standard_normal(g: DiagonalGaussian) -> float | np.ndarray:
    """``KL(N(mu, diag std^2) || N(0, I))``, summed over the last axis."""
    mu, s = g.mu, g.sigma_std
    return 0.5 * np.sum(mu**2 + s**2 - 2.0 * np.log(s) - 1.0, axis=-1)


def vae_loss(recon, target, g: DiagonalGaussian) -> float:
    """Squared reconstruction error plus KL; batches (2-D inputs) are averaged."""
    recon = np.asarray(recon, dtype=float)
    target = np.asarray(target, dtype=float)
    if recon.shape != target.shape:
        raise ValueError(f"shape mismatch: {recon.shape} vs {target.shape}")
    per = np.sum((recon - target) ** 2, axis=-1) + kl_to_standard_normal(g)
    return float(np.mean(per))


def fcn_loss(predicted, encoded) -> float:
    """Mean over samples of ``||f_FCN(v_i) - z_i||^2``."""
    p = np.atleast_2d(np.asarray(predicted, dtype=float))
    e = np.atleast_2d(np.asarray(encoded, dtype=float))
    if p.shape != e.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {e.shape}")
    return float(np.mean(np.sum((p - e) ** 2, axis=1)))


def cvae_reconstruct(v, fcn: DenseNet, decoder: DenseNet) -> np.ndarray:
    """Mean-path reconstruction ``decoder(fcn(v))``."""
    if fcn.output_dim != decoder.input_dim:
        raise ValueError(f"fcn emits {fcn.output_dim} latents, decoder expects {decoder.input_dim}")
    return decoder(fcn(v))


def encode(encoder: DenseNet, x) -> DiagonalGaussian:
    out = encoder(x)
    k = out.shape[-1] // 2
    return DiagonalGaussian(out[..., :k], np.exp(out[..., k:]))


@dataclass
class TrainConfig:
    steps: int = 2000
    batch: int = 32
    lr: float = 1e-3
    momentum: float = 0.9
    seed: int = 0


def train_vae(images, latent_dim: int, hidden: int = 64, config: TrainConfig | None = None):
    """Stage one: minimise the batch VAE objective.  Returns ``(encoder, decoder, losses)``."""
    config = config or TrainConfig()
    x_all = np.asarray(images, dtype=float).reshape(len(images), -1)
    n = x_all.shape[1]
    rng = np.random.default_rng(config.seed)
    enc = DenseNet.create([n, hidden, 2 * latent_dim], "tanh", seed=config.seed)
    dec = DenseNet.create([latent_dim, hidden, n], "tanh", seed=config.seed + 1)
    opt = OptimizerConfig(config.lr, config.momentum)
    s_enc, s_dec = OptimizerState(), OptimizerState()
    losses = []
    for _ in range(config.steps):
        idx = rng.integers(0, len(x_all), size=min(config.batch, len(x_all)))
        x = x_all[idx]
        B = len(x)
        eps = rng.standard_normal((B, latent_dim))
        h, enc_cache = enc.forward_cache(x)
        mu, log_std = h[:, :latent_dim], h[:, latent_dim:]
        std = np.exp(log_std)
        z = mu + std * eps
        out, dec_cache = dec.forward_cache(z)
        g = DiagonalGaussian(mu, std)
        losses.append(vae_loss(out, x, g))
        g_dec, dz = dec.backward_cache(dec_cache, 2.0 * (out - x) / B)
        d_mu = dz + mu / B
        d_log_std = dz * eps * std + (std**2 - 1.0) / B
        g_enc, _ = enc.backward_cache(enc_cache, np.hstack([d_mu, d_log_std]))
        optimizer_step(dec, g_dec, s_dec, opt)
        optimizer_step(enc, g_enc, s_enc, opt)
    return enc, dec, np.array(losses)


def train_regression(inputs, targets, net: DenseNet, config: TrainConfig | None = None):
    """Minimise ``mean ||net(x_i) - y_i||^2`` by minibatch momentum SGD; returns the loss history."""
    config = config or TrainConfig()
    x_all = np.asarray(inputs, dtype=float)
    y_all = np.asarray(targets, dtype=float)
    rng = np.random.default_rng(config.seed)
    opt = OptimizerConfig(config.lr, config.momentum)
    state = OptimizerState()
    losses = []
    for _ in range(config.steps):
        idx = rng.integers(0, len(x_all), size=min(config.batch, len(x_all)))
        out, cache = net.forward_cache(x_all[idx])
        y = y_all[idx]
        losses.append(fcn_loss(out, y))
        grads, _ = net.backward_cache(cache, 2.0 * (out - y) / len(idx))
        optimizer_step(net, grads, state, opt)
    return np.array(losses)


@dataclass
class CvaeModel:
    encoder: DenseNet
    decoder: DenseNet
    fcn: DenseNet

    def reconstruct(self, v) -> np.ndarray:
        return cvae_reconstruct(v, self.fcn, self.decoder)


def train_cvae(images, measurements, latent_dim: int, hidden: int = 64,
               vae_config: TrainConfig | None = None,
               fcn_config: TrainConfig | None = None) -> CvaeModel:
    """Both training stages; the regression targets are sampled latents ``z_i``."""
    x = np.asarray(images, dtype=float).reshape(len(images), -1)
    v = np.asarray(measurements, dtype=float)
    enc, dec, _ = train_vae(x, latent_dim, hidden, vae_config)
    fcn_config = fcn_config or TrainConfig()
    rng = np.random.default_rng(fcn_config.seed + 7)
    z = reparameterize(encode(enc, x), rng.standard_normal((len(x), latent_dim)))
    fcn = DenseNet.create([v.shape[1], hidden, latent_dim], "tanh", seed=fcn_config.seed + 2)
    train_regression(v, z, fcn, fcn_config)
    return CvaeModel(enc, dec, fcn)
