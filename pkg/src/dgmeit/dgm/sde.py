"""Variance-exploding SDE, denoising score matching and predictor-corrector sampling.

Forward process ``dx = g(t) dw`` on ``t in [0, 1]`` with::

    sigma(t) = sigma_min * (sigma_max / sigma_min) ** t
    g(t)     = sigma(t) * sqrt(2 log(sigma_max / sigma_min))

so ``x_t | x_0 ~ N(x_0, (sigma(t)^2 - sigma_min^2) I)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..nnet import DenseNet, GradientSet, OptimizerConfig, OptimizerState, optimizer_step

ScoreFunction = Callable[[np.ndarray, float], np.ndarray]

DEFAULT_CORRECTOR_STEPS = 1
DEFAULT_CORRECTOR_SNR = 0.16


class NonFiniteStateError(FloatingPointError):
    def __init__(self, step: int):
        super().__init__(f"sampler state became non-finite at step {step}")
        self.step = step


@dataclass(frozen=True)
class SdeSchedule:
    sigma_min: float = 0.01
    sigma_max: float = 50.0
    K: int = 1000

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError("need 0 < sigma_min < sigma_max")
        if self.K < 1:
            raise ValueError("K must be at least 1")

    @property
    def log_ratio(self) -> float:
        return float(np.log(self.sigma_max / self.sigma_min))


def _check_t(t):
    t = np.asarray(t, dtype=float)
    if np.any((t < 0) | (t > 1)):
        raise ValueError("t must lie in [0, 1]")
    return t


def ve_sigma(schedule: SdeSchedule, t):
    t = _check_t(t)
    return schedule.sigma_min * (schedule.sigma_max / schedule.sigma_min) ** t


def ve_g(schedule: SdeSchedule, t):
    return ve_sigma(schedule, t) * np.sqrt(2.0 * schedule.log_ratio)


def ve_std(schedule: SdeSchedule, t):
    """Standard deviation of the perturbation kernel, ``sqrt(sigma(t)^2 - sigma(0)^2)``."""
    s = ve_sigma(schedule, t)
    return np.sqrt(np.maximum(s**2 - schedule.sigma_min**2, 0.0))


def analytic_gaussian_score(mean, var0: float, schedule: SdeSchedule) -> ScoreFunction:
    """Exact score of the time-``t`` marginal when ``x_0 ~ N(mean, var0 I)``."""
    if var0 <= 0:
        raise ValueError("var0 must be positive")
    mean = np.asarray(mean, dtype=float)

    def score(x, t):
        return -(np.asarray(x, dtype=float) - mean) / (var0 + ve_std(schedule, t) ** 2)

    return score


def gmm_score(means, weights, var0: float, schedule: SdeSchedule) -> ScoreFunction:
    """Exact score of an isotropic Gaussian mixture diffused to time ``t``."""
    means = np.asarray(means, dtype=float)
    logw = np.log(np.asarray(weights, dtype=float) / np.sum(weights))

    def score(x, t):
        x = np.asarray(x, dtype=float)
        xb = np.atleast_2d(x)
        var = var0 + ve_std(schedule, t) ** 2
        diff = xb[:, None, :] - means[None]
        logp = logw - 0.5 * np.sum(diff**2, axis=-1) / var
        resp = np.exp(logp - logp.max(axis=1, keepdims=True))
        resp /= resp.sum(axis=1, keepdims=True)
        out = -np.einsum("bk,bkd->bd", resp, diff) / var
        return out.reshape(x.shape)

    return score


@dataclass
class ScoreModel:
    """Score network with skip preconditioning.

    With ``std = std(t)`` and ``r = sqrt(sigma_data^2 + std^2)``::

        s(x, t) = -x / r^2 + sigma_data * F([x / r, t]) / (std * r)

    The first term is the exact score for data ``N(0, sigma_data^2 I)``; the
    net ``F`` supplies the correction, so the high-noise regime needs no
    learned identity map.
    """

    net: DenseNet
    schedule: SdeSchedule
    sigma_data: float = 1.0

    @property
    def dim(self) -> int:
        return self.net.input_dim - 1

    def net_input(self, x, t):
        xb = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.broadcast_to(np.asarray(t, dtype=float), (len(xb),))
        std = ve_std(self.schedule, t)
        r = np.sqrt(self.sigma_data**2 + std**2)
        return np.hstack([xb / r[:, None], t[:, None]]), std, r

    def __call__(self, x, t):
        inp, std, r = self.net_input(x, t)
        if np.any(std <= 0):
            raise ValueError("the score model is undefined at t = 0")
        xb = inp[:, :-1] * r[:, None]
        out = -xb / (r**2)[:, None] + self.sigma_data * self.net(inp) / (std * r)[:, None]
        return out.reshape(np.shape(x))


def dsm_loss_value(score: ScoreFunction, x0, t, eps, schedule: SdeSchedule) -> float:
    """Weighted denoising score-matching loss for fixed draws.

    ``mean_i std(t_i)^2 || s(x_t, t_i) + eps_i / std(t_i) ||^2`` with
    ``x_t = x_0 + std(t) eps``.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    eps = np.atleast_2d(np.asarray(eps, dtype=float))
    t = np.broadcast_to(np.asarray(t, dtype=float), (len(x0),))
    std = ve_std(schedule, t)[:, None]
    xt = x0 + std * eps
    s = np.stack([np.asarray(score(xt[i], float(t[i]))) for i in range(len(xt))])
    return float(np.mean(np.sum((std * s + eps) ** 2, axis=1)))


def dsm_loss(score_net: DenseNet, x0, schedule: SdeSchedule, rng=None, t=None, eps=None,
             sigma_data: float = 1.0) -> tuple[float, GradientSet]:
    """Denoising score matching loss with weight ``std(t)^2`` and its exact gradient.

    The net is evaluated through :class:`ScoreModel`; the weighted residual
    ``std * s(x_t, t) + eps`` is affine in the net output.  ``t`` and ``eps``
    are drawn from ``rng`` unless given explicitly.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    if len(x0) == 0:
        raise ValueError("empty batch")
    B = len(x0)
    if t is None or eps is None:
        rng = rng if rng is not None else np.random.default_rng()
        # keep t away from 0 where std(t) vanishes
        t = rng.uniform(1e-5, 1.0, size=B) if t is None else t
        eps = rng.standard_normal(x0.shape) if eps is None else eps
    t = np.broadcast_to(np.asarray(t, dtype=float), (B,))
    model = ScoreModel(score_net, schedule, sigma_data)
    std = ve_std(schedule, t)[:, None]
    xt = x0 + std * eps
    inp, _, r = model.net_input(xt, t)
    r = r[:, None]
    out, cache = score_net.forward_cache(inp)
    resid = -std * xt / r**2 + sigma_data * out / r + eps
    loss = float(np.mean(np.sum(resid**2, axis=1)))
    if not np.isfinite(loss):
        raise FloatingPointError("denoising score-matching loss is not finite")
    grads, _ = score_net.backward_cache(cache, 2.0 * resid * (sigma_data / r) / B)
    return loss, grads


@dataclass
class ScoreTrainConfig:
    steps: int = 5000
    batch: int = 128
    lr: float = 1e-3
    momentum: float = 0.9
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    seed: int = 0
    ema: float = 0.999  # parameter averaging decay; 0 disables


def train_score(data, schedule: SdeSchedule, config: ScoreTrainConfig | None = None,
                sigma_data: float | None = None, net: DenseNet | None = None):
    """Fit a :class:`ScoreModel` to ``data`` (rows are samples); returns ``(model, losses)``.

    The returned model carries the exponential moving average of the
    parameters, which suppresses the SGD noise that the ``1/std`` output
    scaling would otherwise amplify at small ``t``.
    """
    config = config or ScoreTrainConfig()
    data = np.atleast_2d(np.asarray(data, dtype=float))
    dim = data.shape[1]
    if sigma_data is None:
        sigma_data = float(np.std(data)) or 1.0
    if net is None:
        net = DenseNet.create([dim + 1, *config.hidden, dim], config.activation, seed=config.seed)
    rng = np.random.default_rng(config.seed)
    opt = OptimizerConfig(config.lr, config.momentum)
    state = OptimizerState()
    if not 0 <= config.ema < 1:
        raise ValueError("ema decay must lie in [0, 1)")
    avg = net.get_params()
    losses = np.empty(config.steps)
    for k in range(config.steps):
        batch = data[rng.integers(0, len(data), size=config.batch)]
        losses[k], grads = dsm_loss(net, batch, schedule, rng, sigma_data=sigma_data)
        optimizer_step(net, grads, state, opt)
        avg = config.ema * avg + (1.0 - config.ema) * net.get_params()
    if config.ema > 0:
        net.set_params(avg)
    return ScoreModel(net, schedule, sigma_data), losses


def langevin_step(score: ScoreFunction, x, t: float, snr: float, rng) -> np.ndarray:
    """One corrector update ``x + a s + sqrt(2a) z``.

    ``a = 2 (snr * mean||z|| / mean||s||)^2`` with norms averaged over the
    chains in the batch; per-chain ratios are heavy-tailed in low dimension.
    A vanishing score leaves the state unchanged.
    """
    grad = np.asarray(score(x, t), dtype=float)
    z = rng.standard_normal(x.shape)
    g_norm = np.mean(np.linalg.norm(np.atleast_2d(grad), axis=-1))
    z_norm = np.mean(np.linalg.norm(np.atleast_2d(z), axis=-1))
    if g_norm == 0:
        return x
    alpha = 2.0 * (snr * z_norm / g_norm) ** 2
    return x + alpha * grad + np.sqrt(2.0 * alpha) * z


def reverse_diffusion(score: ScoreFunction, schedule: SdeSchedule, x, start: int,
                      corrector_steps: int, corrector_snr: float, rng,
                      callback=None) -> np.ndarray:
    """Run predictor steps ``i = start-1, ..., 0`` of the ``schedule.K`` grid from state ``x``.

    Step ``i`` sits at ``t = (i + 1) / K`` and moves the state to ``t - 1/K``::

        x <- x + g(t)^2 s(x, t) dt
        x <- x + g(t) sqrt(dt) z

    followed by ``corrector_steps`` Langevin updates at the new time (none
    at ``t = 0``).
    """
    K = schedule.K
    dt = 1.0 / K
    for i in range(start - 1, -1, -1):
        t = (i + 1) / K
        g = float(ve_g(schedule, t))
        x = x + g**2 * np.asarray(score(x, t)) * dt
        x = x + g * np.sqrt(dt) * rng.standard_normal(x.shape)
        t_next = i / K
        if t_next > 0:
            for _ in range(corrector_steps):
                x = langevin_step(score, x, t_next, corrector_snr, rng)
        if not np.all(np.isfinite(x)):
            raise NonFiniteStateError(i)
        if callback is not None:
            callback(i, t, x)
    return x


def pc_sample(score: ScoreFunction, schedule: SdeSchedule, K: int | None = None,
              corrector_steps: int = DEFAULT_CORRECTOR_STEPS,
              corrector_snr: float = DEFAULT_CORRECTOR_SNR, dim: int = 1, seed: int = 0,
              n_samples: int | None = None, callback=None) -> np.ndarray:
    """Full reverse-time sampling from ``x_1 ~ N(0, sigma_max^2 I)``.

    Returns a ``(dim,)`` vector, or ``(n_samples, dim)`` independent chains.
    """
    if K is not None:
        schedule = SdeSchedule(schedule.sigma_min, schedule.sigma_max, K)
    if corrector_steps < 0 or corrector_snr <= 0:
        raise ValueError("corrector_steps must be >= 0 and corrector_snr > 0")
    rng = np.random.default_rng(seed)
    shape = (dim,) if n_samples is None else (n_samples, dim)
    x = schedule.sigma_max * rng.standard_normal(shape)
    return reverse_diffusion(score, schedule, x, schedule.K, corrector_steps, corrector_snr,
                             rng, callback)
