"""Desk-scale CSD* experiment: 16x16 images, a dense score net, GN starts.

Training phantoms, evaluation phantoms and measurement noise use disjoint
seed ranges so that the comparison is not evaluated on training data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..fem import add_measurement_noise
from ..inverse import InverseConfig
from ..metrics import ssim
from ..phantom import rasterize_idw, sample_phantom
from .csd import CsdStarConfig, RasterContext, csd_star_pipeline, gn_image
from .sde import ScoreModel, ScoreTrainConfig, SdeSchedule, train_score

TRAIN_SEED0 = 100_000
EVAL_SEED0 = 20_000


@dataclass
class DeskConfig:
    side: int = 16
    n_train: int = 20_000
    schedule: SdeSchedule = SdeSchedule(0.01, 5.0, 1000)
    train: ScoreTrainConfig = field(default_factory=lambda: ScoreTrainConfig(
        steps=20_000, batch=128, lr=3e-3, hidden=(512, 512), activation="tanh", seed=0))
    inverse: InverseConfig = field(default_factory=lambda: InverseConfig(lam=3.0, max_iters=20,
                                                                          misfit_tol=0.01))
    sampler: CsdStarConfig = field(default_factory=lambda: CsdStarConfig(1000, 50, corrector_steps=0))
    snr_db: float = 40.0
    kind: str = "two"


def training_images(ctx: RasterContext, cfg: DeskConfig) -> np.ndarray:
    """Flattened model-space images of ``cfg.n_train`` phantoms."""
    images = [rasterize_idw(ctx.mesh, sample_phantom(cfg.kind, TRAIN_SEED0 + i).paint(ctx.mesh), grid=cfg.side)
              for i in range(cfg.n_train)]
    return ctx.normalizer.to_model(np.array(images)).reshape(cfg.n_train, -1)


def train_desk_score(ctx: RasterContext, cfg: DeskConfig) -> ScoreModel:
    model, _ = train_score(training_images(ctx, cfg), cfg.schedule, cfg.train)
    return model


@dataclass(frozen=True)
class DeskCase:
    seed: int
    truth: np.ndarray
    gn: np.ndarray
    csd: np.ndarray

    @property
    def ssim_gn(self) -> float:
        return ssim(self.gn, self.truth)

    @property
    def ssim_csd(self) -> float:
        return ssim(self.csd, self.truth)


def run_case(seed: int, score, ctx: RasterContext, cfg: DeskConfig) -> DeskCase:
    """Simulate noisy data for phantom ``seed`` and reconstruct it with GN and CSD*."""
    sigma = sample_phantom(cfg.kind, seed).paint(ctx.mesh)
    v = add_measurement_noise(ctx.operator(sigma), cfg.snr_db, seed)
    gn = gn_image(v, cfg.inverse, ctx)
    csd = csd_star_pipeline(v, cfg.inverse, score, cfg.sampler, ctx, cfg.schedule, seed=seed, gn=gn)
    return DeskCase(seed, rasterize_idw(ctx.mesh, sigma, grid=cfg.side), gn, csd)
