"""Two-dimensional Gaussian mixture used to exercise score training end to end."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sde import ScoreFunction, SdeSchedule, gmm_score


@dataclass(frozen=True)
class GaussianMixture2D:
    means: np.ndarray = field(default_factory=lambda: np.array([[-2.0, 0.0], [2.0, 0.0]]))
    weights: np.ndarray = field(default_factory=lambda: np.array([0.25, 0.75]))
    var: float = 0.09

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if means.ndim != 2 or len(means) != len(w) or np.any(w <= 0) or self.var <= 0:
            raise ValueError("need one positive weight per mean and a positive variance")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "weights", w / w.sum())

    def sample(self, n: int, rng) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        return self.means[comp] + np.sqrt(self.var) * rng.standard_normal((n, self.means.shape[1]))

    def exact_score(self, schedule: SdeSchedule) -> ScoreFunction:
        return gmm_score(self.means, self.weights, self.var, schedule)

    def assign(self, x) -> np.ndarray:
        """Index of the nearest mean for every row of ``x``."""
        x = np.atleast_2d(x)
        d = np.linalg.norm(x[:, None, :] - self.means[None], axis=-1)
        return np.argmin(d, axis=1)

    def mode_weights(self, x) -> np.ndarray:
        return np.bincount(self.assign(x), minlength=len(self.weights)) / len(np.atleast_2d(x))
