"""Image quality metrics for reconstructed conductivity images."""

from __future__ import annotations

from dataclasses import astuple, dataclass, fields

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(recon, gt) -> tuple[np.ndarray, np.ndarray]:
    r = np.asarray(recon, dtype=float)
    g = np.asarray(gt, dtype=float)
    if r.shape != g.shape:
        raise ValueError(f"shape mismatch: {r.shape} vs {g.shape}")
    return r, g


def _range(x: np.ndarray, what: str) -> float:
    rng = float(x.max() - x.min())
    if rng <= 0:
        raise ValueError(f"{what} is constant; its dynamic range is zero")
    return rng


def mse(recon, gt) -> float:
    r, g = _pair(recon, gt)
    return float(np.mean((r - g) ** 2))


def psnr(recon, gt) -> float:
    """``10 log10(range(gt)^2 / mse)``; ``inf`` when the images coincide."""
    r, g = _pair(recon, gt)
    peak = _range(g, "ground truth")
    err = mse(r, g)
    if err == 0:
        return float("inf")
    return float(10.0 * np.log10(peak**2 / err))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-ax**2 / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(recon, gt, data_range: float | str | None = None) -> float:
    """Mean SSIM over all fully-contained 11x11 Gaussian windows.

    ``data_range`` defaults to the ground-truth range; ``"pair"`` uses the
    range of both images together, which makes the index symmetric.
    """
    r, g = _pair(recon, gt)
    if r.ndim != 2 or min(r.shape) < SSIM_WINDOW:
        raise ValueError(f"images must be 2-D and at least {SSIM_WINDOW} pixels per side")
    if data_range is None:
        L = _range(g, "ground truth")
    elif data_range == "pair":
        L = float(max(r.max(), g.max()) - min(r.min(), g.min()))
        if L <= 0:
            raise ValueError("both images are the same constant")
    else:
        L = float(data_range)
        if L <= 0:
            raise ValueError("data_range must be positive")
    w = gaussian_window()

    def local(x):
        return np.einsum("ijkl,kl->ij", sliding_window_view(x, w.shape), w)

    mu_r, mu_g = local(r), local(g)
    var_r = local(r * r) - mu_r**2
    var_g = local(g * g) - mu_g**2
    cov = local(r * g) - mu_r * mu_g
    c1, c2 = (SSIM_K1 * L) ** 2, (SSIM_K2 * L) ** 2
    smap = ((2 * mu_r * mu_g + c1) * (2 * cov + c2)) / ((mu_r**2 + mu_g**2 + c1) * (var_r + var_g + c2))
    return float(np.clip(smap.mean(), -1.0, 1.0))


def re(recon, gt) -> float:
    """Relative L1 error ``sum|recon - gt| / sum|gt|``."""
    r, g = _pair(recon, gt)
    denom = np.sum(np.abs(g))
    if denom == 0:
        raise ValueError("ground truth is identically zero")
    return float(np.sum(np.abs(r - g)) / denom)


def ae(recon, gt) -> float:
    """Mean absolute pixel error."""
    r, g = _pair(recon, gt)
    return float(np.mean(np.abs(r - g)))


def dr(recon, gt) -> float:
    """Ratio of the reconstruction's value range to the ground truth's."""
    r, g = _pair(recon, gt)
    return float((r.max() - r.min()) / _range(g, "ground truth"))


@dataclass(frozen=True)
class MetricReport:
    mse: float
    psnr: float
    ssim: float
    re: float
    ae: float
    dr: float

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def as_tuple(self) -> tuple[float, ...]:
        return astuple(self)


def evaluate(recon, gt) -> MetricReport:
    return MetricReport(mse=mse(recon, gt), psnr=psnr(recon, gt), ssim=ssim(recon, gt),
                        re=re(recon, gt), ae=ae(recon, gt), dr=dr(recon, gt))


def summarize(reports) -> tuple[np.ndarray, np.ndarray]:
    """Per-metric mean and standard deviation over a list of reports.

    Infinite PSNR values (exact reconstructions) propagate as ``inf``.
    """
    table = np.array([rep.as_tuple() for rep in reports], dtype=float)
    if len(table) == 0:
        raise ValueError("no reports to summarise")
    with np.errstate(invalid="ignore"):
        return table.mean(axis=0), table.std(axis=0)
