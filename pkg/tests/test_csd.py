import numpy as np
import pytest

from dgmeit.dgm.csd import (CsdStarConfig, ImageNormalizer, PipelineError, RasterContext,
                            csd_star_pipeline, csd_star_sample, gn_image)
from dgmeit.dgm.sde import SdeSchedule, analytic_gaussian_score, pc_sample, ve_g, ve_std
from dgmeit.inverse import InverseConfig
from dgmeit.mesh import build_disk_mesh
from dgmeit.phantom import pixel_centers, rasterize_idw, sample_phantom

SCHED = SdeSchedule(0.01, 50.0, 1000)


def test_config_validation():
    for bad in (dict(K=0), dict(K_prime=-1), dict(K=10, K_prime=11), dict(corrector_snr=0.0),
                dict(corrector_steps=-1)):
        with pytest.raises(ValueError):
            CsdStarConfig(**bad)
    with pytest.raises(ValueError):
        csd_star_sample(lambda x, t: x, CsdStarConfig(), SCHED)


@pytest.mark.parametrize("k_prime", [1, 17, 600])
def test_step_count_is_k_prime(k_prime):
    steps = []
    cfg = CsdStarConfig(1000, k_prime, np.zeros(3))
    csd_star_sample(analytic_gaussian_score(np.zeros(3), 1.0, SCHED), cfg, SCHED, seed=0,
                    callback=lambda i, t, x: steps.append((i, t)))
    assert len(steps) == k_prime
    assert steps[0] == (k_prime - 1, k_prime / 1000) and steps[-1] == (0, 1 / 1000)


def test_k_prime_zero_returns_input():
    start = np.array([0.3, -1.2, 5.0])
    out = csd_star_sample(lambda x, t: np.full_like(x, np.nan), CsdStarConfig(1000, 0, start), SCHED)
    np.testing.assert_array_equal(out, start)


def test_first_step_is_hijacked_update():
    # with the corrector off the first step is sigma_gn + g^2 s dt + g sqrt(dt) z
    score = analytic_gaussian_score(np.zeros(2), 1.0, SCHED)
    start = np.array([0.5, -0.5])
    seen = []
    csd_star_sample(score, CsdStarConfig(1000, 5, start, corrector_steps=0), SCHED, seed=3,
                    callback=lambda i, t, x: seen.append(x.copy()))
    t = 5 / 1000
    g = float(ve_g(SCHED, t))
    z = np.random.default_rng(3).standard_normal(2)
    np.testing.assert_allclose(seen[0], start + g**2 * score(start, t) / 1000 + g * np.sqrt(1e-3) * z,
                               rtol=1e-14)


def test_deterministic_per_seed():
    score = analytic_gaussian_score(np.zeros(4), 1.0, SCHED)
    cfg = CsdStarConfig(1000, 50, np.ones(4))
    a = csd_star_sample(score, cfg, SCHED, seed=2)
    assert np.array_equal(a, csd_star_sample(score, cfg, SCHED, seed=2))
    assert not np.array_equal(a, csd_star_sample(score, cfg, SCHED, seed=3))


def test_marginal_consistency():
    # a hijack started from the exact intermediate marginal must end with the
    # moments of the full sampler
    m, var0, n = 1.5, 0.5, 10_000
    score = analytic_gaussian_score(np.array([m]), var0, SCHED)
    kp = 600
    std = float(ve_std(SCHED, kp / 1000))
    start = m + np.sqrt(var0 + std**2) * np.random.default_rng(0).standard_normal((n, 1))
    hijack = csd_star_sample(score, CsdStarConfig(1000, kp, start), SCHED, seed=1)
    full = pc_sample(score, SCHED, dim=1, seed=2, n_samples=n)
    assert hijack.mean() == pytest.approx(full.mean(), rel=0.05)
    assert hijack.var() == pytest.approx(full.var(), rel=0.05)


def test_translation_equivariance():
    c, n = 4.0, 5000
    base = analytic_gaussian_score(np.array([0.0]), 1.0, SCHED)
    start = np.random.default_rng(0).normal(0, 3, (n, 1))
    a = csd_star_sample(base, CsdStarConfig(1000, 400, start), SCHED, seed=5)
    b = csd_star_sample(lambda x, t: base(x - c, t), CsdStarConfig(1000, 400, start + c), SCHED, seed=5)
    assert b.mean() - c == pytest.approx(a.mean(), abs=4 * np.sqrt(a.var() / n))
    assert b.var() == pytest.approx(a.var(), rel=0.05)


def test_normalizer_roundtrip():
    norm = ImageNormalizer(offset=1.0, scale=0.5)
    img = np.random.default_rng(0).uniform(0.5, 1.5, (4, 4))
    np.testing.assert_allclose(norm.to_image(norm.to_model(img)), img, rtol=1e-15)


@pytest.fixture(scope="module")
def ctx():
    return RasterContext(build_disk_mesh(), side=16)


@pytest.fixture(scope="module")
def case(ctx):
    spec = sample_phantom("two", 5)
    truth = spec.paint(ctx.mesh)
    v = ctx.operator(truth)
    return v, rasterize_idw(ctx.mesh, truth, grid=16)


def test_pipeline_k_prime_zero_is_gn(ctx, case):
    v, _ = case
    icfg = InverseConfig(lam=3.0, max_iters=5)
    gn = gn_image(v, icfg, ctx)
    out = csd_star_pipeline(v, icfg, lambda x, t: x, CsdStarConfig(1000, 0), ctx, SCHED)
    np.testing.assert_array_equal(out, gn)


def test_pipeline_deterministic_and_background(ctx, case):
    v, _ = case
    icfg = InverseConfig(lam=3.0, max_iters=5)
    score = analytic_gaussian_score(np.zeros(256), 0.05, SCHED)
    cfg = CsdStarConfig(1000, 30, corrector_steps=0)
    a = csd_star_pipeline(v, icfg, score, cfg, ctx, SCHED, seed=4)
    b = csd_star_pipeline(v, icfg, score, cfg, ctx, SCHED, seed=4)
    assert np.array_equal(a, b) and a.shape == (16, 16)
    pts = pixel_centers(16)
    outside = np.hypot(pts[..., 0], pts[..., 1]) > 1
    assert np.all(a[outside] == 1.0)
    gn = gn_image(v, icfg, ctx)
    np.testing.assert_array_equal(csd_star_pipeline(v, icfg, score, cfg, ctx, SCHED, seed=4, gn=gn), a)


def test_pipeline_stage_labels(ctx, case):
    v, _ = case
    with pytest.raises(PipelineError) as info:
        csd_star_pipeline(np.zeros(208), InverseConfig(), lambda x, t: x, CsdStarConfig(1000, 5), ctx, SCHED)
    assert info.value.stage == "reconstruct"

    def broken(x, t):
        return np.full_like(x, np.inf)

    with pytest.raises(PipelineError) as info:
        csd_star_pipeline(v, InverseConfig(max_iters=2), broken, CsdStarConfig(1000, 5), ctx, SCHED)
    assert info.value.stage == "sample"
