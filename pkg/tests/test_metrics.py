import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dgmeit.metrics import (MetricReport, ae, dr, evaluate, gaussian_window, mse, psnr, re, ssim,
                            summarize)


# brute-force oracles written with plain loops


def bf_mse(r, g):
    total = 0.0
    for i in range(r.shape[0]):
        for j in range(r.shape[1]):
            total += (r[i, j] - g[i, j]) ** 2
    return total / r.size


def bf_range(x):
    lo = hi = x[0, 0]
    for v in x.ravel():
        lo, hi = min(lo, v), max(hi, v)
    return hi - lo


def bf_psnr(r, g):
    return 10 * math.log10(bf_range(g) ** 2 / bf_mse(r, g))


def bf_re(r, g):
    num = sum(abs(a - b) for a, b in zip(r.ravel(), g.ravel()))
    return num / sum(abs(b) for b in g.ravel())


def bf_ae(r, g):
    return sum(abs(a - b) for a, b in zip(r.ravel(), g.ravel())) / r.size


def bf_dr(r, g):
    return bf_range(r) / bf_range(g)


def bf_window():
    w = [[math.exp(-((i - 5) ** 2 + (j - 5) ** 2) / (2 * 1.5**2)) for j in range(11)] for i in range(11)]
    s = sum(map(sum, w))
    return [[v / s for v in row] for row in w]


def bf_ssim(r, g, L=None):
    L = bf_range(g) if L is None else L
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    w = bf_window()
    vals = []
    for i in range(r.shape[0] - 10):
        for j in range(r.shape[1] - 10):
            pr = [[r[i + a, j + b] for b in range(11)] for a in range(11)]
            pg = [[g[i + a, j + b] for b in range(11)] for a in range(11)]
            mr = sum(w[a][b] * pr[a][b] for a in range(11) for b in range(11))
            mg = sum(w[a][b] * pg[a][b] for a in range(11) for b in range(11))
            vr = sum(w[a][b] * (pr[a][b] - mr) ** 2 for a in range(11) for b in range(11))
            vg = sum(w[a][b] * (pg[a][b] - mg) ** 2 for a in range(11) for b in range(11))
            cv = sum(w[a][b] * (pr[a][b] - mr) * (pg[a][b] - mg) for a in range(11) for b in range(11))
            vals.append((2 * mr * mg + c1) * (2 * cv + c2) / ((mr**2 + mg**2 + c1) * (vr + vg + c2)))
    return sum(vals) / len(vals)


def random_pair(seed, side=16):
    rng = np.random.default_rng(seed)
    g = rng.uniform(0.0, 1.5, (side, side))
    r = g + rng.normal(0, 0.2, (side, side))
    return r, g


def test_trivial_identities():
    _, g = random_pair(0)
    assert mse(g, g) == 0 and re(g, g) == 0 and ae(g, g) == 0
    assert abs(ssim(g, g) - 1) <= 1e-9
    assert abs(dr(g, g) - 1) <= 1e-9
    assert psnr(g, g) == math.inf
    assert mse(np.ones((4, 4)), np.zeros((4, 4))) == 1.0


def test_psnr_examples():
    g = np.zeros((8, 8))
    g[0, 0] = 1.0
    r = g + math.sqrt(1e-3)
    assert psnr(r, g) == pytest.approx(30.0, abs=1e-9)
    assert psnr(g + 1.0, g) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        psnr(g, np.ones((8, 8)))


def test_re_ae_dr_examples():
    _, g = random_pair(1)
    assert re(2 * g, g) == pytest.approx(1.0, abs=1e-12)
    assert ae(g + 0.3, g) == pytest.approx(0.3, abs=1e-12)
    assert ae(g - 0.3, g) == pytest.approx(0.3, abs=1e-12)
    assert dr(g / 2 + 7.0, g) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(ValueError):
        re(g, np.zeros_like(g))
    with pytest.raises(ValueError):
        dr(g, np.ones_like(g))


def test_ssim_structure_inversion():
    # the pattern must be zero-mean in every window, otherwise the negative
    # luminance and structure terms multiply to a positive index
    i, j = np.indices((16, 16))
    g = (-1.0) ** (i + j)
    assert ssim(-g, g) < 0


def test_ssim_rejects_small_and_mismatch():
    with pytest.raises(ValueError):
        ssim(np.ones((10, 10)), np.arange(100.0).reshape(10, 10))
    with pytest.raises(ValueError):
        mse(np.ones((4, 4)), np.ones((4, 5)))


def test_gaussian_window_matches_loop():
    np.testing.assert_allclose(gaussian_window(), np.array(bf_window()), rtol=0, atol=1e-16)


@pytest.mark.parametrize("seed", range(50))
def test_metrics_match_brute_force(seed):
    r, g = random_pair(seed)
    rep = evaluate(r, g)
    assert abs(rep.mse - bf_mse(r, g)) <= 1e-12
    assert abs(rep.psnr - bf_psnr(r, g)) <= 1e-12
    assert abs(rep.re - bf_re(r, g)) <= 1e-12
    assert abs(rep.ae - bf_ae(r, g)) <= 1e-12
    assert abs(rep.dr - bf_dr(r, g)) <= 1e-12
    assert abs(rep.ssim - bf_ssim(r, g)) <= 1e-12


def test_ssim_larger_image_windowed_oracle():
    r, g = random_pair(99, side=20)
    assert abs(ssim(r, g) - bf_ssim(r, g)) <= 1e-12


images = hnp.arrays(float, (12, 12), elements=st.floats(-2.0, 2.0))


@given(images, images)
def test_ssim_pair_range_symmetric(a, b):
    if np.ptp(np.concatenate([a, b])) == 0:
        return
    assert ssim(a, b, "pair") == pytest.approx(ssim(b, a, "pair"), abs=1e-12)
    assert -1.0 <= ssim(a, b, "pair") <= 1.0


@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1.0), st.floats(1.01, 5.0))
def test_psnr_decreases_with_mse(seed, s, k):
    rng = np.random.default_rng(seed)
    g = rng.uniform(size=(6, 6))
    n = rng.normal(size=(6, 6))
    assert psnr(g + k * s * n, g) < psnr(g + s * n, g)


@given(st.integers(0, 2**32 - 1), st.floats(-5, 5), st.floats(0.1, 10))
def test_dr_shift_and_joint_scale_invariance(seed, shift, scale):
    rng = np.random.default_rng(seed)
    r, g = rng.uniform(size=(2, 6, 6))
    base = dr(r, g)
    assert dr(r + shift, g) == pytest.approx(base, rel=1e-9)
    assert dr(scale * r, scale * g) == pytest.approx(base, rel=1e-9)


@given(st.integers(0, 2**32 - 1))
def test_report_invariants(seed):
    r, g = random_pair(seed, side=12)
    rep = evaluate(r, g)
    assert rep.mse >= 0 and rep.re >= 0 and rep.ae >= 0 and rep.dr > 0
    assert -1 <= rep.ssim <= 1


def test_summarize():
    reps = [MetricReport(1, 2, 0.5, 0.1, 0.2, 1.0), MetricReport(3, 4, 0.7, 0.3, 0.4, 1.2)]
    mean, std = summarize(reps)
    np.testing.assert_allclose(mean, [2, 3, 0.6, 0.2, 0.3, 1.1])
    np.testing.assert_allclose(std, [1, 1, 0.1, 0.1, 0.1, 0.1])
    assert MetricReport.names() == ("mse", "psnr", "ssim", "re", "ae", "dr")
    with pytest.raises(ValueError):
        summarize([])
