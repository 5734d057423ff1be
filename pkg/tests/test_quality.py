import math

import numpy as np
import pytest
import torch
from scipy.interpolate import PchipInterpolator
from scipy.stats import ortho_group
from skimage.metrics import structural_similarity

from percsim.errors import (ConfigError, DimensionError, DomainError, FitError, PartialResultError,
                            PreconditionError)
from percsim.quality import (RawCodec, RDCurve, TwoAFCTriplet, bd_delta, collect_rd_curve, psnr, ssim,
                             two_afc_credit, two_afc_from_distances, two_afc_score,
                             unitary_preservation_check)


def _texture(seed=0, size=48):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = 0.5 + 0.3 * np.sin(12 * xx + 5 * yy) + 0.1 * rng.standard_normal((size, size))
    return np.clip(img, 0, 1)


# --- psnr -------------------------------------------------------------------

def test_psnr_of_identical_images_is_capped():
    x = np.random.default_rng(0).random((3, 8, 8))
    assert psnr(x, x) == 99.0


def test_psnr_constant_half_error():
    x = np.zeros((3, 8, 8))
    assert psnr(x, x + 0.5) == pytest.approx(20 * math.log10(2), abs=1e-12)
    assert psnr(x, x + 0.5) == pytest.approx(6.0206, abs=1e-4)


def test_psnr_matches_double_precision_oracle():
    rng = np.random.default_rng(1)
    x, y = rng.random((3, 20, 20)), rng.random((3, 20, 20))
    mse = sum((a - b) ** 2 for a, b in zip(x.ravel().tolist(), y.ravel().tolist())) / x.size
    assert psnr(torch.from_numpy(x), torch.from_numpy(y)) == pytest.approx(10 * math.log10(1 / mse), abs=1e-9)


def test_psnr_decreases_with_noise_variance():
    rng = np.random.default_rng(2)
    x = rng.random((3, 32, 32))
    n = rng.standard_normal(x.shape)
    values = [psnr(x, x + s * n) for s in (0.01, 0.02, 0.05, 0.1, 0.2)]
    assert all(b < a for a, b in zip(values, values[1:]))


# --- ssim -------------------------------------------------------------------

def test_ssim_of_identical_images_is_one():
    x = _texture()
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)


def test_ssim_of_inverted_texture_is_low():
    x = _texture()
    assert ssim(x, 1 - x) < 0.5


def test_ssim_matches_reference_implementation():
    rng = np.random.default_rng(3)
    x = _texture(3)
    y = np.clip(x + 0.1 * rng.standard_normal(x.shape), 0, 1)
    ref = structural_similarity(x, y, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
                                data_range=1.0)
    assert ssim(x, y) == pytest.approx(ref, abs=1e-9)


def test_ssim_uses_luminance_for_rgb():
    rgb = np.random.default_rng(4).random((3, 24, 24))
    other = np.random.default_rng(5).random((3, 24, 24))
    luma = lambda a: 0.299 * a[0] + 0.587 * a[1] + 0.114 * a[2]  # noqa: E731
    assert ssim(rgb, other) == pytest.approx(ssim(luma(rgb), luma(other)), abs=1e-12)


def test_ssim_of_constants_is_the_luminance_term():
    m1, m2 = 0.3, 0.55
    c1 = 0.01 ** 2
    expected = (2 * m1 * m2 + c1) / (m1 ** 2 + m2 ** 2 + c1)
    assert ssim(np.full((20, 20), m1), np.full((20, 20), m2)) == pytest.approx(expected, abs=1e-9)


def test_ssim_rejects_images_smaller_than_window():
    with pytest.raises(DimensionError):
        ssim(np.zeros((10, 30)), np.zeros((10, 30)))


# --- 2AFC -------------------------------------------------------------------

def _credit_oracle(d0, d1, h):
    if d1 < d0:
        return h
    if d0 < d1:
        return 1 - h
    return 0.5


def test_constant_metric_scores_fifty():
    triplets = [TwoAFCTriplet(i, i, i, h) for i, h in enumerate(np.linspace(0, 1, 11))]
    assert two_afc_score(triplets, lambda a, b: 1.0) == 50.0


def test_always_picking_p1_with_unanimous_humans_scores_hundred():
    triplets = [TwoAFCTriplet("r", "a", "b", 1.0) for _ in range(5)]
    assert two_afc_score(triplets, lambda r, p: 0.0 if p == "b" else 1.0) == 100.0


def test_score_matches_brute_force_oracle():
    rng = np.random.default_rng(0)
    d0, d1, h = rng.random(20), rng.random(20), rng.random(20)
    d1[:3] = d0[:3]
    expected = 100 * np.mean([_credit_oracle(a, b, c) for a, b, c in zip(d0, d1, h)])
    assert two_afc_from_distances(d0, d1, h) == pytest.approx(expected, abs=1e-12)
    np.testing.assert_array_equal(two_afc_credit(d0[:3], d1[:3], h[:3]), [0.5] * 3)


def test_score_is_invariant_to_increasing_transforms():
    rng = np.random.default_rng(1)
    d0, d1, h = rng.random(50), rng.random(50), rng.random(50)
    base = two_afc_from_distances(d0, d1, h)
    for f in (np.exp, np.sqrt, lambda v: 3 * v + 1):
        assert two_afc_from_distances(f(d0), f(d1), h) == base
    assert 0 <= base <= 100


def test_triplet_validation():
    with pytest.raises(ConfigError):
        TwoAFCTriplet("r", "a", "b", 1.5)
    with pytest.raises(ConfigError):
        two_afc_score([], lambda a, b: 0.0)


# --- unitary baseline --------------------------------------------------------

def test_identity_preserves_distances_exactly():
    pairs = np.random.default_rng(0).standard_normal((10, 2, 6))
    assert unitary_preservation_check(np.eye(6), pairs) == 0.0


def test_scaled_identity_is_rejected():
    with pytest.raises(PreconditionError, match="deviation|U\\^T U"):
        unitary_preservation_check(2 * np.eye(4), np.ones((1, 2, 4)))


def test_random_orthonormal_transform_preserves_distances():
    rng = np.random.default_rng(0)
    q, _ = np.linalg.qr(rng.standard_normal((32, 32)))
    assert unitary_preservation_check(q, rng.standard_normal((100, 2, 32))) <= 1e-6
    u = ortho_group.rvs(16, random_state=1)
    assert unitary_preservation_check(u, rng.standard_normal((100, 2, 16))) <= 1e-6


def test_non_square_or_degenerate_pairs_are_rejected():
    with pytest.raises(DimensionError):
        unitary_preservation_check(np.ones((2, 3)), np.ones((1, 2, 3)))
    with pytest.raises(DomainError):
        unitary_preservation_check(np.eye(3), np.ones((1, 2, 3)))


# --- RD curves ---------------------------------------------------------------

@pytest.mark.parametrize("depth", [8, 16, 24, 32])
def test_raw_codec_rate_is_its_bit_depth(depth):
    img = np.random.default_rng(depth).random((1, 12, 10))
    codec = RawCodec(depth)
    data = codec.compress(img)
    assert len(data) * 8 / (12 * 10) == depth
    np.testing.assert_allclose(codec.decompress(data), img, atol=1.0 / ((1 << depth) - 1))


def test_collect_curve_from_raw_codecs():
    imgs = [("a", np.random.default_rng(0).random((1, 16, 16)))]
    curve = collect_rd_curve({d: RawCodec(d) for d in (8, 16, 24, 32)}, imgs, label="raw")
    assert [p[0] for p in curve.points] == [8.0, 16.0, 24.0, 32.0]
    # one image: the average is that image's point
    raw8 = RawCodec(8)
    assert curve.points[0][1] == psnr(imgs[0][1], raw8.decompress(raw8.compress(imgs[0][1])))


def test_collect_curve_needs_four_points_and_reports_failures():
    imgs = [("a", np.zeros((1, 8, 8)))]
    with pytest.raises(ConfigError):
        collect_rd_curve({8: RawCodec(8)}, imgs)

    class Broken(RawCodec):
        def compress(self, x):
            raise RuntimeError("boom")

    with pytest.raises(PartialResultError) as info:
        collect_rd_curve({8: RawCodec(8), 16: RawCodec(16), 24: RawCodec(24), 32: Broken(32)}, imgs)
    assert info.value.item == "a" and len(info.value.partial) == 3


def test_curve_points_must_be_strictly_increasing():
    with pytest.raises(ConfigError):
        RDCurve("x", [(1.0, 30), (1.0, 31)])
    with pytest.raises(ConfigError):
        RDCurve("x", [(0.0, 30)])
    assert RDCurve("x", [(2.0, 35), (1.0, 30)]).points == [(1.0, 30.0), (2.0, 35.0)]


# --- Bjontegaard ------------------------------------------------------------

ANCHOR = RDCurve("anchor", [(0.25, 28.0), (0.5, 31.0), (1.0, 34.5), (2.0, 37.0)])


def _shift(curve, rate=1.0, db=0.0):
    return RDCurve("test", [(r * rate, d + db) for r, d in curve.points])


def test_identical_curves_have_zero_deltas():
    assert bd_delta(ANCHOR, ANCHOR, "rate") == pytest.approx(0.0, abs=1e-9)
    assert bd_delta(ANCHOR, ANCHOR, "psnr") == pytest.approx(0.0, abs=1e-9)


def test_doubled_rate_is_plus_hundred_percent():
    assert bd_delta(ANCHOR, _shift(ANCHOR, rate=2.0), "rate") == pytest.approx(100.0, abs=1e-6)


def test_one_db_shift_is_one_db():
    assert bd_delta(ANCHOR, _shift(ANCHOR, db=1.0), "psnr") == pytest.approx(1.0, abs=1e-6)


def test_antisymmetry():
    other = RDCurve("b", [(0.3, 28.5), (0.55, 31.2), (1.2, 35.0), (2.4, 37.1)])
    assert bd_delta(ANCHOR, other, "psnr") == pytest.approx(-bd_delta(other, ANCHOR, "psnr"), abs=1e-9)
    r_ab, r_ba = bd_delta(ANCHOR, other, "rate"), bd_delta(other, ANCHOR, "rate")
    assert (1 + r_ab / 100) * (1 + r_ba / 100) == pytest.approx(1.0, abs=1e-6)


def _trapezoid_oracle(xa, ya, xt, yt, lo, hi):
    def fitted(xs, ys):
        c = np.polyfit(xs, ys, 3)
        if np.sqrt(np.mean((np.polyval(c, xs) - ys) ** 2)) <= 1e-3:
            return lambda t: np.polyval(c, t)
        o = np.argsort(xs)
        return PchipInterpolator(xs[o], ys[o])

    grid = np.linspace(lo, hi, 200001)
    fa, ft = fitted(xa, ya), fitted(xt, yt)
    return np.trapezoid(ft(grid) - fa(grid), grid) / (hi - lo)


@pytest.mark.parametrize("k4", [1e-5, 2.0])  # near-cubic (exact polynomial path) and strongly quartic (fallback)
def test_quartic_curves_match_fine_grid_integration(k4):
    lr = np.log10(np.array([0.1, 0.2, 0.35, 0.6, 1.0, 1.6]))
    q = lambda t, s: 35 + 8 * t - 2 * t ** 2 + 0.5 * t ** 3 + k4 * t ** 4 + s  # noqa: E731
    a = RDCurve("a", list(zip(10 ** lr, q(lr, 0.0))))
    b = RDCurve("b", list(zip(10 ** (lr + 0.05), q(lr, 0.7))))
    la, lb = np.log10(a.bpp), np.log10(b.bpp)
    lo, hi = max(la.min(), lb.min()), min(la.max(), lb.max())
    assert bd_delta(a, b, "psnr") == pytest.approx(_trapezoid_oracle(la, a.psnr, lb, b.psnr, lo, hi), abs=1e-6)
    plo, phi = max(a.psnr.min(), b.psnr.min()), min(a.psnr.max(), b.psnr.max())
    gap = _trapezoid_oracle(a.psnr, la, b.psnr, lb, plo, phi)
    assert bd_delta(a, b, "rate") == pytest.approx((10 ** gap - 1) * 100, abs=1e-6)


def test_bd_errors():
    three = RDCurve("3", ANCHOR.points[:3])
    with pytest.raises(FitError):
        bd_delta(ANCHOR, three)
    far = _shift(ANCHOR, rate=100.0, db=50.0)
    with pytest.raises(DomainError):
        bd_delta(ANCHOR, far, "psnr")
    with pytest.raises(DomainError):
        bd_delta(ANCHOR, far, "rate")
    with pytest.raises(ConfigError):
        bd_delta(ANCHOR, ANCHOR, "ssim")
