import numpy as np
import pytest
import torch

from percsim.apps.sr import (Generator, SrConfig, downsample, load_generator, save_generator, sr_infer,
                             sr_perceptual_loss, train_sr, upsample_nearest)
from percsim.apps.style import StyleConfig, gram_matrix, style_transfer
from percsim.data import synthetic_images
from percsim.errors import ConfigError, DimensionError
from percsim.metric import CodecTaps

from conftest import make_toy_codec


@pytest.fixture
def style_taps():
    return CodecTaps(make_toy_codec(), ["conv1", "conv2", "conv3"])


# --- gram matrices ------------------------------------------------------------

def test_gram_of_zero_is_zero():
    assert torch.count_nonzero(gram_matrix(torch.zeros(4, 5, 5))) == 0


def test_gram_of_constant_channels():
    a, b = 0.7, -1.3
    f = torch.stack([torch.full((3, 4), a, dtype=torch.float64), torch.full((3, 4), b, dtype=torch.float64)])
    expected = np.array([[a * a, a * b], [a * b, b * b]]) / 2
    np.testing.assert_allclose(gram_matrix(f).numpy(), expected, rtol=1e-12)


def test_gram_is_symmetric_psd():
    f = torch.randn(6, 7, 5, dtype=torch.float64)
    g = gram_matrix(f)
    np.testing.assert_array_equal(g.numpy(), g.T.numpy())
    assert np.linalg.eigvalsh(g.numpy()).min() >= -1e-9


def test_gram_ignores_spatial_permutation():
    f = torch.randn(3, 6, 6, dtype=torch.float64)
    perm = torch.randperm(36, generator=torch.Generator().manual_seed(0))
    shuffled = f.reshape(3, 36)[:, perm].reshape(3, 6, 6)
    # same multiset of products; summation order can differ in the last bit
    np.testing.assert_allclose(gram_matrix(shuffled).numpy(), gram_matrix(f).numpy(), rtol=1e-14)


# --- style transfer ----------------------------------------------------------

def _images(seed=0, size=32):
    imgs = synthetic_images(2, size, seed)
    return imgs[0], imgs[1]


def test_style_equal_to_content_is_a_fixed_point(style_taps):
    c, _ = _images()
    out, trace = style_transfer(c, c, style_taps, StyleConfig(steps=10))
    assert trace[0]["total"] == 0.0 and all(t["total"] == 0.0 for t in trace)
    assert torch.equal(out, c)


def test_content_only_from_noise_converges(style_taps):
    c, s = _images(1)
    _, trace = style_transfer(c, s, style_taps, StyleConfig(style_weight=0.0, init="noise", steps=200))
    assert trace[-1]["content"] < 0.01 * trace[0]["content"]


def test_trace_never_increases(style_taps):
    c, s = _images(2)
    _, trace = style_transfer(c, s, style_taps, StyleConfig(steps=40))
    totals = [t["total"] for t in trace]
    assert all(b <= a for a, b in zip(totals, totals[1:]))
    assert trace[-1]["style"] < trace[0]["style"]


def test_all_zero_weights_return_init(style_taps):
    c, s = _images(3)
    out, _ = style_transfer(c, s, style_taps, StyleConfig(content_weight=0.0, style_weight=0.0, steps=5))
    assert torch.equal(out, c)


def test_output_pixels_are_clamped(style_taps):
    c, s = _images(4)
    out, _ = style_transfer(c, s, style_taps, StyleConfig(steps=20, lr=0.5))
    assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0


@pytest.mark.parametrize("kw", [dict(steps=0), dict(content_weight=-1.0), dict(init="zeros"),
                                dict(content_tap="conv9")])
def test_style_config_validation(style_taps, kw):
    c, s = _images()
    with pytest.raises(ConfigError):
        style_transfer(c, s, style_taps, StyleConfig(**kw))


# --- super-resolution -------------------------------------------------------

def test_perceptual_loss_basics(toy_codec):
    ext = CodecTaps(toy_codec, ["conv3"])
    hr = torch.rand(1, 3, 32, 32)
    sr = torch.rand(1, 3, 32, 32)
    with torch.no_grad():
        assert float(sr_perceptual_loss(hr, hr, ext, "conv3")) == 0.0
        assert float(sr_perceptual_loss(sr, hr, ext, "conv3")) == float(sr_perceptual_loss(hr, sr, ext, "conv3"))
    with pytest.raises(DimensionError):
        sr_perceptual_loss(sr, hr[..., :16], ext, "conv3")


def test_perceptual_loss_gradient(small_codec):
    ext = CodecTaps(small_codec.double(), ["conv3"])
    g = torch.Generator().manual_seed(0)
    hr = torch.rand(1, 3, 16, 16, generator=g, dtype=torch.float64)
    sr = torch.rand(1, 3, 16, 16, generator=g, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda a: sr_perceptual_loss(a, hr, ext, "conv3"), (sr,),
                                    eps=1e-6, atol=1e-9, rtol=1e-4)


@pytest.mark.parametrize("h,w", [(7, 9), (16, 16), (5, 12)])
def test_generator_upscales_by_four(h, w):
    g = Generator(width=8, blocks=1)
    with torch.no_grad():
        assert g(torch.rand(1, 3, h, w)).shape == (1, 3, 4 * h, 4 * w)


def test_generator_tiles_agree_with_whole_image():
    torch.manual_seed(0)
    g = Generator(width=8, blocks=2).double().eval()
    with torch.no_grad():
        g.tail.weight.normal_(0, 0.05)  # the zero-initialized tail would make this trivial
        lr = torch.rand(1, 3, 64, 64, dtype=torch.float64)
        whole = g(lr)
        top, size, margin = 16, 40, 14
        tile = g(lr[..., top: top + size, top: top + size])
    a = 4 * margin
    b = 4 * (size - margin)
    inner_tile = tile[..., a:b, a:b]
    inner_whole = whole[..., 4 * top + a: 4 * top + b, 4 * top + a: 4 * top + b]
    np.testing.assert_allclose(inner_tile.numpy(), inner_whole.numpy(), atol=1e-5)


def test_downsample_and_nearest_shapes():
    hr = torch.rand(2, 3, 32, 48)
    lr = downsample(hr)
    assert lr.shape == (2, 3, 8, 12)
    assert upsample_nearest(lr).shape == hr.shape


def test_overfit_single_image(toy_codec):
    ext = CodecTaps(toy_codec, ["conv3"])
    hr = synthetic_images(1, 64, seed=3)
    res = train_sr(hr, ext, SrConfig(perceptual_tap="conv3", adversarial_weight=0.0, epochs=200, batch=1,
                                     lr=1e-3, gen_width=16, gen_blocks=2))
    assert len(res.log) == 200
    assert res.log[-1]["perceptual"] <= 0.5 * res.log[0]["perceptual"]


def test_adversarial_training_runs_and_logs_validation(toy_codec, tmp_path):
    ext = CodecTaps(toy_codec, ["conv3"])
    hr = synthetic_images(5, 32, seed=4)
    seen = []
    res = train_sr(hr, ext, SrConfig(perceptual_tap="conv3", epochs=2, batch=2, crop=32, gen_width=8,
                                     gen_blocks=1, disc_width=8), on_epoch=seen.append)
    assert seen == res.log and len(res.log) == 2
    for key in ("psnr", "ssim", "adversarial"):
        assert key in res.log[-1]
    assert res.baseline["nn_psnr"] > 0
    path = tmp_path / "gen.nckp"
    save_generator(path, res.generator, SrConfig(gen_width=8, gen_blocks=1))
    g2 = load_generator(path)
    x = torch.rand(3, 10, 12)
    with torch.no_grad():
        np.testing.assert_array_equal(sr_infer(g2, x).numpy(), sr_infer(res.generator.eval(), x).numpy())
    assert sr_infer(g2, x).shape == (3, 40, 48)


def test_sr_config_validation(toy_codec):
    ext = CodecTaps(toy_codec, ["conv3"])
    with pytest.raises(ConfigError):
        train_sr(synthetic_images(2, 32), ext, SrConfig(crop=64))
    with pytest.raises(ConfigError):
        train_sr(synthetic_images(2, 64), ext, SrConfig(scale=2))
    with pytest.raises(ConfigError):
        train_sr(synthetic_images(2, 64), ext, SrConfig(adversarial_weight=-1.0))
    with pytest.raises(ConfigError):
        train_sr(torch.zeros(0, 3, 64, 64), ext, SrConfig())
