import mpmath
import numpy as np
import pytest
import torch

from percsim.codec.entropy_models import (FactorizedPrior, LatentCode, estimate_rate_bpp,
                                          gaussian_likelihood, likelihood, quantize)
from percsim.codec.models import Codec
from percsim.codec.spec import EncoderSpec, cpips_spec, hyperprior_spec, make_spec, toy_spec
from percsim.errors import ConfigError, DimensionError, DomainError, InputTooSmallError, ParameterError

from conftest import make_toy_codec


def _zero_weights(module):
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (torch.nn.Conv2d, torch.nn.ConvTranspose2d)):
                m.weight.zero_()
                m.bias.zero_()


# --- specs ----------------------------------------------------------------

@pytest.mark.parametrize("spec", [cpips_spec(), hyperprior_spec()])
def test_full_scale_presets_downsample_by_16(spec):
    assert spec.downsampling == 16
    for t in spec.tap_names:
        assert spec.resolve_tap(t) in spec.layer_names


def test_preset_channel_counts():
    hp = hyperprior_spec()
    assert (hp.hyper_channels, hp.latent_channels) == (192, 320)
    cp = cpips_spec()
    assert [s.out_channels for s in cp.stages[1::2]][:5] == [64, 128, 256, 512, 512]
    assert cp.tap_names == ["conv1_2", "conv2_2", "conv3_2", "conv4_2", "conv5_2", "bottleneck"]
    assert toy_spec().downsampling == 8


def test_spec_round_trips_through_dict():
    s = cpips_spec(width=0.125)
    assert EncoderSpec.from_dict(s.to_dict()) == s


def test_spec_rejects_bad_configs():
    d = toy_spec().to_dict()
    d["tap_names"] = ["conv9"]
    with pytest.raises(ConfigError):
        EncoderSpec.from_dict(d)
    with pytest.raises(ConfigError):
        make_spec("resnet")
    with pytest.raises(ConfigError):
        toy_spec(latent_channels=0)


# --- analysis / synthesis --------------------------------------------------

def test_hyperprior_64px_gives_4x4_latent():
    torch.manual_seed(0)
    codec = Codec(hyperprior_spec(width=0.05)).eval()
    with torch.no_grad():
        y, feats = codec.analyze(torch.rand(1, 3, 64, 64))
    assert y.shape[-2:] == (4, 4)
    assert y.shape[1] == codec.spec.latent_channels
    sizes = [f.shape[-1] for f in feats.values()]
    assert sizes == sorted(sizes, reverse=True)
    assert all(bool(torch.isfinite(f).all()) for f in feats.values())


def test_zero_image_through_zero_weights_is_zero():
    codec = Codec(cpips_spec(width=1 / 16)).eval()
    _zero_weights(codec.g_a)
    with torch.no_grad():
        y, feats = codec.analyze(torch.zeros(1, 3, 32, 32), codec.spec.tap_names)
    assert torch.count_nonzero(y) == 0
    assert all(torch.count_nonzero(f) == 0 for f in feats.values())


def test_features_are_deterministic():
    x = torch.rand(1, 3, 40, 48, generator=torch.Generator().manual_seed(5))
    taps = ["conv1", "conv2", "bottleneck"]
    runs = []
    for _ in range(2):
        codec = make_toy_codec(seed=11)
        with torch.no_grad():
            runs.append(codec.features(x, taps))
    assert list(runs[0]) == taps
    for t in taps:
        assert runs[0][t].numpy().tobytes() == runs[1][t].numpy().tobytes()


def test_zero_latent_through_zero_weights_gives_constant_image(toy_codec):
    _zero_weights(toy_codec.g_s)
    y_hat = torch.zeros(1, toy_codec.spec.latent_channels, 4, 4)
    with torch.no_grad():
        x = toy_codec.synthesize(y_hat)
    assert x.shape == (1, 3, 32, 32)
    assert float(x.max()) == float(x.min())


def test_pad_then_crop_preserves_shape(toy_codec):
    with torch.no_grad():
        out = toy_codec(torch.rand(1, 3, 96, 80), mode="round")
    assert out["x_hat"].shape == (1, 3, 96, 80)
    assert out["dims"] == (96, 80)
    assert float(out["x_hat"].min()) >= 0.0 and float(out["x_hat"].max()) <= 1.0


def test_input_smaller_than_one_block_is_rejected(toy_codec):
    with pytest.raises(InputTooSmallError):
        toy_codec.analyze(torch.rand(1, 3, 4, 40))


def test_wrong_latent_shape_is_rejected(toy_codec):
    with pytest.raises(DimensionError):
        toy_codec.synthesize(torch.zeros(1, 7, 4, 4))
    with pytest.raises(DimensionError):
        toy_codec.analyze(torch.rand(1, 1, 32, 32))


# --- hyperprior --------------------------------------------------------------

def test_scales_respect_lower_bound(toy_codec):
    gen = torch.Generator().manual_seed(0)
    for scale in (0.01, 1.0, 100.0):
        y = scale * torch.randn(2, toy_codec.spec.latent_channels, 4, 4, generator=gen)
        with torch.no_grad():
            _, _, sigma = toy_codec.hyper_forward(y)
        assert float(sigma.min()) >= toy_codec.sigma_min
        assert sigma.shape == y.shape


def test_hyper_forward_of_zero_is_deterministic(toy_codec):
    y = torch.zeros(1, toy_codec.spec.latent_channels, 4, 4)
    with torch.no_grad():
        a = toy_codec.hyper_forward(y)[0]
        b = toy_codec.hyper_forward(y)[0]
    assert a.numpy().tobytes() == b.numpy().tobytes()
    assert a.shape[-2:] == (1, 1)


def test_round_mode_code_is_integer_valued(toy_codec):
    with torch.no_grad():
        code = toy_codec(torch.rand(1, 3, 32, 32), mode="round")["code"]
    for t in (code.y, code.z):
        assert torch.equal(t, torch.round(t))
    for lik in (code.y_likelihoods, code.z_likelihoods):
        assert float(lik.min()) > 0 and float(lik.max()) <= 1


# --- quantization ----------------------------------------------------------

def test_round_ties_to_even():
    out = quantize(torch.tensor([2.5, 3.5, -2.5, 0.5, 1.4]), "round")
    np.testing.assert_array_equal(out.numpy(), [2.0, 4.0, -2.0, 0.0, 1.0])


def test_noise_stays_within_half():
    v = torch.randn(10000, dtype=torch.float64)
    out = quantize(v, "noise", torch.Generator().manual_seed(0))
    assert float((out - v).abs().max()) < 0.5


def test_noise_is_reproducible():
    v = torch.randn(100)
    a = quantize(v, "noise", torch.Generator().manual_seed(3))
    b = quantize(v, "noise", torch.Generator().manual_seed(3))
    assert torch.equal(a, b)


def test_noise_needs_generator():
    with pytest.raises(ParameterError):
        quantize(torch.zeros(2), "noise")
    with pytest.raises(ParameterError):
        quantize(torch.zeros(2), "floor")


# --- likelihoods -------------------------------------------------------------

def test_gaussian_likelihood_at_zero_matches_high_precision_oracle():
    mpmath.mp.dps = 30
    expected = float(mpmath.ncdf(0.5) - mpmath.ncdf(-0.5))
    got = float(gaussian_likelihood(torch.tensor([0.0], dtype=torch.float64),
                                    torch.tensor([1.0], dtype=torch.float64)))
    assert got == pytest.approx(expected, abs=1e-12)
    assert got == pytest.approx(0.38292, abs=1e-5)


def test_gaussian_likelihood_matches_oracle_on_grid():
    mpmath.mp.dps = 30
    v = torch.arange(-6, 7, dtype=torch.float64)
    for s in (0.11, 0.7, 3.0, 40.0):
        got = gaussian_likelihood(v, torch.full_like(v, s)).numpy()
        ref = [max(1e-9, float(mpmath.ncdf((x + 0.5) / s) - mpmath.ncdf((x - 0.5) / s))) for x in v.tolist()]
        np.testing.assert_allclose(got, ref, rtol=1e-9, atol=1e-15)


def test_gaussian_likelihood_is_symmetric():
    v = torch.linspace(-20, 20, 81, dtype=torch.float64)
    s = torch.full_like(v, 2.3)
    np.testing.assert_array_equal(gaussian_likelihood(v, s).numpy(), gaussian_likelihood(-v, s).numpy())


def test_gaussian_likelihood_rejects_small_sigma():
    with pytest.raises(ParameterError):
        gaussian_likelihood(torch.zeros(3), torch.full((3,), 0.05))


def test_factorized_cdf_is_monotone():
    torch.manual_seed(0)
    prior = FactorizedPrior(4)
    with torch.no_grad():
        for m in prior.matrices:
            m.add_(torch.randn_like(m))
        for f in prior.factors:
            f.add_(torch.randn_like(f))
    t = torch.linspace(-30, 30, 2001).view(1, 1, -1).expand(1, 4, -1).reshape(1, 4, 1, -1)
    c = prior.cdf(t)[0, :, 0].detach()
    assert bool((c[:, 1:] >= c[:, :-1]).all())
    lik = likelihood(torch.round(t), prior).detach()
    assert float(lik.min()) >= 1e-9 and float(lik.max()) <= 1.0


def test_likelihood_dispatch():
    v = torch.zeros(1, 2, 1, 1)
    np.testing.assert_allclose(likelihood(v, torch.ones_like(v)).numpy(),
                               gaussian_likelihood(v, torch.ones_like(v)).numpy())


# --- rate ---------------------------------------------------------------

def _code(y_lik, z_lik):
    return LatentCode(torch.zeros_like(y_lik), torch.zeros_like(z_lik), y_lik, z_lik)


def test_rate_half_likelihoods_is_one_bpp():
    code = _code(torch.full((100,), 0.5), torch.ones(0))
    assert float(estimate_rate_bpp(code, (10, 10))) == pytest.approx(1.0)


def test_rate_unit_likelihoods_is_zero():
    code = _code(torch.ones(1, 8, 2, 2), torch.ones(1, 4, 1, 1))
    assert float(estimate_rate_bpp(code, (16, 16))) == 0.0


def test_rate_rejects_zero_area():
    with pytest.raises(DomainError):
        estimate_rate_bpp(_code(torch.ones(4), torch.ones(1)), (0, 10))


def test_rate_is_additive():
    g = torch.Generator().manual_seed(0)
    a = _code(torch.rand(1, 6, 2, 2, generator=g), torch.rand(1, 3, 1, 1, generator=g))
    b = _code(torch.rand(1, 6, 2, 2, generator=g), torch.rand(1, 3, 1, 1, generator=g))
    both = LatentCode(torch.cat([a.y, b.y]), torch.cat([a.z, b.z]),
                      torch.cat([a.y_likelihoods, b.y_likelihoods]),
                      torch.cat([a.z_likelihoods, b.z_likelihoods]))
    bpp = float(estimate_rate_bpp(both, (16, 16)))
    expected = (float(a.bits) + float(b.bits)) / (2 * 16 * 16)
    assert bpp == pytest.approx(expected, rel=1e-6)
    assert bpp >= 0


# --- gradients ---------------------------------------------------------------

def test_likelihood_gradients_match_finite_differences():
    torch.manual_seed(0)
    v = (3 * torch.randn(8, 4, 4, dtype=torch.float64)).requires_grad_()
    s = (0.2 + 2 * torch.rand(8, 4, 4, dtype=torch.float64)).requires_grad_()
    assert torch.autograd.gradcheck(lambda a, b: gaussian_likelihood(a, b), (v, s),
                                    eps=1e-6, atol=1e-9, rtol=1e-4)


def test_factorized_likelihood_gradient():
    torch.manual_seed(0)
    prior = FactorizedPrior(8).double()
    v = (2 * torch.randn(1, 8, 4, 4, dtype=torch.float64)).requires_grad_()
    assert torch.autograd.gradcheck(prior.likelihood, (v,), eps=1e-6, atol=1e-9, rtol=1e-4)


def test_noise_mode_rate_gradient(small_codec):
    codec = small_codec.double()
    y = torch.randn(1, codec.spec.latent_channels, 4, 4, dtype=torch.float64, requires_grad=True)

    def bpp(y):
        gen = torch.Generator().manual_seed(0)
        _, z_hat, sigma = codec.hyper_forward(y, "noise", gen)
        y_hat = quantize(y, "noise", gen)
        code = LatentCode(y_hat, z_hat, gaussian_likelihood(y_hat, sigma),
                          codec.entropy_bottleneck.likelihood(z_hat), "noise")
        return estimate_rate_bpp(code, (32, 32))

    assert torch.autograd.gradcheck(bpp, (y,), eps=1e-6, atol=1e-9, rtol=1e-4)
