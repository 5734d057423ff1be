"""Analysis/synthesis transforms, hyperprior networks and the codec module."""

from collections import OrderedDict

import torch
from torch import nn
from torch.nn import functional as F

from ..errors import DimensionError, InputTooSmallError
from ..gdn import GDN
from .entropy_models import SIGMA_MIN, FactorizedPrior, LatentCode, gaussian_likelihood, quantize
from .spec import EncoderSpec


def _activation(kind, channels, inverse=False):
    if kind == "gdn":
        return GDN(channels, inverse=inverse)
    if kind == "prelu":
        return nn.PReLU(channels, init=0.25)
    return nn.Identity()


def _deconv(cin, cout, kernel, stride):
    return nn.ConvTranspose2d(cin, cout, kernel, stride, padding=kernel // 2,
                              output_padding=stride - 1)


def reflect_pad(x, ph, pw):
    """Reflect-pad bottom/right; repeats reflection when the pad exceeds the size."""
    while ph > 0 or pw > 0:
        h, w = x.shape[-2:]
        sh = min(ph, h - 1) if h > 1 else 0
        sw = min(pw, w - 1) if w > 1 else 0
        if sh == 0 and sw == 0:
            return F.pad(x, (0, pw, 0, ph), mode="replicate")
        x = F.pad(x, (0, sw, 0, sh), mode="reflect")
        ph -= sh
        pw -= sw
    return x


class AnalysisTransform(nn.Module):
    def __init__(self, spec):
        super().__init__()
        self.spec = spec
        cin = spec.in_channels
        self.convs = nn.ModuleDict()
        self.acts = nn.ModuleDict()
        for s in spec.stages:
            self.convs[s.name] = nn.Conv2d(cin, s.out_channels, s.kernel, s.stride, padding=s.kernel // 2)
            self.acts[s.name] = _activation(s.activation, s.out_channels)
            cin = s.out_channels

    def forward(self, x, taps=None):
        feats = OrderedDict()
        wanted = set(taps) if taps is not None else None
        for name in self.convs:
            x = self.acts[name](self.convs[name](x))
            if wanted is None or name in wanted:
                feats[name] = x
        return x, feats


class SynthesisTransform(nn.Module):
    """Mirror of the analysis transform: transposed convs with IGDN/PReLU."""

    def __init__(self, spec):
        super().__init__()
        self.layers = nn.ModuleList()
        stages = spec.stages
        for i in range(len(stages) - 1, -1, -1):
            s = stages[i]
            cout = stages[i - 1].out_channels if i > 0 else spec.in_channels
            self.layers.append(_deconv(s.out_channels, cout, s.kernel, s.stride))
            if i > 0:
                self.layers.append(_activation(stages[i - 1].activation, cout, inverse=True))

    def forward(self, y):
        for layer in self.layers:
            y = layer(y)
        return y


class HyperAnalysis(nn.Sequential):
    def __init__(self, m, n):
        super().__init__(
            nn.Conv2d(m, n, 3, 1, 1), nn.ReLU(),
            nn.Conv2d(n, n, 5, 2, 2), nn.ReLU(),
            nn.Conv2d(n, n, 5, 2, 2),
        )


class HyperSynthesis(nn.Sequential):
    def __init__(self, m, n):
        super().__init__(
            _deconv(n, n, 5, 2), nn.ReLU(),
            _deconv(n, n, 5, 2), nn.ReLU(),
            nn.Conv2d(n, m, 3, 1, 1),
        )


class Codec(nn.Module):
    """Scale-hyperprior codec built from an :class:`EncoderSpec`."""

    def __init__(self, spec, sigma_min=SIGMA_MIN):
        super().__init__()
        if isinstance(spec, dict):
            spec = EncoderSpec.from_dict(spec)
        self.spec = spec
        self.sigma_min = sigma_min
        m, n = spec.latent_channels, spec.hyper_channels
        self.g_a = AnalysisTransform(spec)
        self.g_s = SynthesisTransform(spec)
        self.h_a = HyperAnalysis(m, n)
        self.h_s = HyperSynthesis(m, n)
        self.entropy_bottleneck = FactorizedPrior(n)

    # geometry -----------------------------------------------------------
    def _batched(self, x):
        if x.ndim == 3:
            x = x.unsqueeze(0)
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise DimensionError(f"expected [B,{self.spec.in_channels},H,W], got {tuple(x.shape)}")
        return x

    def pad(self, x):
        x = self._batched(x)
        h, w = x.shape[-2:]
        f = self.spec.downsampling
        if h < f or w < f:
            raise InputTooSmallError(f"image {h}x{w} is smaller than one {f}x{f} block")
        mult = self.spec.pad_multiple
        ph, pw = (-h) % mult, (-w) % mult
        return reflect_pad(x, ph, pw), (h, w)

    # transforms ---------------------------------------------------------
    def analyze(self, x, taps=None):
        """Pre-quantization latent and tapped features of a padded image batch."""
        xp, _ = self.pad(x)
        taps = None if taps is None else [self.spec.resolve_tap(t) for t in taps]
        return self.g_a(xp, taps)

    def features(self, x, taps):
        """FeatureStack keyed by the requested tap names (aliases preserved)."""
        _, feats = self.analyze(x, taps)
        return OrderedDict((t, feats[self.spec.resolve_tap(t)]) for t in taps)

    def synthesize(self, y_hat, dims=None):
        if y_hat.ndim == 3:
            y_hat = y_hat.unsqueeze(0)
        if y_hat.ndim != 4 or y_hat.shape[1] != self.spec.latent_channels:
            raise DimensionError(f"latent shape {tuple(y_hat.shape)} does not match the encoder layout")
        x = self.g_s(y_hat).clamp(0.0, 1.0)
        if dims is not None:
            x = x[..., : dims[0], : dims[1]]
        return x

    def hyper_forward(self, y, mode="round", generator=None):
        z = self.h_a(torch.abs(y))
        z_hat = quantize(z, mode, generator)
        return z, z_hat, self.scales(z_hat)

    def scales(self, z_hat):
        return self.sigma_min + F.softplus(self.h_s(z_hat))

    def forward(self, x, mode="noise", generator=None, taps=None):
        xp, dims = self.pad(x)
        y, feats = self.g_a(xp, taps)
        z, z_hat, sigma = self.hyper_forward(y, mode, generator)
        y_hat = quantize(y, mode, generator)
        code = LatentCode(
            y=y_hat, z=z_hat,
            y_likelihoods=gaussian_likelihood(y_hat, sigma, self.sigma_min),
            z_likelihoods=self.entropy_bottleneck.likelihood(z_hat),
            mode=mode,
        )
        x_hat = self.synthesize(y_hat, dims)
        return {"x_hat": x_hat, "code": code, "y": y, "sigma": sigma, "features": feats, "dims": dims}
