"""Quantization, likelihood models and rate estimation."""

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from ..errors import DomainError, ParameterError

SIGMA_MIN = 0.11
LIKELIHOOD_MIN = 1e-9


def quantize(v, mode, generator=None):
    """Relax (``noise``) or round (``round``, ties to even) a tensor."""
    if mode == "round":
        return torch.round(v)
    if mode == "noise":
        if generator is None:
            raise ParameterError("noise quantization needs a generator")
        u = torch.rand(v.shape, generator=generator, dtype=v.dtype, device=v.device)
        # rand is on [0, 1); mirror so the support is the open interval
        return v + (u - 0.5) * (1.0 - 1e-7)
    raise ParameterError(f"unknown quantization mode {mode!r}")


def gaussian_likelihood(v_hat, sigma, sigma_min=SIGMA_MIN, likelihood_min=LIKELIHOOD_MIN):
    """P(v) of a zero-mean Gaussian integrated over [v-1/2, v+1/2]."""
    if bool((sigma < sigma_min).any()):
        raise ParameterError(f"sigma below the lower bound {sigma_min}")
    a = torch.abs(v_hat)
    upper = torch.special.ndtr((0.5 - a) / sigma)
    lower = torch.special.ndtr((-0.5 - a) / sigma)
    return torch.clamp_min(upper - lower, likelihood_min)


class FactorizedPrior(nn.Module):
    """Per-channel learned monotone CDF (the hyper-latent entropy bottleneck).

    The CDF is ``sigmoid(h(t))`` where ``h`` is a small per-channel network
    whose weights pass through softplus, which makes ``h`` nondecreasing.
    """

    def __init__(self, channels, filters=(3, 3, 3), init_scale=10.0,
                 likelihood_min=LIKELIHOOD_MIN):
        super().__init__()
        self.channels = channels
        self.likelihood_min = likelihood_min
        dims = (1,) + tuple(filters) + (1,)
        scale = init_scale ** (1.0 / (len(filters) + 1))
        self.matrices = nn.ParameterList()
        self.biases = nn.ParameterList()
        self.factors = nn.ParameterList()
        for i in range(len(dims) - 1):
            init = np.log(np.expm1(1.0 / scale / dims[i + 1]))
            self.matrices.append(nn.Parameter(torch.full((channels, dims[i + 1], dims[i]), float(init))))
            self.biases.append(nn.Parameter(torch.rand(channels, dims[i + 1], 1) - 0.5))
            if i < len(dims) - 2:
                self.factors.append(nn.Parameter(torch.zeros(channels, dims[i + 1], 1)))

    def logits_cumulative(self, t):
        # t: [C, 1, n]
        for i, (m, b) in enumerate(zip(self.matrices, self.biases)):
            t = torch.matmul(F.softplus(m), t) + b
            if i < len(self.factors):
                t = t + torch.tanh(self.factors[i]) * torch.tanh(t)
        return t

    def _flat(self, v):
        # [B, C, H, W] -> [C, 1, B*H*W]
        c = v.shape[1]
        return v.transpose(0, 1).reshape(c, 1, -1)

    def _unflat(self, t, like):
        b, c, h, w = like.shape
        return t.reshape(c, b, h, w).transpose(0, 1)

    def cdf(self, v):
        """CDF evaluated elementwise on ``v`` of shape [B, C, H, W]."""
        return self._unflat(torch.sigmoid(self.logits_cumulative(self._flat(v))), v)

    def likelihood(self, v_hat):
        t = self._flat(v_hat)
        lower = self.logits_cumulative(t - 0.5)
        upper = self.logits_cumulative(t + 0.5)
        # evaluate in the tail where both sigmoids are far from saturation
        sign = -torch.sign(lower + upper).detach()
        lik = torch.abs(torch.sigmoid(sign * upper) - torch.sigmoid(sign * lower))
        return torch.clamp_min(self._unflat(lik, v_hat), self.likelihood_min)

    def forward(self, v_hat):
        return self.likelihood(v_hat)


def likelihood(v_hat, model):
    """Likelihood of quantized values under ``model``.

    ``model`` is either a :class:`FactorizedPrior` or a tensor of Gaussian
    scales broadcastable to ``v_hat``.
    """
    if isinstance(model, FactorizedPrior):
        return model.likelihood(v_hat)
    return gaussian_likelihood(v_hat, model)


@dataclass
class LatentCode:
    y: torch.Tensor
    z: torch.Tensor
    y_likelihoods: torch.Tensor
    z_likelihoods: torch.Tensor
    mode: str = "round"

    @property
    def bits(self):
        return -(torch.log2(self.y_likelihoods).sum() + torch.log2(self.z_likelihoods).sum())


def estimate_rate_bpp(code, image_dims):
    """Estimated bits per pixel; ``image_dims`` is (H, W) or (B, H, W)."""
    if len(image_dims) == 2:
        pixels = image_dims[0] * image_dims[1] * (code.y.shape[0] if code.y.ndim == 4 else 1)
    else:
        pixels = image_dims[0] * image_dims[1] * image_dims[2]
    if pixels <= 0:
        raise DomainError("zero-area image")
    return code.bits / pixels
