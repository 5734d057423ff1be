"""Generalized divisive normalization."""

from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .errors import DimensionError, NumericError, ParameterError

BETA_MIN = 1e-6


@dataclass
class GdnParams:
    beta: torch.Tensor   # [C]
    gamma: torch.Tensor  # [C, C]

    def validate(self):
        if self.beta.ndim != 1 or self.gamma.shape != (self.beta.numel(), self.beta.numel()):
            raise DimensionError(
                f"beta {tuple(self.beta.shape)} and gamma {tuple(self.gamma.shape)} are inconsistent")
        if bool((self.beta < BETA_MIN).any()):
            raise ParameterError(f"beta must be >= {BETA_MIN}")
        if bool((self.gamma < 0).any()):
            raise ParameterError("gamma must be nonnegative")


def gdn_forward(x, params, inverse=False):
    """Apply GDN (or IGDN when ``inverse``) to ``x`` of shape [C,H,W] or [B,C,H,W].

    ``y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2)``; the inverse multiplies
    by the same root.
    """
    if x.ndim not in (3, 4):
        raise DimensionError(f"expected [C,H,W] or [B,C,H,W], got {tuple(x.shape)}")
    c = x.shape[-3]
    if params.beta.numel() != c or params.gamma.shape != (c, c):
        raise DimensionError(
            f"input has {c} channels, params have beta {tuple(params.beta.shape)}, "
            f"gamma {tuple(params.gamma.shape)}")
    if not bool(torch.isfinite(x).all()):
        raise NumericError("non-finite input to GDN")
    norm = torch.einsum("ij,...jhw->...ihw", params.gamma, x * x)
    norm = norm + params.beta.view(-1, 1, 1)
    root = torch.sqrt(norm)
    return x * root if inverse else x / root


class GDN(nn.Module):
    """GDN layer with squared reparameterization of beta and gamma.

    ``beta = beta_p**2 + beta_min`` and ``gamma = gamma_p**2`` so the
    effective parameters always satisfy their positivity constraints.
    """

    def __init__(self, channels, inverse=False, gamma_init=0.1, beta_min=BETA_MIN):
        super().__init__()
        self.inverse = inverse
        self.beta_min = beta_min
        self.beta_p = nn.Parameter(torch.sqrt(torch.ones(channels) - beta_min))
        self.gamma_p = nn.Parameter(torch.sqrt(gamma_init * torch.eye(channels)))

    def params(self):
        return GdnParams(beta=self.beta_p ** 2 + self.beta_min, gamma=self.gamma_p ** 2)

    def forward(self, x):
        p = self.params()
        c = p.beta.numel()
        root = torch.sqrt(F.conv2d(x * x, p.gamma.view(c, c, 1, 1), p.beta))
        return x * root if self.inverse else x / root

    def extra_repr(self):
        return f"channels={self.beta_p.numel()}, inverse={self.inverse}"
