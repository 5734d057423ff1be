"""Integer CDF tables shared by the encoder and decoder."""

import numpy as np
import torch
from scipy.special import ndtr, ndtri

from ..entropy import PRECISION
from .entropy_models import SIGMA_MIN

TAIL_MASS = 1e-9
SCALE_MAX = 256.0
N_SCALES = 64


def quantize_pmf(pmf, precision=PRECISION):
    """Turn a float pmf into a cumulative integer table summing to 2**precision.

    Every symbol keeps a frequency of at least one, so any value remains codable.
    """
    pmf = np.asarray(pmf, dtype=np.float64)
    pmf = np.clip(pmf, 0.0, None)
    total = 1 << precision
    n = pmf.size
    if n > total:
        raise ValueError("alphabet larger than the table precision")
    s = pmf.sum()
    pmf = pmf / s if s > 0 else np.full(n, 1.0 / n)
    freq = np.maximum(1, np.round(pmf * total).astype(np.int64))
    diff = total - int(freq.sum())
    order = np.argsort(-freq, kind="stable")
    i = 0
    while diff != 0:
        j = order[i % n]
        if diff > 0:
            freq[j] += diff
            diff = 0
        elif freq[j] > 1:
            take = min(freq[j] - 1, -diff)
            freq[j] -= take
            diff += take
        i += 1
    cdf = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(freq, out=cdf[1:])
    return cdf.astype(np.int32)


def _pack(rows, offsets):
    width = max(len(r) for r in rows)
    cdfs = np.zeros((len(rows), width), dtype=np.int32)
    for i, r in enumerate(rows):
        cdfs[i, : len(r)] = r
    sizes = np.array([len(r) for r in rows], dtype=np.int32)
    return cdfs, sizes, np.asarray(offsets, dtype=np.int32)


class GaussianTables:
    """One table per entry of a log-spaced scale grid."""

    def __init__(self, sigma_min=SIGMA_MIN, sigma_max=SCALE_MAX, n_scales=N_SCALES,
                 tail_mass=TAIL_MASS):
        self.log_min = np.log(sigma_min)
        self.step = (np.log(sigma_max) - self.log_min) / (n_scales - 1)
        self.scales = np.exp(self.log_min + self.step * np.arange(n_scales))
        mult = -ndtri(tail_mass / 2)
        rows, offsets = [], []
        for s in self.scales:
            half = max(1, int(np.ceil(mult * s)))
            v = np.arange(-half, half + 1, dtype=np.float64)
            pmf = ndtr((v + 0.5) / s) - ndtr((v - 0.5) / s)
            tail = max(0.0, 1.0 - pmf.sum())
            rows.append(quantize_pmf(np.append(pmf, tail)))
            offsets.append(-half)
        self.cdfs, self.sizes, self.offsets = _pack(rows, offsets)

    def indexes(self, sigma):
        """Nearest scale in the log domain."""
        s = np.asarray(sigma, dtype=np.float64)
        idx = np.rint((np.log(s) - self.log_min) / self.step)
        return np.clip(idx, 0, len(self.scales) - 1).astype(np.int32)


@torch.no_grad()
def factorized_tables(prior, search=512, tail_mass=TAIL_MASS):
    """Tables for each channel of a :class:`FactorizedPrior`."""
    c = prior.channels
    grid = torch.arange(-search, search + 1, dtype=torch.float64)
    p64 = {k: v.detach().double() for k, v in prior.state_dict().items()}
    edges = torch.cat([grid - 0.5, grid[-1:] + 0.5])
    t = edges.view(1, 1, -1).expand(c, 1, -1)
    logits = _logits64(p64, len(prior.factors), t)
    cdf = torch.sigmoid(logits).squeeze(1).numpy()  # [C, 2*search+2]
    rows, offsets = [], []
    for ch in range(c):
        lo_i = int(np.searchsorted(cdf[ch], tail_mass / 2, side="right")) - 1
        hi_i = int(np.searchsorted(cdf[ch], 1 - tail_mass / 2, side="left"))
        lo_i = min(max(lo_i, 0), len(grid) - 1)
        hi_i = min(max(hi_i, lo_i + 1), len(grid))
        pmf = cdf[ch, lo_i + 1: hi_i + 1] - cdf[ch, lo_i:hi_i]
        tail = max(0.0, 1.0 - pmf.sum())
        rows.append(quantize_pmf(np.append(pmf, tail)))
        offsets.append(int(grid[lo_i]))
    return _pack(rows, offsets)


def _logits64(p, n_factors, t):
    i = 0
    while f"matrices.{i}" in p:
        t = torch.matmul(torch.nn.functional.softplus(p[f"matrices.{i}"]), t) + p[f"biases.{i}"]
        if i < n_factors:
            t = t + torch.tanh(p[f"factors.{i}"]) * torch.tanh(t)
        i += 1
    return t
