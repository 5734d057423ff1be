"""CPIPS: channel-weighted distances between normalized analysis-transform features."""

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import ConfigError, DimensionError

EPS = 1e-10


def normalize_channelwise(f, eps=EPS):
    """Divide every spatial site's channel vector by its Euclidean norm (+eps)."""
    norm = torch.sqrt((f * f).sum(dim=-3, keepdim=True))
    return f / (norm + eps)


@dataclass
class MetricWeights:
    """Nonnegative per-channel weights for each tap, keyed by tap name."""

    weights: OrderedDict

    def __post_init__(self):
        self.weights = OrderedDict((k, torch.as_tensor(v)) for k, v in self.weights.items())
        for k, w in self.weights.items():
            if w.ndim != 1:
                raise DimensionError(f"weights for {k!r} must be a vector")
            if bool((w < 0).any()):
                raise ConfigError(f"weights for {k!r} must be nonnegative")

    @property
    def taps(self):
        return list(self.weights)

    @classmethod
    def uniform(cls, channels, value=1.0, dtype=torch.float32):
        """``channels`` maps tap name to channel count."""
        return cls(OrderedDict((k, torch.full((c,), value, dtype=dtype)) for k, c in channels.items()))

    def scaled(self, alpha):
        return MetricWeights(OrderedDict((k, alpha * w) for k, w in self.weights.items()))

    def to_tensors(self):
        return OrderedDict((f"metric.w.{k}", w.detach().cpu().float().numpy()) for k, w in self.weights.items())

    @classmethod
    def from_tensors(cls, tensors):
        pre = "metric.w."
        return cls(OrderedDict((k[len(pre):], torch.from_numpy(np.asarray(v)))
                               for k, v in tensors.items() if k.startswith(pre)))


@dataclass
class DistanceReport:
    total: float
    per_layer: dict = field(default_factory=dict)

    def to_json(self):
        return {"total": self.total, "per_layer": dict(self.per_layer)}


class CodecTaps(nn.Module):
    """Frozen feature extractor reading named taps of a codec's analysis transform."""

    def __init__(self, codec, taps=None):
        super().__init__()
        self.codec = codec
        self.taps = list(taps) if taps is not None else list(codec.spec.tap_names)
        for p in self.codec.parameters():
            p.requires_grad_(False)

    def channels(self):
        out = OrderedDict()
        for t in self.taps:
            name = self.codec.spec.resolve_tap(t)
            stage = next(s for s in self.codec.spec.stages if s.name == name)
            out[t] = stage.out_channels
        return out

    def forward(self, x):
        return self.codec.features(x, self.taps)


class PixelTaps(nn.Module):
    """Identity 'encoder': one tap holding the raw pixels."""

    def __init__(self, in_channels=3):
        super().__init__()
        self.in_channels = in_channels
        self.taps = ["pixels"]

    def channels(self):
        return OrderedDict(pixels=self.in_channels)

    def forward(self, x):
        if x.ndim == 3:
            x = x.unsqueeze(0)
        return OrderedDict(pixels=x)


def layer_distances(feats, feats0, weights):
    """Per-tap distances, each a tensor of shape [B]."""
    out = OrderedDict()
    for tap, w in weights.weights.items():
        if tap not in feats or tap not in feats0:
            raise ConfigError(f"weights name tap {tap!r} that the encoder does not provide")
        a, b = normalize_channelwise(feats[tap]), normalize_channelwise(feats0[tap])
        if a.shape != b.shape:
            raise DimensionError(f"tap {tap!r} shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
        if w.numel() != a.shape[-3]:
            raise DimensionError(f"tap {tap!r} has {a.shape[-3]} channels, weights have {w.numel()}")
        diff = (a - b) * w.to(a.dtype).view(-1, 1, 1)
        out[tap] = (diff * diff).sum(dim=-3).mean(dim=(-2, -1))
    return out


def _check_pair(x, x0):
    if x.shape != x0.shape:
        raise DimensionError(f"image dims differ: {tuple(x.shape)} vs {tuple(x0.shape)}")


def distance(x, x0, extractor, weights):
    """Differentiable batched distance, shape [B]."""
    _check_pair(x, x0)
    parts = layer_distances(extractor(x), extractor(x0), weights)
    return sum(parts.values())


def cpips_distance(x, x0, extractor, weights):
    """Distance report for a single image pair."""
    _check_pair(x, x0)
    with torch.no_grad():
        parts = layer_distances(extractor(x), extractor(x0), weights)
    per = OrderedDict((k, float(v.sum())) for k, v in parts.items())
    return DistanceReport(total=float(sum(per.values())), per_layer=per)


# calibration -----------------------------------------------------------------

class RankingHead(nn.Module):
    """Maps the distance pair (d0, d1) to the predicted fraction preferring p1."""

    def __init__(self, hidden=32):
        super().__init__()
        self.fc1 = nn.Linear(2, hidden)
        self.fc2 = nn.Linear(hidden, 1)

    def forward(self, d0, d1):
        x = torch.stack([d0, d1], dim=-1)
        return torch.sigmoid(self.fc2(F.softplus(self.fc1(x)))).squeeze(-1)


@dataclass
class CalibrationConfig:
    steps: int = 2000
    lr: float = 1e-2
    batch: int = 64
    seed: int = 0
    init_weight: float = 1.0
    hidden: int = 32


@torch.no_grad()
def channel_sq_diffs(extractor, ref, p, batch=64):
    """Spatially averaged squared differences of normalized features per channel.

    Returns an array [n, sum_l C_l]; the distance is then ``diffs @ w**2``.
    """
    rows = []
    for i in range(0, ref.shape[0], batch):
        fr, fp = extractor(ref[i: i + batch]), extractor(p[i: i + batch])
        cols = []
        for tap in extractor.taps:
            a, b = normalize_channelwise(fr[tap]), normalize_channelwise(fp[tap])
            cols.append(((a - b) ** 2).mean(dim=(-2, -1)))
        rows.append(torch.cat(cols, dim=1))
    return torch.cat(rows).double()


def calibrate(ref, p0, p1, h, extractor, cfg=None):
    """Learn nonnegative channel weights from 2AFC judgments.

    ``h`` is the fraction of observers preferring ``p1``. The encoder is frozen;
    weights and a small ranking head minimize binary cross-entropy between the
    head's prediction and ``h``. Returns (MetricWeights, RankingHead, loss trace).
    """
    cfg = cfg or CalibrationConfig()
    n = ref.shape[0]
    if n == 0:
        raise ConfigError("calibration set is empty")
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    a0 = channel_sq_diffs(extractor, ref, p0)
    a1 = channel_sq_diffs(extractor, ref, p1)
    h = torch.as_tensor(h, dtype=torch.float64)
    chans = extractor.channels()
    w = torch.full((a0.shape[1],), cfg.init_weight, dtype=torch.float64, requires_grad=True)
    head = RankingHead(cfg.hidden).double()
    opt = torch.optim.Adam([w] + list(head.parameters()), lr=cfg.lr)
    trace = []
    for _ in range(cfg.steps):
        idx = torch.randint(0, n, (min(cfg.batch, n),), generator=gen)
        w2 = w * w
        pred = head(a0[idx] @ w2, a1[idx] @ w2)
        loss = F.binary_cross_entropy(pred.clamp(1e-7, 1 - 1e-7), h[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
        with torch.no_grad():
            w.clamp_(min=0.0)
        trace.append(float(loss.detach()))
    out, start = OrderedDict(), 0
    for tap, c in chans.items():
        out[tap] = w.detach()[start: start + c].float().clone()
        start += c
    return MetricWeights(out), head, trace
