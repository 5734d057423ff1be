"""Gatys-style style transfer by direct pixel optimization."""

import json
import math
from dataclasses import asdict, dataclass, field

import torch

from ..errors import ConfigError, TrainingAbort


def gram_matrix(f):
    """``F F^T / (C H W)`` for ``f`` of shape [C,H,W] (or batched [B,C,H,W])."""
    c, h, w = f.shape[-3:]
    flat = f.reshape(*f.shape[:-3], c, h * w)
    return flat @ flat.transpose(-1, -2) / (c * h * w)


@dataclass
class StyleConfig:
    content_tap: str = "conv2"
    style_taps: list = field(default_factory=lambda: ["conv1", "conv2", "conv3"])
    content_weight: float = 1.0
    style_weight: float = 1e3
    steps: int = 200
    lr: float = 0.05
    init: str = "content"
    seed: int = 0

    def validate(self, available=None):
        if self.steps <= 0:
            raise ConfigError("steps must be positive")
        if self.content_weight < 0 or self.style_weight < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.init not in ("content", "noise"):
            raise ConfigError(f"unknown init {self.init!r}")
        if available is not None:
            for t in [self.content_tap] + list(self.style_taps):
                if t not in available:
                    raise ConfigError(f"tap {t!r} is not provided by the encoder")

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            return cls(**json.load(f))

    def to_dict(self):
        return asdict(self)


class StyleLoss:
    """Content + style objective against fixed targets."""

    def __init__(self, extractor, content, style, cfg):
        self.extractor = extractor
        self.cfg = cfg
        with torch.no_grad():
            self.content_target = extractor(content)[cfg.content_tap].detach()
            sf = extractor(style)
            self.gram_targets = {t: gram_matrix(sf[t]).detach() for t in cfg.style_taps}

    def __call__(self, x):
        feats = self.extractor(x)
        content = torch.mean((feats[self.cfg.content_tap] - self.content_target) ** 2)
        style = sum(torch.mean((gram_matrix(feats[t]) - g) ** 2) for t, g in self.gram_targets.items())
        total = self.cfg.content_weight * content + self.cfg.style_weight * style
        return total, content, style


def style_transfer(content, style, extractor, cfg, max_halvings=12):
    """Optimize pixels toward the content features and style Gram matrices.

    Each step moves along the max-normalized negative gradient by the current
    step size. A step that would raise the objective is rejected and the step
    halved, so the recorded loss never increases. Returns (image, trace).
    """
    cfg.validate(getattr(extractor, "taps", None))
    if content.ndim == 3:
        content = content.unsqueeze(0)
    if style.ndim == 3:
        style = style.unsqueeze(0)
    loss_fn = StyleLoss(extractor, content, style, cfg)
    if cfg.init == "noise":
        gen = torch.Generator().manual_seed(cfg.seed)
        x = torch.rand(content.shape, generator=gen, dtype=content.dtype)
    else:
        x = content.clone()
    step = cfg.lr
    trace = []

    def evaluate(img):
        with torch.no_grad():
            t, c, s = loss_fn(img)
        return float(t), float(c), float(s)

    cur = evaluate(x)
    trace.append({"step": 0, "total": cur[0], "content": cur[1], "style": cur[2], "lr": step})
    for i in range(1, cfg.steps + 1):
        xr = x.detach().requires_grad_(True)
        total, _, _ = loss_fn(xr)
        if not math.isfinite(float(total.detach())):
            raise TrainingAbort("style objective is not finite", part="total", trace=trace)
        (g,) = torch.autograd.grad(total, xr)
        gmax = float(g.abs().max())
        if gmax == 0.0:
            trace.append({"step": i, "total": cur[0], "content": cur[1], "style": cur[2], "lr": step})
            continue
        direction = g / gmax
        for _ in range(max_halvings + 1):
            cand = (x - step * direction).clamp(0.0, 1.0)
            new = evaluate(cand)
            if not math.isfinite(new[0]):
                raise TrainingAbort("style objective is not finite", part="total", trace=trace)
            if new[0] <= cur[0]:
                x, cur = cand, new
                step *= 1.2
                break
            step *= 0.5
        trace.append({"step": i, "total": cur[0], "content": cur[1], "style": cur[2], "lr": step})
    return x[0].detach(), trace
