"""4x super-resolution trained against an analysis-transform perceptual loss."""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .. import checkpoint
from ..errors import ConfigError, TrainingAbort
from ..quality import psnr, ssim

SCALE = 4


def sr_perceptual_loss(sr, hr, extractor, tap):
    """Mean squared difference of the activations at ``tap``."""
    if sr.shape != hr.shape:
        from ..errors import DimensionError

        raise DimensionError(f"sr {tuple(sr.shape)} and hr {tuple(hr.shape)} differ")
    fa, fb = extractor(sr)[tap], extractor(hr)[tap]
    return torch.mean((fa - fb) ** 2)


def downsample(hr, scale=SCALE):
    """Bicubic (antialiased) downsampling of an [B,C,H,W] batch."""
    return F.interpolate(hr, scale_factor=1.0 / scale, mode="bicubic",
                         antialias=True, align_corners=False).clamp(0.0, 1.0)


def upsample_nearest(lr, scale=SCALE):
    return F.interpolate(lr, scale_factor=scale, mode="nearest")


class _Residual(nn.Module):
    def __init__(self, width):
        super().__init__()
        self.body = nn.Sequential(nn.Conv2d(width, width, 3, 1, 1), nn.PReLU(width),
                                  nn.Conv2d(width, width, 3, 1, 1))

    def forward(self, x):
        return x + self.body(x)


class Generator(nn.Module):
    """Residual blocks, two pixel-shuffle x2 stages, and a global bicubic skip."""

    def __init__(self, width=32, blocks=4, channels=3):
        super().__init__()
        self.head = nn.Sequential(nn.Conv2d(channels, width, 9, 1, 4), nn.PReLU(width))
        self.blocks = nn.Sequential(*[_Residual(width) for _ in range(blocks)])
        self.mid = nn.Conv2d(width, width, 3, 1, 1)
        self.up = nn.Sequential(
            nn.Conv2d(width, width * 4, 3, 1, 1), nn.PixelShuffle(2), nn.PReLU(width),
            nn.Conv2d(width, width * 4, 3, 1, 1), nn.PixelShuffle(2), nn.PReLU(width),
        )
        self.tail = nn.Conv2d(width, channels, 9, 1, 4)
        nn.init.zeros_(self.tail.weight)
        nn.init.zeros_(self.tail.bias)

    def forward(self, lr):
        h = self.head(lr)
        h = h + self.mid(self.blocks(h))
        base = F.interpolate(lr, scale_factor=SCALE, mode="bicubic", align_corners=False)
        return base + self.tail(self.up(h))


class Discriminator(nn.Module):
    def __init__(self, width=16, channels=3):
        super().__init__()
        layers, cin = [], channels
        for i in range(4):
            cout = width * 2 ** i
            layers += [nn.Conv2d(cin, cout, 3, 2, 1), nn.LeakyReLU(0.2)]
            cin = cout
        self.features = nn.Sequential(*layers)
        self.fc = nn.Linear(cin, 1)

    def forward(self, x):
        return self.fc(self.features(x).mean(dim=(-2, -1))).squeeze(-1)


@dataclass
class SrConfig:
    scale: int = SCALE
    perceptual_tap: str = "bottleneck"
    adversarial_weight: float = 1e-3
    gen_width: int = 32
    gen_blocks: int = 4
    disc_width: int = 16
    epochs: int = 10
    lr: float = 1e-4
    batch: int = 8
    crop: int = 64
    val_fraction: float = 0.2
    seed: int = 0
    dataset: dict = field(default_factory=lambda: {"kind": "synthetic", "n": 50, "size": 64})
    model: str = None
    out_dir: str = "runs/sr"

    def validate(self):
        if self.scale != SCALE:
            raise ConfigError("only 4x super-resolution is supported")
        if self.adversarial_weight < 0:
            raise ConfigError("adversarial_weight must be nonnegative")
        if self.crop % SCALE:
            raise ConfigError("crop must be a multiple of the scale")

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            return cls(**json.load(f))

    def to_dict(self):
        return asdict(self)


@dataclass
class SrResult:
    generator: Generator
    log: list
    baseline: dict = None


def _crops(images, idx, crop, gen):
    out = []
    for i in idx.tolist():
        img = images[i]
        h, w = img.shape[-2:]
        top = int(torch.randint(0, h - crop + 1, (1,), generator=gen))
        left = int(torch.randint(0, w - crop + 1, (1,), generator=gen))
        out.append(img[:, top: top + crop, left: left + crop])
    return torch.stack(out)


@torch.no_grad()
def evaluate_sr(generator, hr_images):
    """Mean PSNR/SSIM of the generator and of nearest-neighbour upsampling."""
    generator.eval()
    res = {"psnr": [], "ssim": [], "nn_psnr": [], "nn_ssim": []}
    for hr in hr_images:
        lr = downsample(hr.unsqueeze(0))
        sr = generator(lr).clamp(0, 1)[0]
        nn_up = upsample_nearest(lr)[0]
        res["psnr"].append(psnr(hr, sr))
        res["ssim"].append(ssim(hr, sr))
        res["nn_psnr"].append(psnr(hr, nn_up))
        res["nn_ssim"].append(ssim(hr, nn_up))
    generator.train()
    return {k: float(np.mean(v)) for k, v in res.items()}


def train_sr(hr_images, extractor, cfg, on_epoch=None):
    """Train a generator; returns :class:`SrResult` with a per-epoch log."""
    cfg.validate()
    n = hr_images.shape[0]
    if n == 0:
        raise ConfigError("dataset is empty")
    h, w = hr_images.shape[-2:]
    if min(h, w) < cfg.crop or cfg.crop < SCALE * 4:
        raise ConfigError(f"HR images {h}x{w} cannot supply {cfg.crop}px crops")
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    n_val = int(round(n * cfg.val_fraction)) if n > 1 else 0
    train, val = hr_images[: n - n_val], hr_images[n - n_val:]

    g = Generator(cfg.gen_width, cfg.gen_blocks, hr_images.shape[1])
    d = Discriminator(cfg.disc_width, hr_images.shape[1]) if cfg.adversarial_weight > 0 else None
    opt_g = torch.optim.Adam(g.parameters(), lr=cfg.lr)
    opt_d = torch.optim.Adam(d.parameters(), lr=cfg.lr) if d is not None else None

    baseline = evaluate_sr(g, val) if n_val else None
    history = []
    for epoch in range(1, cfg.epochs + 1):
        sums = {"loss": 0.0, "perceptual": 0.0, "adversarial": 0.0}
        seen = 0
        perm = torch.randperm(train.shape[0], generator=gen)
        for i in range(0, train.shape[0], cfg.batch):
            hr = _crops(train, perm[i: i + cfg.batch], cfg.crop, gen)
            lr = downsample(hr)
            sr = g(lr)
            perc = sr_perceptual_loss(sr, hr, extractor, cfg.perceptual_tap)
            adv = torch.zeros(())
            if d is not None:
                adv = F.binary_cross_entropy_with_logits(d(sr), torch.ones(sr.shape[0]))
            loss = perc + cfg.adversarial_weight * adv
            if not math.isfinite(float(loss.detach())):
                raise TrainingAbort("super-resolution loss is not finite", part="perceptual", trace=history)
            opt_g.zero_grad()
            loss.backward()
            opt_g.step()
            if d is not None:
                real = d(hr)
                fake = d(sr.detach())
                d_loss = (F.binary_cross_entropy_with_logits(real, torch.ones_like(real))
                          + F.binary_cross_entropy_with_logits(fake, torch.zeros_like(fake)))
                opt_d.zero_grad()
                d_loss.backward()
                opt_d.step()
            nb = hr.shape[0]
            seen += nb
            sums["loss"] += float(loss.detach()) * nb
            sums["perceptual"] += float(perc.detach()) * nb
            sums["adversarial"] += float(adv.detach()) * nb
        record = {"epoch": epoch}
        record.update({k: v / seen for k, v in sums.items()})
        if n_val:
            record.update(evaluate_sr(g, val))
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
    return SrResult(g, history, baseline)


def save_generator(path, generator, cfg):
    meta = {"kind": "sr_generator", "width": cfg.gen_width, "blocks": cfg.gen_blocks,
            "channels": generator.head[0].in_channels, "config": cfg.to_dict()}
    return checkpoint.save(path, checkpoint.module_tensors(generator, "generator"), meta)


def load_generator(path):
    tensors, meta = checkpoint.load(path)
    g = Generator(meta["width"], meta["blocks"], meta.get("channels", 3))
    checkpoint.load_module(g, tensors, "generator")
    return g.eval()


@torch.no_grad()
def sr_infer(generator, lr):
    x = lr.unsqueeze(0) if lr.ndim == 3 else lr
    return generator(x).clamp(0, 1)[0]
