"""Classifier pre-training and joint rate-distortion-classification training."""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from . import checkpoint
from .codec.entropy_models import estimate_rate_bpp
from .codec.models import Codec
from .codec.spec import QUALITY_LAMBDAS, EncoderSpec, make_spec
from .data import load_dataset
from .errors import ConfigError, LabelRangeError, TrainingAbort
from .ioutil import append_jsonl, write_sidecar

log = logging.getLogger(__name__)

PHASES = ("pretrain_cls", "joint", "finetune_hyper")
SCHEDULES = ("constant", "cosine")


@dataclass
class TrainConfig:
    phase: str = "joint"
    epochs: int = 20
    lr: float = 1e-4
    batch: int = 16
    lambda_rd: float = None
    beta_cls: float = 0.1
    quality_index: int = 8
    seed: int = 0
    num_classes: int = 10
    grad_clip: float = 1.0
    schedule: str = "constant"
    encoder: dict = field(default_factory=lambda: {"variant": "toy"})
    dataset: dict = field(default_factory=lambda: {"kind": "toy"})
    out_dir: str = "runs/train"

    def __post_init__(self):
        if self.lambda_rd is None:
            if not 1 <= self.quality_index <= len(QUALITY_LAMBDAS):
                raise ConfigError("quality_index must be within 1..8")
            self.lambda_rd = QUALITY_LAMBDAS[self.quality_index - 1]
        self.validate()

    def validate(self):
        if self.phase not in PHASES:
            raise ConfigError(f"unknown phase {self.phase!r}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.phase != "pretrain_cls" and self.lambda_rd <= 0:
            raise ConfigError("lambda_rd must be positive for rate-distortion phases")
        if self.beta_cls < 0:
            raise ConfigError("beta_cls must be nonnegative")
        if self.num_classes < 2:
            raise ConfigError("need at least two classes")

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            return cls(**json.load(f))

    def to_dict(self):
        return asdict(self)

    def build_spec(self):
        enc = dict(self.encoder)
        if "stages" in enc:
            return EncoderSpec.from_dict(enc)
        return make_spec(enc.pop("variant", "toy"), **enc)


class ClassifierHead(nn.Module):
    """Global average pool over the latent, then one linear layer."""

    def __init__(self, latent_channels, num_classes):
        super().__init__()
        self.fc = nn.Linear(latent_channels, num_classes)

    def forward(self, y):
        return self.fc(y.mean(dim=(-2, -1)))


def classification_loss(logits, label):
    """Mean softmax cross-entropy."""
    label = torch.as_tensor(label, dtype=torch.int64)
    k = logits.shape[-1]
    if bool(((label < 0) | (label >= k)).any()):
        raise LabelRangeError(f"label outside 0..{k - 1}")
    if logits.ndim == 1:
        logits, label = logits.unsqueeze(0), label.reshape(1)
    return F.cross_entropy(logits, label)


def joint_loss(x, x_hat, code, logits, label, cfg):
    """``bpp + lambda*255^2*MSE + beta*CE``. Returns (total, parts).

    ``parts`` holds the three weighted terms (which sum to ``total``) and the
    raw ``mse`` and ``ce`` values for logging.
    """
    b = x.shape[0] if x.ndim == 4 else 1
    h, w = x.shape[-2:]
    bpp = estimate_rate_bpp(code, (b, h, w))
    mse = F.mse_loss(x_hat, x)
    ce = classification_loss(logits, label) if logits is not None else torch.zeros((), dtype=x.dtype)
    parts = {
        "rate": bpp,
        "distortion": cfg.lambda_rd * 255.0 ** 2 * mse,
        "cls": cfg.beta_cls * ce,
    }
    for name, v in parts.items():
        if not bool(torch.isfinite(v)):
            raise TrainingAbort(f"loss part {name!r} is not finite", part=name)
    total = parts["rate"] + parts["distortion"] + parts["cls"]
    parts["mse"] = mse
    parts["ce"] = ce
    return total, parts


def accuracy_topk(logits, labels, k):
    """Percent of samples whose label is among the k largest logits (ties: lower index wins)."""
    logits = np.asarray(logits.detach().cpu() if torch.is_tensor(logits) else logits, dtype=np.float64)
    labels = np.asarray(labels.detach().cpu() if torch.is_tensor(labels) else labels)
    if k > logits.shape[1]:
        raise ConfigError("k exceeds the number of classes")
    order = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    hit = (order == labels[:, None]).any(axis=1)
    return 100.0 * float(hit.mean())


@dataclass
class TrainResult:
    codec: Codec
    head: ClassifierHead
    log: list
    best: Path = None
    last: Path = None


def save_model(path, codec, head=None, meta=None):
    tensors = checkpoint.module_tensors(codec, "codec")
    if head is not None:
        tensors.update(checkpoint.module_tensors(head, "head"))
    m = {"kind": "codec", "spec": codec.spec.to_dict(), "sigma_min": codec.sigma_min}
    if head is not None:
        m["num_classes"] = head.fc.out_features
    m.update(meta or {})
    return checkpoint.save(path, tensors, m)


def load_model(path_or_tensors, meta=None):
    """Rebuild (codec, head-or-None, meta) from an NCKP file or loaded tensors."""
    if isinstance(path_or_tensors, (str, Path)):
        tensors, meta = checkpoint.load(path_or_tensors)
    else:
        tensors = path_or_tensors
    codec = Codec(EncoderSpec.from_dict(meta["spec"]), sigma_min=meta.get("sigma_min", 0.11))
    checkpoint.load_module(codec, tensors, "codec")
    head = None
    if "num_classes" in meta and any(k.startswith("head.") for k in tensors):
        head = ClassifierHead(codec.spec.latent_channels, meta["num_classes"])
        checkpoint.load_module(head, tensors, "head")
    return codec, head, meta


def _batches(n, batch, generator):
    perm = torch.randperm(n, generator=generator)
    for i in range(0, n, batch):
        yield perm[i: i + batch]


def _step_loss(codec, head, x, label, cfg, generator):
    if cfg.phase == "pretrain_cls":
        y, _ = codec.analyze(x, taps=[])
        logits = head(y)
        ce = classification_loss(logits, label)
        if not bool(torch.isfinite(ce)):
            raise TrainingAbort("loss part 'cls' is not finite", part="cls")
        zero = torch.zeros((), dtype=x.dtype)
        return ce, {"rate": zero, "distortion": zero, "cls": ce, "mse": zero, "ce": ce}
    out = codec(x, mode="noise", generator=generator, taps=[])
    logits = head(out["y"])
    return joint_loss(x, out["x_hat"], out["code"], logits, label, cfg)


@torch.no_grad()
def evaluate(codec, head, images, labels, cfg, batch=64):
    """Round-mode validation metrics."""
    codec.eval()
    logits_all, bits, sq, n_px, totals = [], 0.0, 0.0, 0, []
    for i in range(0, images.shape[0], batch):
        x = images[i: i + batch]
        out = codec(x, mode="round", taps=[])
        logits = head(out["y"]) if head is not None else None
        if logits is not None:
            logits_all.append(logits)
        bits += float(out["code"].bits)
        sq += float(((out["x_hat"] - x) ** 2).sum())
        n_px += x.shape[0] * x.shape[-2] * x.shape[-1]
        if cfg is not None and logits is not None:
            total, _ = joint_loss(x, out["x_hat"], out["code"], logits, labels[i: i + batch], cfg)
            totals.append(float(total) * x.shape[0])
    mse = sq / (n_px * images.shape[1])
    res = {"bpp": bits / n_px, "psnr": 10 * math.log10(1.0 / max(mse, 1e-10)), "mse": mse}
    if logits_all:
        lg = torch.cat(logits_all)
        res["top1"] = accuracy_topk(lg, labels, 1)
        res["top5"] = accuracy_topk(lg, labels, min(5, lg.shape[1]))
    if totals:
        res["val_loss"] = sum(totals) / images.shape[0]
    return res


def run_phase(cfg, init=None, data=None, out_dir=None):
    """Run one training phase.

    ``init`` is a checkpoint path, a (codec, head) pair, or None for fresh
    weights. ``data`` optionally supplies ((x_train, y_train), (x_val, y_val));
    otherwise ``cfg.dataset`` is loaded. Checkpoints and ``metrics.jsonl`` go
    to ``out_dir`` (default ``cfg.out_dir``).
    """
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    out = Path(out_dir or cfg.out_dir)

    if init is None:
        if cfg.phase in ("joint", "finetune_hyper") and cfg.encoder.get("require_init"):
            raise ConfigError(f"phase {cfg.phase} needs initial encoder weights")
        codec = Codec(cfg.build_spec())
        head = ClassifierHead(codec.spec.latent_channels, cfg.num_classes)
    elif isinstance(init, (str, Path)):
        codec, head, _ = load_model(init)
        if head is None:
            head = ClassifierHead(codec.spec.latent_channels, cfg.num_classes)
    else:
        codec, head = init

    if cfg.epochs == 0:
        return TrainResult(codec, head, [])

    if data is None:
        train_x, train_y = load_dataset(cfg.dataset, "train")
        val_x, val_y = load_dataset(cfg.dataset, "val")
    else:
        (train_x, train_y), (val_x, val_y) = data
    if train_x.shape[0] == 0:
        raise ConfigError("training set is empty")

    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.jsonl"
    if metrics_path.exists():
        metrics_path.unlink()
    best_path, last_path = out / "best.nckp", out / "last.nckp"

    if cfg.phase == "pretrain_cls":
        params = list(codec.g_a.parameters()) + list(head.parameters())
    else:
        params = list(codec.parameters()) + list(head.parameters())
    opt = torch.optim.Adam(params, lr=cfg.lr)
    sched = None
    if cfg.schedule == "cosine":  # per-epoch cosine decay towards zero
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=cfg.epochs)

    history, best = [], math.inf
    cfg_dict = cfg.to_dict()
    for epoch in range(1, cfg.epochs + 1):
        codec.train()
        sums = {"loss": 0.0, "rate": 0.0, "distortion": 0.0, "cls": 0.0}
        seen = 0
        for idx in _batches(train_x.shape[0], cfg.batch, gen):
            x, lab = train_x[idx], train_y[idx]
            try:
                total, parts = _step_loss(codec, head, x, lab, cfg, gen)
            except TrainingAbort as exc:
                exc.trace = history
                log.error("epoch %d aborted: %s", epoch, exc)
                raise
            opt.zero_grad()
            total.backward()
            if cfg.grad_clip:
                nn.utils.clip_grad_norm_(params, cfg.grad_clip)
            opt.step()
            nb = x.shape[0]
            seen += nb
            sums["loss"] += float(total.detach()) * nb
            for k in ("rate", "distortion", "cls"):
                sums[k] += float(parts[k].detach()) * nb
        record = {"epoch": epoch, "phase": cfg.phase, "lr": opt.param_groups[0]["lr"]}
        if sched is not None:
            sched.step()
        record.update({k: v / seen for k, v in sums.items()})
        val = evaluate(codec, head, val_x, val_y, None if cfg.phase == "pretrain_cls" else cfg)
        record.update({k: val[k] for k in ("top1", "top5", "bpp", "psnr") if k in val})
        record["val_loss"] = val.get("val_loss", record["loss"])
        history.append(record)
        append_jsonl(metrics_path, record)
        log.info("epoch %d: %s", epoch, record)
        meta = {"config": cfg_dict, "epoch": epoch}
        save_model(last_path, codec, head, meta)
        write_sidecar(last_path, cfg_dict, cfg.seed, epoch=epoch)
        if record["val_loss"] < best:
            best = record["val_loss"]
            save_model(best_path, codec, head, meta)
            write_sidecar(best_path, cfg_dict, cfg.seed, epoch=epoch)
    write_sidecar(metrics_path, cfg_dict, cfg.seed)
    return TrainResult(codec, head, history, best_path, last_path)


def smoothed(values, window=3):
    """Trailing moving average; the first entries average what is available."""
    v = np.asarray(values, dtype=np.float64)
    out = np.empty_like(v)
    for i in range(len(v)):
        out[i] = v[max(0, i - window + 1): i + 1].mean()
    return out
