"""Image files, provenance sidecars and small JSON helpers."""

import hashlib
import json
from pathlib import Path

import numpy as np
import torch
from PIL import Image

IMAGE_SUFFIXES = (".png",)


def load_png(path):
    """Decode an image to a float32 tensor [C,H,W] in [0,1]; C is 1 or 3."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        a = np.asarray(im, dtype=np.float32) / 255.0
    if a.ndim == 2:
        a = a[None]
    else:
        a = a.transpose(2, 0, 1)
    return torch.from_numpy(np.ascontiguousarray(a))


def save_png(path, x):
    a = x.detach().cpu().clamp(0, 1).numpy() if torch.is_tensor(x) else np.clip(x, 0, 1)
    a = np.rint(a * 255.0).astype(np.uint8)
    a = a[0] if a.shape[0] == 1 else a.transpose(1, 2, 0)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(a).save(path)


def list_images(folder):
    return sorted(p for p in Path(folder).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_sidecar(artifact, config, seed, **extra):
    """Write ``<artifact>.json`` recording config hash and seed."""
    meta = {"artifact": Path(artifact).name, "config_hash": config_hash(config), "seed": seed}
    meta.update(extra)
    side = Path(str(artifact) + ".json")
    side.write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    return side


def append_jsonl(path, record):
    with open(path, "a") as f:
        f.write(json.dumps(record, sort_keys=True) + "\n")


def read_jsonl(path):
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]
