"""Synthetic image sources for desk-scale experiments, plus folder datasets."""

import os
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError
from .ioutil import list_images, load_png


def _grid(size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    return yy, xx


def _hsv_color(h, s=0.8, v=0.9):
    i = int(h * 6) % 6
    f = h * 6 - int(h * 6)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    return np.array([(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i])


def synthetic_image(rng, size=64):
    """A toy 'natural' image: smooth colored field, a few shapes, mild noise."""
    yy, xx = _grid(size)
    img = np.zeros((3, size, size))
    for c in range(3):
        field = rng.uniform(0.2, 0.8)
        for _ in range(3):
            fx, fy = rng.uniform(0.5, 4.0, size=2)
            ph = rng.uniform(0, 2 * np.pi)
            field = field + rng.uniform(0.05, 0.2) * np.sin(2 * np.pi * (fx * xx + fy * yy) + ph)
        img[c] = field
    for _ in range(rng.integers(2, 6)):
        color = rng.uniform(0, 1, size=3)
        cy, cx = rng.uniform(0, 1, size=2)
        r = rng.uniform(0.05, 0.25)
        if rng.random() < 0.5:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        else:
            mask = (np.abs(yy - cy) < r) & (np.abs(xx - cx) < r * rng.uniform(0.3, 1.5))
        img[:, mask] = color[:, None]
    img += rng.normal(0, 0.01, size=img.shape)
    return np.clip(img, 0, 1).astype(np.float32)


def synthetic_images(n, size=64, seed=0):
    rng = np.random.default_rng(seed)
    return torch.from_numpy(np.stack([synthetic_image(rng, size) for _ in range(n)]))


def toy_class_image(rng, label, num_classes, size=64):
    """Class = grating orientation plus tint; phase, frequency and clutter vary."""
    yy, xx = _grid(size)
    theta = np.pi * label / num_classes + rng.normal(0, 0.05)
    freq = rng.uniform(3.0, 6.0)
    phase = rng.uniform(0, 2 * np.pi)
    wave = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
    fg = _hsv_color((label / num_classes + rng.normal(0, 0.03)) % 1.0)
    bg = rng.uniform(0.0, 0.4, size=3)
    img = bg[:, None, None] + (fg - bg)[:, None, None] * wave[None]
    for _ in range(rng.integers(0, 3)):
        cy, cx = rng.uniform(0, 1, size=2)
        r = rng.uniform(0.05, 0.15)
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        img[:, mask] = rng.uniform(0, 1, size=3)[:, None]
    img += rng.normal(0, 0.03, size=img.shape)
    return np.clip(img, 0, 1).astype(np.float32)


def toy_classification_set(n, num_classes=10, size=64, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % num_classes
    rng.shuffle(labels)
    imgs = np.stack([toy_class_image(rng, int(k), num_classes, size) for k in labels])
    return torch.from_numpy(imgs), torch.from_numpy(labels.astype(np.int64))


def data_root():
    return Path(os.environ.get("PERCSIM_DATA_DIR", "."))


def resolve(path):
    p = Path(path)
    return p if p.is_absolute() else data_root() / p


def folder_classification_set(path):
    """``path/<class>/*.png``; classes ordered by name."""
    root = resolve(path)
    if not root.is_dir():
        raise ConfigError(f"dataset directory {root} does not exist")
    classes = sorted(d.name for d in root.iterdir() if d.is_dir())
    imgs, labels = [], []
    for k, name in enumerate(classes):
        for f in list_images(root / name):
            imgs.append(load_png(f))
            labels.append(k)
    if not imgs:
        raise ConfigError(f"dataset {root} is empty")
    return torch.stack(imgs), torch.tensor(labels, dtype=torch.int64)


def load_dataset(desc, split="train"):
    """Build (images, labels) from a dataset description dict."""
    kind = desc.get("kind", "toy")
    if kind == "toy":
        n = desc.get("n_train", 512) if split == "train" else desc.get("n_val", 128)
        seed = desc.get("seed", 0) + (0 if split == "train" else 10_000)
        return toy_classification_set(n, desc.get("num_classes", 10), desc.get("size", 64), seed)
    if kind == "folder":
        if split not in desc:
            raise ConfigError(f"dataset description lacks a {split!r} path")
        return folder_classification_set(desc[split])
    raise ConfigError(f"unknown dataset kind {kind!r}")


# synthetic 2AFC judgments -------------------------------------------------------

def _blur(img, sigma):
    from scipy import ndimage

    return np.stack([ndimage.gaussian_filter(c, sigma, mode="reflect") for c in img])


def distort(img, kind, level, rng):
    """Apply one synthetic distortion at ``level`` in (0, 1]."""
    if kind == "noise":
        out = img + rng.normal(0, 0.15 * level, size=img.shape)
    elif kind == "blur":
        out = _blur(img, 0.3 + 2.5 * level)
    elif kind == "contrast":
        m = img.mean()
        out = m + (img - m) * (1 - 0.8 * level)
    elif kind == "color":
        out = img + (rng.uniform(-1, 1, size=(3, 1, 1)) * 0.3 * level)[: img.shape[0]]
    elif kind == "blocks":
        b = 1 + int(round(7 * level))
        h, w = img.shape[-2:]
        hh, ww = h - h % b, w - w % b
        out = img.copy()
        blk = img[:, :hh, :ww].reshape(img.shape[0], hh // b, b, ww // b, b).mean(axis=(2, 4))
        out[:, :hh, :ww] = np.repeat(np.repeat(blk, b, axis=1), b, axis=2)
    elif kind == "posterize":
        levels = max(2, int(round(32 * (1 - level))))
        out = np.round(img * (levels - 1)) / (levels - 1)
    else:
        raise ConfigError(f"unknown distortion {kind!r}")
    return np.clip(out, 0, 1).astype(np.float32)


DISTORTIONS = ("noise", "blur", "contrast", "color", "blocks", "posterize")


def synthetic_twoafc_suite(n, size=64, seed=0, observers=5, sharpness=40.0):
    """Triplets with simulated observers.

    Each observer prefers the distorted image with higher SSIM to the
    reference with probability ``sigmoid(sharpness * (ssim1 - ssim0))``;
    ``h`` is the fraction of ``observers`` preferring ``p1``.
    Returns tensors (ref, p0, p1) of shape [n,3,size,size] and h [n].
    """
    from .quality import ssim

    rng = np.random.default_rng(seed)
    refs, p0s, p1s, hs = [], [], [], []
    for _ in range(n):
        ref = synthetic_image(rng, size)
        pair = []
        for _ in range(2):
            kind = DISTORTIONS[rng.integers(len(DISTORTIONS))]
            pair.append(distort(ref, kind, rng.uniform(0.1, 1.0), rng))
        s0, s1 = ssim(ref, pair[0]), ssim(ref, pair[1])
        prob = 1.0 / (1.0 + np.exp(-sharpness * (s1 - s0)))
        hs.append(rng.binomial(observers, prob) / observers)
        refs.append(ref)
        p0s.append(pair[0])
        p1s.append(pair[1])
    return (torch.from_numpy(np.stack(refs)), torch.from_numpy(np.stack(p0s)),
            torch.from_numpy(np.stack(p1s)), torch.tensor(hs, dtype=torch.float64))
