"""Reference metrics, 2AFC scoring, the unitary baseline and Bjontegaard deltas."""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.interpolate import PchipInterpolator

from .errors import (ConfigError, DimensionError, DomainError, FitError,
                     PartialResultError, PreconditionError)

PSNR_CAP = 99.0


def _as_np(x):
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def psnr(x, x_hat, peak=1.0):
    a, b = _as_np(x), _as_np(x_hat)
    if a.shape != b.shape:
        raise DimensionError(f"shapes differ: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def _luma(a):
    if a.ndim == 3 and a.shape[0] == 3:
        return 0.299 * a[0] + 0.587 * a[1] + 0.114 * a[2]
    if a.ndim == 3 and a.shape[0] == 1:
        return a[0]
    if a.ndim == 2:
        return a
    raise DimensionError(f"expected [C,H,W] or [H,W], got {a.shape}")


def _gaussian_window(size=11, sigma=1.5):
    r = np.arange(size) - size // 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def ssim(x, x_hat, win=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    """Mean SSIM over valid window positions, on luminance for RGB input."""
    a, b = _luma(_as_np(x)), _luma(_as_np(x_hat))
    if a.shape != b.shape:
        raise DimensionError(f"shapes differ: {a.shape} vs {b.shape}")
    if min(a.shape) < win:
        raise DimensionError(f"image {a.shape} is smaller than the {win}x{win} window")
    g = _gaussian_window(win, sigma)

    def blur(v):
        v = ndimage.correlate1d(v, g, axis=0, mode="constant")
        v = ndimage.correlate1d(v, g, axis=1, mode="constant")
        p = win // 2
        return v[p:-p, p:-p]

    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mu_a, mu_b = blur(a), blur(b)
    saa = blur(a * a) - mu_a ** 2
    sbb = blur(b * b) - mu_b ** 2
    sab = blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


# 2AFC -------------------------------------------------------------------------

@dataclass
class TwoAFCTriplet:
    """``h`` is the fraction of observers judging ``p1`` closer to ``ref``."""

    ref: object
    p0: object
    p1: object
    h: float

    def __post_init__(self):
        if not 0.0 <= self.h <= 1.0:
            raise ConfigError(f"h={self.h} outside [0, 1]")


def two_afc_credit(d0, d1, h):
    d0, d1, h = (np.asarray(v, dtype=np.float64) for v in (d0, d1, h))
    return np.where(d1 < d0, h, np.where(d0 < d1, 1.0 - h, 0.5))


def two_afc_from_distances(d0, d1, h):
    credit = two_afc_credit(d0, d1, h)
    if credit.size == 0:
        raise ConfigError("no triplets")
    return 100.0 * float(np.mean(credit))


def two_afc_score(triplets, metric):
    """Percent agreement with human judgments; ``metric(a, b)`` is a distance."""
    triplets = list(triplets)
    if not triplets:
        raise ConfigError("no triplets")
    d0 = [float(metric(t.ref, t.p0)) for t in triplets]
    d1 = [float(metric(t.ref, t.p1)) for t in triplets]
    return two_afc_from_distances(d0, d1, [t.h for t in triplets])


# unitary baseline ---------------------------------------------------------------

def unitary_preservation_check(u, pairs, tol=1e-10):
    """Max relative change of pairwise Euclidean distance under ``u``.

    ``pairs`` is an iterable of (x1, x2) vectors or an array [P, 2, n].
    """
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise DimensionError("transform must be square")
    dev = float(np.abs(u.T @ u - np.eye(u.shape[0])).max())
    if dev > tol:
        raise PreconditionError(f"transform is not orthonormal (max |U^T U - I| = {dev:.3e})")
    p = np.asarray(pairs, dtype=np.float64)
    diff = p[:, 0, :] - p[:, 1, :]
    before = np.linalg.norm(diff, axis=1)
    after = np.linalg.norm(diff @ u.T, axis=1)
    if np.any(before == 0):
        raise DomainError("pair with identical vectors")
    return float(np.max(np.abs(after - before) / before))


# rate-distortion curves -----------------------------------------------------------

@dataclass
class RDCurve:
    label: str
    points: list = field(default_factory=list)  # (bpp, psnr)

    def __post_init__(self):
        self.points = sorted((float(r), float(d)) for r, d in self.points)
        rates = [r for r, _ in self.points]
        if any(r <= 0 for r in rates):
            raise ConfigError("bpp must be positive")
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ConfigError("bpp must be strictly increasing")

    @property
    def bpp(self):
        return np.array([p[0] for p in self.points])

    @property
    def psnr(self):
        return np.array([p[1] for p in self.points])

    def to_json(self):
        return {"label": self.label, "points": [list(p) for p in self.points]}


def collect_rd_curve(codecs, images, label="codec", min_points=4):
    """Mean bpp (from real stream lengths) and mean PSNR per quality.

    ``codecs`` maps a quality key to an object with ``compress(x) -> bytes``
    and ``decompress(bytes) -> x_hat``; ``images`` is a sequence of (name, x).
    """
    if len(codecs) < min_points:
        raise ConfigError(f"need at least {min_points} quality points, got {len(codecs)}")
    images = list(images)
    if not images:
        raise ConfigError("empty image set")
    points, partial = [], []
    for q in sorted(codecs):
        c = codecs[q]
        rates, quals = [], []
        for name, x in images:
            try:
                data = c.compress(x)
                x_hat = c.decompress(data)
            except Exception as exc:
                raise PartialResultError(f"quality {q}: compressing {name} failed: {exc}",
                                         item=name, partial=partial) from exc
            h, w = x.shape[-2:]
            rates.append(len(data) * 8.0 / (h * w))
            quals.append(psnr(x, x_hat))
        points.append((float(np.mean(rates)), float(np.mean(quals))))
        partial.append(points[-1])
    return RDCurve(label, points)


class RawCodec:
    """Stores samples verbatim at ``bit_depth`` bits (8, 16, 24 or 32)."""

    def __init__(self, bit_depth=8):
        if bit_depth % 8 or not 8 <= bit_depth <= 32:
            raise ConfigError("bit depth must be 8, 16, 24 or 32")
        self.bit_depth = bit_depth
        self._shape = None

    def compress(self, x):
        a = _as_np(x)
        self._shape = a.shape
        levels = (1 << self.bit_depth) - 1
        q = np.rint(np.clip(a, 0, 1) * levels).astype("<u8")
        nb = self.bit_depth // 8
        return q.view(np.uint8).reshape(-1, 8)[:, :nb].tobytes()

    def decompress(self, data):
        nb = self.bit_depth // 8
        raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, nb)
        full = np.zeros((raw.shape[0], 8), dtype=np.uint8)
        full[:, :nb] = raw
        q = full.view("<u8").ravel().astype(np.float64)
        return (q / ((1 << self.bit_depth) - 1)).reshape(self._shape)


class NeuralCodecAdapter:
    """Gives a trained :class:`~percsim.codec.models.Codec` the compress/decompress protocol."""

    def __init__(self, codec, quality=0):
        self.codec = codec.eval()
        self.quality = quality

    def compress(self, x):
        from .codec.bitstream import compress

        return compress(self.codec, x, self.quality)[0]

    def decompress(self, data):
        from .codec.bitstream import decompress

        return decompress(self.codec, data)


# Bjontegaard deltas -------------------------------------------------------------

FIT_RESIDUAL_MAX = 1e-3


def _fit_integral(xs, ys, lo, hi):
    """Integral over [lo, hi] of a cubic least-squares fit of ys(xs).

    Falls back to a monotone piecewise-cubic interpolant when the cubic's RMS
    residual exceeds ``FIT_RESIDUAL_MAX``.
    """
    coeffs = np.polyfit(xs, ys, 3)
    resid = np.sqrt(np.mean((np.polyval(coeffs, xs) - ys) ** 2))
    if resid <= FIT_RESIDUAL_MAX:
        anti = np.polyint(coeffs)
        return float(np.polyval(anti, hi) - np.polyval(anti, lo))
    order = np.argsort(xs)
    return float(PchipInterpolator(xs[order], ys[order]).integrate(lo, hi))


def bd_delta(anchor, test, mode="rate"):
    """BD-rate (percent) or BD-PSNR (dB) of ``test`` relative to ``anchor``."""
    for c in (anchor, test):
        if len(c.points) < 4:
            raise FitError(f"curve {c.label!r} has {len(c.points)} points; 4 are needed")
    la, lt = np.log10(anchor.bpp), np.log10(test.bpp)
    pa, pt = anchor.psnr, test.psnr
    if mode == "psnr":
        lo, hi = max(la.min(), lt.min()), min(la.max(), lt.max())
        if hi <= lo:
            raise DomainError("curves share no rate interval")
        gap = (_fit_integral(lt, pt, lo, hi) - _fit_integral(la, pa, lo, hi)) / (hi - lo)
        return gap
    if mode == "rate":
        lo, hi = max(pa.min(), pt.min()), min(pa.max(), pt.max())
        if hi <= lo:
            raise DomainError("curves share no PSNR interval")
        gap = (_fit_integral(pt, lt, lo, hi) - _fit_integral(pa, la, lo, hi)) / (hi - lo)
        return (10.0 ** gap - 1.0) * 100.0
    raise ConfigError(f"unknown BD mode {mode!r}")
