"""Loading 2AFC triplet sets, RD anchor curves and image directories."""

import csv
import logging
import warnings
from pathlib import Path

import numpy as np

from .data import resolve
from .errors import ConfigError, ManifestError
from .ioutil import IMAGE_SUFFIXES, list_images, load_png
from .quality import RDCurve, TwoAFCTriplet

log = logging.getLogger(__name__)

KINDS = ("twoafc_csv", "twoafc_native", "rd_csv", "image_dir")


def load_manifest(path, kind):
    """Typed records from ``path``.

    ``twoafc_csv``/``twoafc_native`` give :class:`TwoAFCTriplet` lists holding
    image paths, ``rd_csv`` gives (bpp, psnr) tuples and ``image_dir`` gives
    (name, path) pairs.
    """
    if kind not in KINDS:
        raise ManifestError(f"unknown manifest kind {kind!r}")
    p = resolve(path)
    if not p.exists():
        raise ManifestError(f"{p} does not exist")
    return {"twoafc_csv": _twoafc_csv, "twoafc_native": _twoafc_native,
            "rd_csv": _rd_csv, "image_dir": _image_dir}[kind](p)


def _read_rows(p):
    try:
        text = p.read_text()
    except OSError as exc:
        raise ManifestError(f"cannot read {p}: {exc}") from None
    rows = [(i, r) for i, r in enumerate(csv.reader(text.splitlines()), start=1) if r and any(c.strip() for c in r)]
    if not rows:
        warnings.warn(f"manifest {p} is empty", stacklevel=3)
    return rows


def _is_header(row, names):
    return [c.strip().lower() for c in row] == list(names)


def _twoafc_csv(p):
    rows = _read_rows(p)
    if rows and _is_header(rows[0][1], ("ref", "p0", "p1", "h")):
        rows = rows[1:]
    out, bad = [], []
    for line, r in rows:
        if len(r) != 4:
            bad.append(f"line {line}: expected 4 fields, got {len(r)}")
            continue
        try:
            h = float(r[3])
        except ValueError:
            bad.append(f"line {line}: h {r[3]!r} is not a number")
            continue
        if not 0.0 <= h <= 1.0:
            bad.append(f"line {line}: h={h} outside [0, 1]")
            continue
        ref, p0, p1 = (str(_rel(p.parent, c.strip())) for c in r[:3])
        out.append(TwoAFCTriplet(ref, p0, p1, h))
    if bad:
        raise ManifestError(f"{p}: malformed rows\n" + "\n".join(bad))
    return out


def _rel(base, name):
    q = Path(name)
    return q if q.is_absolute() else base / q


def _read_judge(f):
    if f.suffix == ".npy":
        return float(np.asarray(np.load(f)).reshape(-1)[0])
    return float(f.read_text().strip())


def _twoafc_native(root):
    """``ref/``, ``p0/``, ``p1/`` image folders and ``judge/`` holding one real per sample.

    The judgment is the fraction of observers preferring ``p1``.
    """
    for sub in ("ref", "p0", "p1", "judge"):
        if not (root / sub).is_dir():
            raise ManifestError(f"{root} lacks the {sub}/ folder")
    judges = {f.stem: f for f in sorted((root / "judge").iterdir()) if f.suffix in (".npy", ".txt")}
    out, bad = [], []
    for ref in list_images(root / "ref"):
        stem = ref.stem
        parts = [root / sub / ref.name for sub in ("p0", "p1")]
        if not all(q.exists() for q in parts) or stem not in judges:
            bad.append(f"sample {stem}: missing p0/p1 image or judgment")
            continue
        h = _read_judge(judges[stem])
        if not 0.0 <= h <= 1.0:
            bad.append(f"sample {stem}: h={h} outside [0, 1]")
            continue
        out.append(TwoAFCTriplet(str(ref), str(parts[0]), str(parts[1]), h))
    if bad:
        raise ManifestError(f"{root}: malformed samples\n" + "\n".join(bad))
    if not out:
        warnings.warn(f"native 2AFC directory {root} is empty", stacklevel=3)
    return out


def _rd_csv(p):
    rows = _read_rows(p)
    if rows and _is_header(rows[0][1], ("bpp", "psnr")):
        rows = rows[1:]
    out, bad = [], []
    for line, r in rows:
        try:
            bpp, q = float(r[0]), float(r[1])
            if len(r) != 2 or bpp <= 0:
                raise ValueError
        except (ValueError, IndexError):
            bad.append(f"line {line}: expected positive bpp and psnr")
            continue
        out.append((bpp, q))
    if bad:
        raise ManifestError(f"{p}: malformed rows\n" + "\n".join(bad))
    return out


def _image_dir(p):
    if not p.is_dir():
        raise ManifestError(f"{p} is not a directory")
    return [(f.name, str(f)) for f in list_images(p)]


def load_rd_curve(path, label=None):
    return RDCurve(label or Path(path).stem, load_manifest(path, "rd_csv"))


def load_triplet_images(triplets):
    """Decode path-based triplets into image tensors."""
    out = []
    for t in triplets:
        imgs = [load_png(x) if isinstance(x, (str, Path)) else x for x in (t.ref, t.p0, t.p1)]
        if not (imgs[0].shape == imgs[1].shape == imgs[2].shape):
            raise ConfigError(f"triplet {t.ref} has mismatched image sizes")
        out.append(TwoAFCTriplet(imgs[0], imgs[1], imgs[2], t.h))
    return out


def write_rd_csv(path, curve):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["bpp", "psnr"])
        for r, q in curve.points:
            w.writerow([repr(r), repr(q)])
