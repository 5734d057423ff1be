"""Entropy coding backend.

The compiled kernel is used when it was built; otherwise the pure-Python
coder is used. Both produce identical bytes. Set ``PERCSIM_PURE_PYTHON=1``
to force the fallback.
"""

import os

from . import _pycoder

PRECISION = _pycoder.PRECISION

_ext = None
if not os.environ.get("PERCSIM_PURE_PYTHON"):
    try:
        from . import _rangecoder as _ext
    except ImportError:  # extension not built
        _ext = None

BACKEND = "cython" if _ext is not None else "python"
_impl = _ext if _ext is not None else _pycoder


def encode_indexed(symbols, indexes, cdfs, cdf_sizes, offsets):
    """Range-code ``symbols``; element ``i`` uses table ``indexes[i]``.

    ``cdfs`` is an int32 ``[T, L]`` array of 16-bit cumulative frequencies
    whose row ``t`` holds ``cdf_sizes[t]`` valid entries; the last symbol of
    each row is the escape symbol. ``offsets[t]`` is the value mapped to
    symbol 0 of row ``t``.
    """
    return _impl.encode_indexed(symbols, indexes, cdfs, cdf_sizes, offsets)


def decode_indexed(data, indexes, cdfs, cdf_sizes, offsets):
    return _impl.decode_indexed(data, indexes, cdfs, cdf_sizes, offsets)


def backends():
    """Map of available backend name to module."""
    out = {"python": _pycoder}
    if _ext is not None:
        out["cython"] = _ext
    return out
