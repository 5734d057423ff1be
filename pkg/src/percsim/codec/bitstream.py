"""Entropy-coded latents and the CPIP container.

Container: ``b"CPIP"``, version u8, model-hash u32, width u16, height u16,
quality u8, u32-length-prefixed z stream, u32-length-prefixed y stream, and a
CRC32 of everything before it. All integers little-endian.
"""

import struct
import zlib

import numpy as np
import torch

from .. import entropy
from ..errors import DecodeError, DimensionError
from .entropy_models import LatentCode, gaussian_likelihood
from .tables import GaussianTables, factorized_tables

MAGIC = b"CPIP"
VERSION = 1
_HEADER = struct.Struct("<4sBIHHB")

_gaussian_cache = {}


def gaussian_tables(sigma_min):
    if sigma_min not in _gaussian_cache:
        _gaussian_cache[sigma_min] = GaussianTables(sigma_min=sigma_min)
    return _gaussian_cache[sigma_min]


def model_hash(codec):
    crc = 0
    for k, v in codec.state_dict().items():
        crc = zlib.crc32(k.encode(), crc)
        crc = zlib.crc32(np.ascontiguousarray(v.detach().cpu().float().numpy()).tobytes(), crc)
    return crc & 0xFFFFFFFF


def _to_int(t):
    a = t.detach().cpu().double().numpy()
    if not np.all(a == np.round(a)):
        raise DimensionError("entropy coding needs integer-valued (round mode) latents")
    return a.astype(np.int32)


def _channel_indexes(shape):
    # shape [C, H, W] -> channel id of each element in C-order
    c = shape[0]
    return np.repeat(np.arange(c, dtype=np.int32), int(np.prod(shape[1:])))


@torch.no_grad()
def _y_indexes(codec, z_hat, tables):
    if z_hat.numel() == 0:  # degenerate empty latent
        return np.zeros(0, dtype=np.int32)
    sigma = codec.scales(z_hat)
    return tables.indexes(sigma[0].cpu().numpy()).ravel()


@torch.no_grad()
def entropy_code(codec, code):
    """Serialize a round-mode code of a single image into two length-prefixed streams."""
    if code.y.ndim == 4:
        if code.y.shape[0] != 1:
            raise DimensionError("entropy coding handles one image at a time")
        y, z = code.y[0], code.z[0]
    else:
        y, z = code.y, code.z
    zi, yi = _to_int(z), _to_int(y)
    fcdf, fsize, foff = factorized_tables(codec.entropy_bottleneck)
    z_stream = entropy.encode_indexed(zi.ravel(), _channel_indexes(zi.shape), fcdf, fsize, foff)
    gt = gaussian_tables(codec.sigma_min)
    z_hat = torch.from_numpy(zi.astype(np.float32)).unsqueeze(0)
    y_stream = entropy.encode_indexed(yi.ravel(), _y_indexes(codec, z_hat, gt), gt.cdfs, gt.sizes, gt.offsets)
    return struct.pack("<I", len(z_stream)) + z_stream + struct.pack("<I", len(y_stream)) + y_stream


def _split_streams(data, pos=0):
    try:
        (nz,) = struct.unpack_from("<I", data, pos)
        z_stream = data[pos + 4: pos + 4 + nz]
        pos += 4 + nz
        (ny,) = struct.unpack_from("<I", data, pos)
        y_stream = data[pos + 4: pos + 4 + ny]
        pos += 4 + ny
    except struct.error:
        raise DecodeError("truncated stream") from None
    if len(z_stream) != nz or len(y_stream) != ny:
        raise DecodeError("truncated stream")
    return z_stream, y_stream, pos


def latent_shapes(codec, dims):
    mult = codec.spec.pad_multiple
    hp = -(-dims[0] // mult) * mult
    wp = -(-dims[1] // mult) * mult
    f = codec.spec.downsampling
    return ((codec.spec.latent_channels, hp // f, wp // f),
            (codec.spec.hyper_channels, hp // (4 * f), wp // (4 * f)))


@torch.no_grad()
def entropy_decode(codec, data, dims):
    """Inverse of :func:`entropy_code` for an image of size ``dims`` = (H, W)."""
    z_stream, y_stream, _ = _split_streams(data)
    y_shape, z_shape = latent_shapes(codec, dims)
    return _decode_streams(codec, z_stream, y_stream, y_shape, z_shape)


def _decode_streams(codec, z_stream, y_stream, y_shape, z_shape):
    fcdf, fsize, foff = factorized_tables(codec.entropy_bottleneck)
    try:
        zi = entropy.decode_indexed(z_stream, _channel_indexes(z_shape), fcdf, fsize, foff)
        z_hat = torch.from_numpy(zi.reshape(z_shape).astype(np.float32)).unsqueeze(0)
        gt = gaussian_tables(codec.sigma_min)
        yi = entropy.decode_indexed(y_stream, _y_indexes(codec, z_hat, gt), gt.cdfs, gt.sizes, gt.offsets)
    except ValueError as exc:
        raise DecodeError(str(exc)) from None
    y_hat = torch.from_numpy(yi.reshape(y_shape).astype(np.float32)).unsqueeze(0)
    sigma = codec.scales(z_hat) if z_hat.numel() else torch.ones_like(y_hat)
    return LatentCode(y=y_hat, z=z_hat,
                      y_likelihoods=gaussian_likelihood(y_hat, sigma, codec.sigma_min),
                      z_likelihoods=codec.entropy_bottleneck.likelihood(z_hat), mode="round")


@torch.no_grad()
def compress(codec, x, quality=0):
    """Compress one image [C,H,W] in [0,1]. Returns (bytes, encoder-side reconstruction)."""
    if x.ndim == 4:
        if x.shape[0] != 1:
            raise DimensionError("compress handles one image at a time")
        x = x[0]
    h, w = x.shape[-2:]
    if h > 0xFFFF or w > 0xFFFF:
        raise DimensionError("image dimensions exceed 16 bits")
    out = codec(x.unsqueeze(0), mode="round")
    payload = entropy_code(codec, out["code"])
    head = _HEADER.pack(MAGIC, VERSION, model_hash(codec), w, h, quality)
    body = head + payload
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF), out["x_hat"][0]


def read_header(data):
    if len(data) < _HEADER.size + 12:
        raise DecodeError("stream too short")
    magic, version, mhash, w, h, quality = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise DecodeError("bad magic")
    if version != VERSION:
        raise DecodeError(f"unsupported bitstream version {version}")
    return {"model_hash": mhash, "width": w, "height": h, "quality": quality}


@torch.no_grad()
def decompress(codec, data):
    """Decode a CPIP stream to an image [C,H,W]."""
    data = bytes(data)
    head = read_header(data)
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != crc:
        raise DecodeError("CRC mismatch")
    if head["model_hash"] != model_hash(codec):
        raise DecodeError("stream was produced by a different model")
    dims = (head["height"], head["width"])
    z_stream, y_stream, end = _split_streams(data, _HEADER.size)
    if end != len(data) - 4:
        raise DecodeError("trailing bytes in stream")
    y_shape, z_shape = latent_shapes(codec, dims)
    code = _decode_streams(codec, z_stream, y_stream, y_shape, z_shape)
    return codec.synthesize(code.y, dims)[0]
