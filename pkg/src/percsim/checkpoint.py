"""The NCKP tensor container.

Layout: ``b"NCKP"``, a version byte, a little-endian u32 manifest length,
the UTF-8 JSON manifest, then raw little-endian float32 blobs. Offsets in the
manifest are relative to the start of the blob section.
"""

import io
import json
import struct
from collections import OrderedDict

import numpy as np

from .errors import DecodeError

MAGIC = b"NCKP"
VERSION = 1


def dumps(tensors, meta=None):
    entries, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        a = np.ascontiguousarray(np.asarray(arr, dtype="<f4"))
        raw = a.tobytes()
        entries.append({"name": name, "dtype": "f32", "shape": list(a.shape),
                        "byte_offset": offset, "byte_len": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    manifest = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True,
                          separators=(",", ":")).encode("utf-8")
    return MAGIC + bytes([VERSION]) + struct.pack("<I", len(manifest)) + manifest + b"".join(blobs)


def loads(data):
    data = bytes(data)
    if len(data) < 9 or data[:4] != MAGIC:
        raise DecodeError("not an NCKP checkpoint")
    if data[4] != VERSION:
        raise DecodeError(f"unsupported checkpoint version {data[4]}")
    (mlen,) = struct.unpack_from("<I", data, 5)
    start = 9 + mlen
    try:
        manifest = json.loads(data[9:start].decode("utf-8"))
        manifest["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise DecodeError(f"corrupt checkpoint manifest: {exc}") from None
    tensors = OrderedDict()
    for e in manifest["tensors"]:
        if e["dtype"] != "f32":
            raise DecodeError(f"unsupported dtype {e['dtype']}")
        lo = start + e["byte_offset"]
        raw = data[lo: lo + e["byte_len"]]
        if len(raw) != e["byte_len"]:
            raise DecodeError(f"truncated tensor {e['name']}")
        tensors[e["name"]] = np.frombuffer(raw, dtype="<f4").reshape(e["shape"]).copy()
    return tensors, manifest.get("meta", {})


def save(path, tensors, meta=None):
    data = dumps(tensors, meta)
    if isinstance(path, io.IOBase):
        path.write(data)
    else:
        with open(path, "wb") as f:
            f.write(data)
    return data


def load(path):
    with open(path, "rb") as f:
        return loads(f.read())


def module_tensors(module, prefix):
    return OrderedDict((f"{prefix}.{k}", v.detach().cpu().float().numpy())
                       for k, v in module.state_dict().items())


def load_module(module, tensors, prefix):
    import torch

    sd = module.state_dict()
    new = {}
    for k, v in sd.items():
        key = f"{prefix}.{k}"
        if key not in tensors:
            raise DecodeError(f"checkpoint lacks {key}")
        new[k] = torch.from_numpy(tensors[key]).to(v.dtype).reshape(v.shape)
    module.load_state_dict(new)
    return module
