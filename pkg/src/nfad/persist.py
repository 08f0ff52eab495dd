"""Binary model files.

Layout (all integers little-endian)::

    b"NFAD1"                 magic, 5 bytes
    u16 version              currently 1
    u8  kind                 0 = flow, 1 = classifier
    u32 n_desc, bytes[n]     architecture descriptor, UTF-8 JSON
    u32 n_std                standardizer width (0 = none)
    f64[n_std] mean, f64[n_std] std
    u64 n_params, f64[n]     flattened parameters in ``model.params`` order
    u32 crc32                over every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .classifier import MlpClassifier
from .dataeval import Standardizer
from .flows import FlowStack
from .gradnet import DiffNet

MAGIC = b"NFAD1"
VERSION = 1
KINDS = {"flow": 0, "classifier": 1}


class ModelFileError(ValueError):
    pass


class ChecksumError(ModelFileError):
    pass


class VersionError(ModelFileError):
    pass


class KindError(ModelFileError):
    pass


def _flatten(params) -> np.ndarray:
    if not params:
        return np.zeros(0)
    return np.concatenate([p.ravel() for p in params])


def _unflatten(params, flat: np.ndarray) -> None:
    total = sum(p.size for p in params)
    if total != flat.size:
        raise ModelFileError(f"descriptor expects {total} parameters, file holds {flat.size}")
    at = 0
    for p in params:
        p[...] = flat[at:at + p.size].reshape(p.shape)
        at += p.size


def dumps(model, standardizer: Standardizer | None = None) -> bytes:
    if isinstance(model, FlowStack):
        kind, desc = "flow", model.describe()
    elif isinstance(model, MlpClassifier):
        kind, desc = "classifier", {"d": model.d, "net": model.net.describe()}
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    desc_bytes = json.dumps(desc, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<HB", VERSION, KINDS[kind]), struct.pack("<I", len(desc_bytes)), desc_bytes]
    if standardizer is None:
        parts.append(struct.pack("<I", 0))
    else:
        mean = np.asarray(standardizer.mean, dtype="<f8")
        std = np.asarray(standardizer.std, dtype="<f8")
        parts += [struct.pack("<I", mean.size), mean.tobytes(), std.tobytes()]
    flat = _flatten(model.params).astype("<f8")
    parts += [struct.pack("<Q", flat.size), flat.tobytes()]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def loads(data: bytes, expect_kind: str | None = None):
    """Parse a model file; returns ``(model, standardizer_or_None)``."""
    if len(data) < len(MAGIC) + 4 or zlib.crc32(data[:-4]) != struct.unpack("<I", data[-4:])[0]:
        raise ChecksumError("model file checksum mismatch (corrupt or truncated)")
    if data[:5] != MAGIC:
        raise ModelFileError("not an NFAD model file")
    version, kind_id = struct.unpack_from("<HB", data, 5)
    if version != VERSION:
        raise VersionError(f"unsupported model file version {version} (expected {VERSION})")
    kinds = {v: k for k, v in KINDS.items()}
    if kind_id not in kinds:
        raise KindError(f"unknown model kind tag {kind_id}")
    kind = kinds[kind_id]
    if expect_kind is not None and kind != expect_kind:
        raise KindError(f"expected a {expect_kind} model, file holds a {kind}")
    at = 8
    (n_desc,) = struct.unpack_from("<I", data, at)
    at += 4
    desc = json.loads(data[at:at + n_desc].decode())
    at += n_desc
    (n_std,) = struct.unpack_from("<I", data, at)
    at += 4
    standardizer = None
    if n_std:
        mean = np.frombuffer(data, dtype="<f8", count=n_std, offset=at).astype(np.float64)
        std = np.frombuffer(data, dtype="<f8", count=n_std, offset=at + 8 * n_std).astype(np.float64)
        standardizer = Standardizer(mean, std)
        at += 16 * n_std
    (n_params,) = struct.unpack_from("<Q", data, at)
    at += 8
    if at + 8 * n_params + 4 != len(data):
        raise ModelFileError("parameter block length does not match file size")
    flat = np.frombuffer(data, dtype="<f8", count=n_params, offset=at).astype(np.float64)
    if kind == "flow":
        model = FlowStack.from_description(desc)
    else:
        model = MlpClassifier(desc["d"], net=DiffNet.from_description(desc["net"]))
    _unflatten(model.params, flat)
    return model, standardizer


def save_model(path, model, standardizer: Standardizer | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(model, standardizer))


def load_model(path, expect_kind: str | None = None):
    with open(path, "rb") as fh:
        return loads(fh.read(), expect_kind)
