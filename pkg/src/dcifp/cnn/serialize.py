"""Binary model container.

Layout (all integers little-endian)::

    offset  size  content
    0       8     magic b"DCIFPMDL"
    8       2     uint16 format version (currently 1)
    10      4     uint32 header length H
    14      H     UTF-8 JSON header, keys sorted
    14+H    ...   parameter arrays, C order, in header["params"] order
    end-32  32    SHA-256 of every preceding byte

The header holds the layer plan (W, n_features, n_classes, padding, layers),
the class order, the feature scaling constants, training metadata and one
``{"name", "shape", "dtype"}`` entry per parameter array.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..features import FeatureScaling
from .model import ModelSpec, build_model
from .train import ModelBundle

MAGIC = b"DCIFPMDL"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sHI")


class ModelFormatError(ValueError):
    pass


def dumps(bundle: ModelBundle) -> bytes:
    net = bundle.network
    weights = net.get_weights()
    params = [{"name": n, "shape": list(w.shape), "dtype": w.dtype.newbyteorder("<").str}
              for n, w in zip(net.param_names(), weights)]
    header = dict(format_version=FORMAT_VERSION, spec=bundle.spec.to_dict(),
                  class_order=list(bundle.class_order), scaling=bundle.scaling.as_dict(),
                  train=bundle.train_meta, params=params)
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = bytearray(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(hbytes)))
    body += hbytes
    for w, p in zip(weights, params):
        body += np.ascontiguousarray(w, dtype=p["dtype"]).tobytes()
    body += hashlib.sha256(body).digest()
    return bytes(body)


def loads(data: bytes) -> ModelBundle:
    if len(data) < _PREFIX.size + 32:
        raise ModelFormatError("file too short")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {version}")
    if hashlib.sha256(data[:-32]).digest() != data[-32:]:
        raise ModelFormatError("checksum mismatch (truncated or corrupt file)")
    off = _PREFIX.size
    try:
        header = json.loads(data[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFormatError(f"bad header: {e}") from e
    off += hlen
    spec = ModelSpec.from_dict(header["spec"])
    if spec != build_model(spec.W, spec.n_features, spec.n_classes):
        raise ModelFormatError("layer plan does not match this version's architecture")
    weights = []
    for p in header["params"]:
        dt = np.dtype(p["dtype"])
        n = int(np.prod(p["shape"])) * dt.itemsize
        if off + n > len(data) - 32:
            raise ModelFormatError("parameter data truncated")
        weights.append(np.frombuffer(data, dt, int(np.prod(p["shape"])), off)
                       .reshape(p["shape"]).astype(dt.newbyteorder("=")))
        off += n
    if off != len(data) - 32:
        raise ModelFormatError("trailing bytes after parameter data")
    return ModelBundle(spec, weights, header["class_order"],
                       FeatureScaling(**header["scaling"]), header.get("train", {}))


def save_model(bundle: ModelBundle, path) -> None:
    Path(path).write_bytes(dumps(bundle))


def load_model(path) -> ModelBundle:
    return loads(Path(path).read_bytes())
