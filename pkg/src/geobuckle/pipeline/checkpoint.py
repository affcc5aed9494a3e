"""Binary checkpoint format.

Layout: 8-byte magic, little-endian uint32 format version, uint64 header
length, UTF-8 JSON header, then the raw little-endian parameter arrays in
header order. The header holds the model config, normalization statistics
and a manifest of ``{name, dtype, shape, offset, nbytes}`` entries with
offsets relative to the start of the data section.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from ..config import ModelConfig
from ..errors import CheckpointError, ShapeMismatchError
from ..model import HybridModel
from .data import NormStats

MAGIC = b"GBKLCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_DTYPES = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8")}


def save_checkpoint(model: HybridModel, stats: NormStats | None, path, extra: dict | None = None) -> Path:
    path = Path(path)
    entries, blobs, offset = [], [], 0
    for name, arr in model.params.items():
        code = "f4" if arr.dtype == np.float32 else "f8"
        data = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        entries.append({"name": name, "dtype": code, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = json.dumps({
        "config": model.config.to_json(),
        "stats": stats.to_json() if stats is not None else None,
        "params": entries,
        "extra": extra or {},
    }, sort_keys=True).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)
    os.replace(tmp, path)
    return path


def load_checkpoint(path, expect: ModelConfig | None = None) -> tuple[HybridModel, NormStats | None, dict]:
    """Return ``(model, stats, extra)``.

    Raises :class:`CheckpointError` for bad magic/version/truncation and
    :class:`ShapeMismatchError` when tensors disagree with ``expect`` (or with
    the config stored in the file).
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from None
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = _PREFIX.size + hlen
    if len(raw) < start:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[_PREFIX.size:start].decode("utf-8"))
        config = ModelConfig.from_json(header["config"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise CheckpointError(f"{path}: corrupt header ({e})") from None

    data = memoryview(raw)[start:]
    params = {}
    for e in header["params"]:
        end = e["offset"] + e["nbytes"]
        if end > len(data):
            raise CheckpointError(f"{path}: truncated data for {e['name']}")
        dtype = _DTYPES.get(e["dtype"])
        if dtype is None:
            raise CheckpointError(f"{path}: unknown dtype {e['dtype']!r}")
        arr = np.frombuffer(data[e["offset"]:end], dtype=dtype)
        if arr.size != int(np.prod(e["shape"], dtype=np.int64)):
            raise CheckpointError(f"{path}: size mismatch for {e['name']}")
        params[e["name"]] = arr.reshape(e["shape"]).astype(dtype.newbyteorder("="))
    if start + sum(e["nbytes"] for e in header["params"]) != len(raw):
        raise CheckpointError(f"{path}: trailing or missing bytes")

    target = expect if expect is not None else config
    expected = HybridModel(target, {}).expected_shapes()
    if set(expected) != set(params):
        missing = sorted(set(expected) ^ set(params))[:5]
        raise ShapeMismatchError(f"checkpoint parameters do not match config (e.g. {missing})")
    for k, shape in expected.items():
        if tuple(params[k].shape) != tuple(shape):
            raise ShapeMismatchError(f"{k}: checkpoint shape {params[k].shape}, config expects {shape}")
    model = HybridModel(config, {k: params[k] for k in expected})
    stats = NormStats.from_json(header["stats"]) if header.get("stats") else None
    return model, stats, header.get("extra", {})
