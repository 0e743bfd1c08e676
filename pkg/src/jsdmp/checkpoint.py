"""Binary model checkpoints with a human-readable sidecar manifest.

Layout (all integers little-endian)::

    magic    8 bytes  b"JSDMPCK\\0"
    version  u32
    meta     u32 length + UTF-8 JSON (model kind, config, node count, extras)
    count    u32
    count x  [u16 name length, name, u32 rows, u32 cols]
    blocks   rows*cols float64 values per parameter, row-major, in header order
    crc32    u32 over every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .models import model_from_config

MAGIC = b"JSDMPCK\0"
VERSION = 1


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest.txt")


def save_checkpoint(path, model, extra: dict | None = None) -> None:
    meta = {"kind": model.kind, "config": model.config_dict(), "n_nodes": model.n_nodes, "extra": extra or {}}
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta_bytes)), meta_bytes, struct.pack("<I", len(model.params))]
    for name, arr in model.params.items():
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<II", *arr.shape))
    for arr in model.params.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))

    lines = [f"format\tjsdmp-checkpoint v{VERSION}", f"kind\t{model.kind}", f"n_nodes\t{model.n_nodes}"]
    lines += [f"config.{k}\t{v}" for k, v in model.config_dict().items()]
    lines += [f"param\t{name}\t{arr.shape[0]}x{arr.shape[1]}" for name, arr in model.params.items()]
    manifest_path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path):
    """Return ``(model, meta)``; any structural problem raises :class:`CheckpointError`."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    if len(data) < len(MAGIC) + 16 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a jsdmp checkpoint (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupted")
    try:
        pos = len(MAGIC)
        version, meta_len = struct.unpack_from("<II", body, pos)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        pos += 8
        meta = json.loads(body[pos : pos + meta_len])
        pos += meta_len
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        shapes = []
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos : pos + name_len].decode()
            pos += name_len
            rows, cols = struct.unpack_from("<II", body, pos)
            pos += 8
            shapes.append((name, rows, cols))
        arrays = {}
        for name, rows, cols in shapes:
            nbytes = rows * cols * 8
            if pos + nbytes > len(body):
                raise CheckpointError(f"{path}: truncated data for parameter {name!r}")
            arrays[name] = np.frombuffer(body, dtype="<f8", count=rows * cols, offset=pos).reshape(rows, cols).copy()
            pos += nbytes
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed header ({exc})") from None

    model = model_from_config(meta["kind"], meta["config"], meta["n_nodes"])
    for name, arr in model.params.items():
        if name not in arrays:
            raise CheckpointError(f"{path}: missing parameter {name!r}")
        if arrays[name].shape != arr.shape:
            raise CheckpointError(f"{path}: parameter {name!r} has shape {arrays[name].shape}, expected {arr.shape}")
    model.params = {name: arrays[name] for name in model.params}
    return model, meta


def check_compatible(model, n_nodes: int, n_features: int, n_classes: int) -> None:
    """Raise naming the first parameter whose shape disagrees with the dataset."""
    c = model.config
    first = "layer0.W_f" if model.kind == "dmpgcn" else "mlp.W1"
    if c.in_dim != n_features:
        raise CheckpointError(
            f"parameter {first!r} expects {c.in_dim} input features, dataset has {n_features}"
        )
    if model.n_nodes != n_nodes:
        raise CheckpointError(f"parameter 'X_base' has {model.n_nodes} rows, dataset has {n_nodes} nodes")
    if c.n_classes != n_classes:
        last = f"layer{c.n_layers - 1}.W_f" if model.kind == "dmpgcn" else "mlp.W2"
        raise CheckpointError(f"parameter {last!r} outputs {c.n_classes} classes, dataset has {n_classes}")
