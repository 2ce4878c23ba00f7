"""Checkpoint files: a text header with the config, then named tensors.

Layout::

    RANKLSD-CKPT 1\\n
    <canonical key = value config text>
    ---\\n
    repeated: u32 name length, utf-8 name, one RLT1 tensor record

Parameters are stored under their module path; optional extra arrays (for
example optimizer moments) use a distinct prefix and are ignored by
:func:`load_model`.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .. import tensor as T
from ..tensor import Tensor

MAGIC_LINE = b"RANKLSD-CKPT 1\n"
SEPARATOR = b"---\n"


class CheckpointError(ValueError):
    pass


def encode(config_text: str, tensors: dict[str, np.ndarray]) -> bytes:
    if SEPARATOR.decode() in config_text.splitlines(keepends=True):
        raise CheckpointError("config text may not contain the separator line")
    parts = [MAGIC_LINE, config_text.encode("utf-8"), SEPARATOR]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(T.to_bytes(Tensor._wrap(np.ascontiguousarray(arr, dtype=np.float64))))
    return b"".join(parts)


def decode(buf: bytes) -> tuple[str, dict[str, np.ndarray]]:
    if not buf.startswith(MAGIC_LINE):
        raise CheckpointError("not a checkpoint file")
    sep = buf.find(b"\n" + SEPARATOR, len(MAGIC_LINE) - 1)
    if sep < 0:
        raise CheckpointError("missing header separator")
    header = buf[len(MAGIC_LINE) : sep + 1].decode("utf-8")
    pos = sep + 1 + len(SEPARATOR)
    tensors: dict[str, np.ndarray] = {}
    while pos < len(buf):
        if pos + 4 > len(buf):
            raise CheckpointError("truncated tensor name")
        (n,) = struct.unpack_from("<I", buf, pos)
        name = buf[pos + 4 : pos + 4 + n].decode("utf-8")
        try:
            t, pos = T.from_bytes(buf, pos + 4 + n)
        except T.TensorError as err:
            raise CheckpointError(f"tensor {name!r}: {err}") from err
        if name in tensors:
            raise CheckpointError(f"duplicate tensor {name!r}")
        tensors[name] = t.data
    return header, tensors


def save(path, config_text: str, model, extra: dict[str, np.ndarray] | None = None) -> None:
    tensors = {name: p.data for name, p in model.named_parameters()}
    for k, v in (extra or {}).items():
        if k in tensors:
            raise CheckpointError(f"extra array {k!r} collides with a parameter")
        tensors[k] = v
    Path(path).write_bytes(encode(config_text, tensors))


def read(path) -> tuple[str, dict[str, np.ndarray]]:
    return decode(Path(path).read_bytes())


def load_into(model, tensors: dict[str, np.ndarray]) -> None:
    """Copy stored parameter values into ``model`` in place."""
    named = dict(model.named_parameters())
    missing = sorted(set(named) - set(tensors))
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {missing[:5]}")
    for name, p in named.items():
        arr = tensors[name]
        if arr.shape != p.shape:
            raise CheckpointError(f"{name}: stored shape {arr.shape} != model shape {p.shape}")
        p.data[...] = arr
        p.mark_dirty()
