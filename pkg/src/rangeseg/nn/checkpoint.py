"""
``RSWT`` weight files.

Layout (little-endian): ``b"RSWT"``, ``u32`` entry count, then per entry a
``u16`` name length, the UTF-8 name, ``u32`` rank, ``rank`` x ``u32`` dims and
the float32 data in C order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from rangeseg._atomic import atomic_write_bytes
from rangeseg.errors import BadMagicError, DataError, ShapeMismatchError, SizeMismatchError

RSWT_MAGIC = b"RSWT"


def state_to_bytes(state: dict) -> bytes:
    parts = [RSWT_MAGIC, struct.pack("<I", len(state))]
    for name, arr in state.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f4").tobytes())
    return b"".join(parts)


def state_from_bytes(payload: bytes) -> dict:
    if payload[:4] != RSWT_MAGIC:
        raise BadMagicError(f"expected magic {RSWT_MAGIC!r}, found {payload[:4]!r}")
    try:
        (count,) = struct.unpack_from("<I", payload, 4)
        off = 8
        state = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", payload, off)
            off += 2
            name = payload[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", payload, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}I", payload, off)
            off += 4 * rank
            n = int(np.prod(dims, dtype=np.int64))
            if off + 4 * n > len(payload):
                raise SizeMismatchError(f"entry {name!r} runs past end of file")
            state[name] = np.frombuffer(payload, "<f4", n, off).reshape(dims).astype(np.float32)
            off += 4 * n
    except struct.error as exc:
        raise SizeMismatchError(f"truncated weight file: {exc}") from None
    if off != len(payload):
        raise SizeMismatchError(f"{len(payload) - off} trailing bytes in weight file")
    return state


def save_checkpoint(path, module) -> None:
    atomic_write_bytes(path, state_to_bytes(module.state()))


def load_state_into(module, state: dict) -> None:
    """Copy arrays from ``state`` into ``module`` in place; names must match exactly."""
    target = module.state()
    missing = set(target) - set(state)
    extra = set(state) - set(target)
    if missing or extra:
        raise DataError(f"checkpoint mismatch: missing {sorted(missing)[:5]}, "
                        f"unexpected {sorted(extra)[:5]}")
    for name, arr in target.items():
        src = state[name]
        if src.shape != arr.shape:
            raise ShapeMismatchError(f"{name}: checkpoint shape {src.shape} vs model {arr.shape}")
        arr[...] = src


def load_checkpoint(path, module) -> None:
    try:
        load_state_into(module, state_from_bytes(Path(path).read_bytes()))
    except DataError as exc:
        raise type(exc)(f"{path}: {exc}") from None
