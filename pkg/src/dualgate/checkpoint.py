"""Binary checkpoint format.

Layout (little-endian)::

    b"VDG1"
    repeated: name_len u32 | name utf-8 | dtype u8 | rank u8 | dims u32*rank | payload
    name_len u32 = 0                       end of records
    epoch u32 | rng seed u64 | rng counter u64 | config_len u32 | config utf-8

Payloads are raw float32. The counter-based RNG needs only the run seed
and the number of completed optimisation steps to resume.
"""
from __future__ import annotations

from dataclasses import dataclass
import os
from pathlib import Path
import struct

import numpy as np

from .errors import ContractError

MAGIC = b"VDG1"
DTYPE_CODES = {1: np.dtype("<f4")}
_CODE_OF = {v: k for k, v in DTYPE_CODES.items()}


@dataclass
class Checkpoint:
    arrays: dict
    epoch: int
    rng_seed: int
    rng_counter: int
    config_text: str


def encode(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC]
    for name, arr in ckpt.arrays.items():
        arr = np.asarray(arr)
        if arr.dtype.kind != "f":
            raise ContractError(f"checkpoint array {name!r} is not floating point")
        data = np.array(arr, dtype="<f4", order="C")
        if not np.array_equal(data, arr):
            raise ContractError(f"checkpoint array {name!r} does not round-trip through float32")
        raw = name.encode("utf-8")
        if not raw:
            raise ContractError("checkpoint array names must be non-empty")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<BB", _CODE_OF[data.dtype], data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(data.tobytes())
    text = ckpt.config_text.encode("utf-8")
    parts.append(struct.pack("<IIQQI", 0, ckpt.epoch, ckpt.rng_seed & (2**64 - 1),
                             ckpt.rng_counter, len(text)))
    parts.append(text)
    return b"".join(parts)


def decode(blob: bytes) -> Checkpoint:
    if blob[:4] != MAGIC:
        raise ContractError("not a checkpoint file (bad magic)")
    pos = 4
    arrays = {}

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise ContractError("truncated checkpoint")
        out = blob[pos:pos + n]
        pos += n
        return out

    while True:
        (name_len,) = struct.unpack("<I", take(4))
        if name_len == 0:
            break
        name = take(name_len).decode("utf-8")
        code, rank = struct.unpack("<BB", take(2))
        if code not in DTYPE_CODES:
            raise ContractError(f"unknown dtype code {code} for {name!r}")
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        dtype = DTYPE_CODES[code]
        count = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(take(count * dtype.itemsize), dtype=dtype).reshape(shape).astype(np.float32)
    epoch, seed, counter, text_len = struct.unpack("<IQQI", take(24))
    text = take(text_len).decode("utf-8")
    if pos != len(blob):
        raise ContractError("trailing bytes after checkpoint trailer")
    return Checkpoint(arrays, epoch, seed, counter, text)


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    atomic_write_bytes(path, encode(ckpt))


def load_checkpoint(path) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise ContractError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return decode(blob)


def encoder_state(encoder) -> dict:
    """Every parameter plus the running statistics of every batch norm."""
    state = {name: p.data for name, p in encoder.named_parameters()}
    for name, bn in encoder.bn_states().items():
        state[f"{name}.running_mean"] = bn.running_mean
        state[f"{name}.running_var"] = bn.running_var
    return state


def load_encoder_state(encoder, arrays: dict) -> None:
    expected = encoder_state(encoder)
    missing = sorted(set(expected) - set(arrays))
    if missing:
        raise ContractError(f"checkpoint lacks {len(missing)} arrays, e.g. {missing[0]!r}")
    params = dict(encoder.named_parameters())
    for name, p in params.items():
        if arrays[name].shape != p.data.shape:
            raise ContractError(f"shape mismatch for {name!r}")
        p.data = arrays[name].astype(p.data.dtype).copy()
    for name, bn in encoder.bn_states().items():
        bn.running_mean = arrays[f"{name}.running_mean"].copy()
        bn.running_var = arrays[f"{name}.running_var"].copy()
