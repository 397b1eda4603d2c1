"""Bit-exact checkpoint serialization.

Format: magic ``QGN1``, u32 tensor count, then per tensor: u16 name length,
UTF-8 name, u8 rank, rank x u32 dims, 32-bit little-endian float payload.
Everything a run needs to resume (parameters, normalization state, optimizer
moments, RNG streams, iteration counter, config) is framed as tensors;
non-float state is packed losslessly into f32-representable integers.
Tensors are written sorted by name so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import CheckpointError

__all__ = [
    "save_tensors",
    "load_tensors",
    "pack_text",
    "unpack_text",
    "pack_rng_state",
    "unpack_rng_state",
]

MAGIC = b"QGN1"


def save_tensors(path, tensors: dict[str, np.ndarray]):
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", len(tensors))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {name[:40]}...")
        blob += struct.pack("<H", len(raw))
        blob += raw
        blob += struct.pack("<B", arr.ndim)
        for d in arr.shape:
            blob += struct.pack("<I", d)
        blob += arr.tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {data[:4]!r}", offset=0)
    pos = 4
    (count,) = _unpack(data, "<I", pos)
    pos += 4
    out = {}
    for _ in range(count):
        (nlen,) = _unpack(data, "<H", pos)
        pos += 2
        if pos + nlen > len(data):
            raise CheckpointError("truncated tensor name", offset=pos)
        name = data[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = _unpack(data, "<B", pos)
        pos += 1
        dims = []
        for _ in range(rank):
            (d,) = _unpack(data, "<I", pos)
            pos += 4
            dims.append(d)
        n = int(np.prod(dims, dtype=np.int64)) if dims else 1
        nbytes = 4 * n
        if pos + nbytes > len(data):
            raise CheckpointError(
                f"truncated payload for tensor {name!r}", offset=pos
            )
        out[name] = np.frombuffer(data[pos : pos + nbytes], dtype="<f4").reshape(dims)
        pos += nbytes
    if pos != len(data):
        raise CheckpointError(f"{len(data) - pos} trailing bytes", offset=pos)
    return out


def _unpack(data: bytes, fmt: str, pos: int):
    size = struct.calcsize(fmt)
    if pos + size > len(data):
        raise CheckpointError("unexpected end of file", offset=pos)
    return struct.unpack_from(fmt, data, pos)


# -- lossless packing of non-float state into f32 tensors ---------------------------


def pack_text(text: str) -> np.ndarray:
    """UTF-8 bytes as f32 values (each in [0, 255], exactly representable)."""
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float32)


def unpack_text(arr: np.ndarray) -> str:
    return np.asarray(arr).astype(np.uint8).tobytes().decode("utf-8")


def _int_to_limbs(value: int, limbs: int) -> list[float]:
    return [float((value >> (16 * i)) & 0xFFFF) for i in range(limbs)]


def _limbs_to_int(vals) -> int:
    return sum(int(round(v)) << (16 * i) for i, v in enumerate(vals))


def pack_rng_state(gen: np.random.Generator) -> np.ndarray:
    """PCG64 state as 16-bit limbs (exactly representable in f32)."""
    st = gen.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise CheckpointError(f"unsupported bit generator {st['bit_generator']!r}")
    vals = (
        _int_to_limbs(st["state"]["state"], 8)
        + _int_to_limbs(st["state"]["inc"], 8)
        + [float(st["has_uint32"])]
        + _int_to_limbs(st["uinteger"], 2)
    )
    return np.array(vals, dtype=np.float32)


def unpack_rng_state(arr: np.ndarray) -> np.random.Generator:
    vals = np.asarray(arr, dtype=np.float64)
    gen = np.random.default_rng(0)
    gen.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": _limbs_to_int(vals[:8]), "inc": _limbs_to_int(vals[8:16])},
        "has_uint32": int(round(vals[16])),
        "uinteger": _limbs_to_int(vals[17:19]),
    }
    return gen


def config_to_json(config) -> str:
    return json.dumps(config, sort_keys=True)
