"""Single-file binary checkpoints.

Layout: magic ``MSFTCKPT`` | version u16 | body | CRC32(body) u32, all
little-endian. The body holds a key=value header (backbone config, mode
flags, frozen names) followed by length-prefixed parameter records
(name, dtype tag, rank, extents, raw values). Values are stored as
float32 by default; float64 is the test-mode override for bit-exact
round trips of training state. Loads verify the CRC and never return
partial state; writes go through a temp file and rename.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .backbone import BackboneConfig, ModelState
from .csvio import atomic_write_bytes

MAGIC = b"MSFTCKPT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_TAGS = {"f4": 0, "f8": 1}


class CheckpointError(ValueError):
    """Corrupt, truncated, or malformed checkpoint file."""


class VersionError(CheckpointError):
    """File was written by a newer format version."""


class IncompatibleError(ValueError):
    """Checkpoint does not match the requested model configuration."""


@dataclass
class Checkpoint:
    config: BackboneConfig
    mode_flags: dict[str, str]
    arrays: dict[str, np.ndarray]
    frozen: set[str]


def _encode_header(config: BackboneConfig, mode_flags: dict[str, str],
                   frozen: set[str]) -> bytes:
    lines = [f"{k}={v}" for k, v in config.to_dict().items()]
    for k in sorted(mode_flags):
        v = mode_flags[k]
        if "\n" in k or "=" in k or "\n" in v:
            raise ValueError(f"mode flag {k!r} contains reserved characters")
        lines.append(f"flag.{k}={v}")
    lines.append("frozen=" + ",".join(sorted(frozen)))
    return "\n".join(lines).encode("utf-8")


def _decode_header(blob: bytes) -> tuple[BackboneConfig, dict[str, str], set[str]]:
    fields: dict[str, str] = {}
    for line in blob.decode("utf-8").splitlines():
        key, _, value = line.partition("=")
        fields[key] = value
    try:
        config = BackboneConfig(
            n_layers=int(fields["n_layers"]), d_model=int(fields["d_model"]),
            n_heads=int(fields["n_heads"]), patch=int(fields["patch"]),
            ffn_mult=int(fields["ffn_mult"]), eps=float(fields["eps"]),
            rope_base=float(fields["rope_base"]))
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint header: {exc}") from None
    flags = {k[len("flag."):]: v for k, v in fields.items() if k.startswith("flag.")}
    frozen = set(filter(None, fields.get("frozen", "").split(",")))
    return config, flags, frozen


def save_checkpoint(path, state: ModelState, config: BackboneConfig,
                    mode_flags: dict[str, str] | None = None,
                    dtype: str = "f4") -> None:
    if dtype not in _DTYPE_TAGS:
        raise ValueError(f"dtype must be 'f4' or 'f8', got {dtype!r}")
    tag = _DTYPE_TAGS[dtype]
    header = _encode_header(config, mode_flags or {}, state.frozen)
    parts = [struct.pack("<I", len(header)), header,
             struct.pack("<I", len(state.params))]
    for name, p in state.params.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(p.data, dtype=_DTYPES[tag])
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", tag, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    blob = MAGIC + struct.pack("<H", VERSION) + body + struct.pack(
        "<I", zlib.crc32(body))
    atomic_write_bytes(path, blob)


class _Reader:
    def __init__(self, blob: bytes, offset: int):
        self.blob = blob
        self.pos = offset

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError("checkpoint truncated")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 2 + 4 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack("<H", blob[8:10])
    if version > VERSION:
        raise VersionError(f"{path}: format version {version} is newer than "
                           f"supported version {VERSION}")
    body = blob[10:-4]
    (crc_stored,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc_stored:
        raise CheckpointError(f"{path}: CRC mismatch, file is corrupt")
    r = _Reader(blob, 10)
    (header_len,) = r.unpack("<I")
    config, flags, frozen = _decode_header(r.take(header_len))
    (n_records,) = r.unpack("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_records):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        tag, rank = r.unpack("<BB")
        if tag not in _DTYPES:
            raise CheckpointError(f"{path}: unknown dtype tag {tag}")
        shape = r.unpack(f"<{rank}I")
        dtype = _DTYPES[tag]
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        raw = r.take(count * dtype.itemsize)
        arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(
            np.float64)
    if r.pos != len(blob) - 4:
        raise CheckpointError(f"{path}: trailing bytes after records")
    return Checkpoint(config, flags, arrays, frozen)


def state_from_checkpoint(ckpt: Checkpoint) -> ModelState:
    """Rebuild the full registry (backbone plus any finetune parameters)."""
    state = ModelState()
    for name, value in ckpt.arrays.items():
        state.add(name, value)
    if ckpt.frozen:
        state.set_trainable([n for n in state.names() if n not in ckpt.frozen])
    return state
