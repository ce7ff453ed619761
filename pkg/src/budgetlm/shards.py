"""Bit-exact binary container for masked instances.

Layout (little-endian):
    header: magic u32 = 0x41423234 ("AB24"), version u16 = 1, seq_len u16,
            vocab_size u32, instance_count u64, seed_fingerprint u64
    record: true_length u16, num_masked u16,
            input_ids seq_len*u16, mask_positions num_masked*u16,
            labels num_masked*u16
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError, ShardFormatError
from .pipeline import MaskedInstance

MAGIC = 0x41423234
VERSION = 1

_HEADER = struct.Struct("<IHHIQQ")
_RECORD_FIXED = struct.Struct("<HH")


@dataclass(frozen=True)
class ShardHeader:
    seq_len: int
    vocab_size: int
    instance_count: int
    seed_fingerprint: int


def write_shard(
    path: str | Path,
    instances: list[MaskedInstance],
    seq_len: int,
    vocab_size: int,
    seed_fingerprint: int,
) -> None:
    """Serialize one shard; byte output is a pure function of the arguments."""
    buf = bytearray()
    buf += _HEADER.pack(MAGIC, VERSION, seq_len, vocab_size, len(instances), seed_fingerprint)
    for inst in instances:
        k = len(inst.mask_positions)
        buf += _RECORD_FIXED.pack(inst.true_length, k)
        buf += inst.input_ids.astype("<u2").tobytes()
        buf += inst.mask_positions.astype("<u2").tobytes()
        buf += inst.labels.astype("<u2").tobytes()
    Path(path).write_bytes(bytes(buf))


def write_shards(
    instances: list[MaskedInstance],
    shard_size: int,
    out_dir: str | Path,
    seq_len: int,
    vocab_size: int,
    seed_fingerprint: int,
) -> list[Path]:
    """Split instances into fixed-size shards named shard_00000.bin, ..."""
    if shard_size < 1:
        raise ConfigError(f"shard_size must be >= 1, got {shard_size}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths: list[Path] = []
    for i, start in enumerate(range(0, max(len(instances), 1), shard_size)):
        chunk = instances[start : start + shard_size]
        path = out_dir / f"shard_{i:05d}.bin"
        write_shard(path, chunk, seq_len, vocab_size, seed_fingerprint)
        paths.append(path)
    return paths


def read_header(path: str | Path) -> ShardHeader:
    with open(path, "rb") as f:
        raw = f.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise ShardFormatError(f"{path}: truncated header at byte offset {len(raw)}")
    magic, version, seq_len, vocab_size, count, fingerprint = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise ShardFormatError(f"{path}: bad magic 0x{magic:08x} at byte offset 0")
    if version != VERSION:
        raise ShardFormatError(f"{path}: unsupported version {version} at byte offset 4")
    return ShardHeader(seq_len, vocab_size, count, fingerprint)


def read_shard(path: str | Path) -> tuple[ShardHeader, list[MaskedInstance]]:
    """Read one shard fully, validating structure; raises ShardFormatError on corruption."""
    data = Path(path).read_bytes()
    header = read_header(path)
    off = _HEADER.size
    instances: list[MaskedInstance] = []
    for i in range(header.instance_count):
        if off + _RECORD_FIXED.size > len(data):
            raise ShardFormatError(f"{path}: record {i} truncated at byte offset {off}")
        true_length, k = _RECORD_FIXED.unpack_from(data, off)
        off += _RECORD_FIXED.size
        need = 2 * (header.seq_len + 2 * k)
        if off + need > len(data):
            raise ShardFormatError(f"{path}: record {i} truncated at byte offset {off}")
        input_ids = np.frombuffer(data, dtype="<u2", count=header.seq_len, offset=off).copy()
        off += 2 * header.seq_len
        positions = np.frombuffer(data, dtype="<u2", count=k, offset=off).copy()
        off += 2 * k
        labels = np.frombuffer(data, dtype="<u2", count=k, offset=off).copy()
        off += 2 * k
        instances.append(
            MaskedInstance(
                input_ids=input_ids,
                true_length=int(true_length),
                mask_positions=positions,
                labels=labels,
            )
        )
    if off != len(data):
        raise ShardFormatError(f"{path}: {len(data) - off} trailing bytes at byte offset {off}")
    return header, instances


def shard_paths(shard_dir: str | Path) -> list[Path]:
    paths = sorted(Path(shard_dir).glob("shard_*.bin"))
    if not paths:
        raise ShardFormatError(f"no shard files under {shard_dir}")
    return paths


def read_shards(shard_dir: str | Path) -> Iterator[MaskedInstance]:
    """Stream every instance from a shard directory in filename order."""
    for path in shard_paths(shard_dir):
        _, instances = read_shard(path)
        yield from instances


def read_shards_header(shard_dir: str | Path) -> ShardHeader:
    """Header of the first shard; all shards in a directory share one config."""
    return read_header(shard_paths(shard_dir)[0])
