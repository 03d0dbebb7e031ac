"""Digest helpers.

FNV-1a 64 is used wherever a key must be reproducible bit-for-bit in any
implementation language; SHA-256 is used for asset content digests.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Iterable

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit hash over ``data``."""
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


def sha256_file(path: Path | str) -> str:
    """Hex SHA-256 of a file's bytes."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_frame_sequence(frames: Iterable[Path | str]) -> str:
    """Digest of an ordered frame sequence: name + content digest per frame."""
    h = hashlib.sha256()
    for frame in frames:
        frame = Path(frame)
        h.update(frame.name.encode("utf-8"))
        h.update(sha256_file(frame).encode("ascii"))
    return h.hexdigest()
