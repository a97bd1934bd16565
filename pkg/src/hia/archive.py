"""Versioned binary graph archives holding named event segments (train/val/test) with a content digest.

Layout: 8 magic bytes, a little-endian u32 format version, a u64 header
length, a JSON header, then for every segment its src (int64), dst (int64)
and t (float64) arrays, little-endian. The header records segment sizes and
the sha256 of the payload.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .temporal_graph import TemporalGraph

MAGIC = b"HIAGRAPH"
VERSION = 1
SEGMENTS = ("train", "val", "test")


class ArchiveError(ValueError):
    pass


def _payload(segments: dict[str, TemporalGraph]) -> bytes:
    parts = []
    for name in segments:
        g = segments[name]
        parts += [g.src.astype("<i8").tobytes(), g.dst.astype("<i8").tobytes(), g.t.astype("<f8").tobytes()]
    return b"".join(parts)


def save_archive(path: str | Path, segments: dict[str, TemporalGraph], meta: dict | None = None) -> str:
    """Write ``segments`` to ``path`` and return the payload digest."""
    payload = _payload(segments)
    digest = hashlib.sha256(payload).hexdigest()
    header = json.dumps(
        {"segments": [[k, len(v)] for k, v in segments.items()], "sha256": digest, "meta": meta or {}},
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        fh.write(payload)
    return digest


def read_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        return _header(fh, path)


def _header(fh, path) -> dict:
    if fh.read(len(MAGIC)) != MAGIC:
        raise ArchiveError(f"{path}: not a graph archive (bad magic bytes)")
    raw = fh.read(12)
    if len(raw) != 12:
        raise ArchiveError(f"{path}: truncated header")
    version, hlen = struct.unpack("<IQ", raw)
    if version != VERSION:
        raise ArchiveError(f"{path}: unsupported archive version {version}")
    return json.loads(fh.read(hlen))


def load_archive(path: str | Path) -> tuple[dict[str, TemporalGraph], dict]:
    """Read an archive, verifying its digest; returns ``(segments, header)``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such archive: {path}")
    with open(path, "rb") as fh:
        header = _header(fh, path)
        payload = fh.read()
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise ArchiveError(f"{path}: content digest mismatch")
    segments, off = {}, 0
    for name, n in header["segments"]:
        src = np.frombuffer(payload, "<i8", n, off)
        off += 8 * n
        dst = np.frombuffer(payload, "<i8", n, off)
        off += 8 * n
        t = np.frombuffer(payload, "<f8", n, off)
        off += 8 * n
        segments[name] = TemporalGraph(src.astype(np.int64), dst.astype(np.int64), t.astype(np.float64))
    if off != len(payload):
        raise ArchiveError(f"{path}: payload size does not match header")
    return segments, header


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
