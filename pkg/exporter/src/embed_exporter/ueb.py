"""UEB1 binary embedding files.

Layout, all little-endian: magic b"UEB1", u32 dim, u64 count, then per
entry a u32 id byte length, the UTF-8 id, and dim float32 components.
"""

from __future__ import annotations

import struct
from typing import Iterable

import numpy as np

from .preprocess import ExporterError

MAGIC = b"UEB1"


def write_embeddings(path, dim: int, entries: Iterable[tuple[str, np.ndarray]]):
    """Stream (utterance_id, vector) pairs to disk; ids must be unique."""
    rows = list(entries)
    seen: set[str] = set()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", dim))
        f.write(struct.pack("<Q", len(rows)))
        for utterance_id, vec in rows:
            if utterance_id in seen:
                raise ExporterError(f"duplicate utterance id {utterance_id!r}")
            seen.add(utterance_id)
            vec = np.asarray(vec, dtype="<f4").reshape(-1)
            if vec.shape[0] != dim:
                raise ExporterError(
                    f"vector for {utterance_id!r} has {vec.shape[0]} components, "
                    f"expected {dim}"
                )
            if not np.isfinite(vec).all():
                raise ExporterError(f"vector for {utterance_id!r} is not finite")
            raw = utterance_id.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(vec.tobytes())


def read_embeddings(path) -> tuple[int, dict[str, np.ndarray]]:
    """Minimal reader used by the exporter's own tests."""
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ExporterError(f"{path}: bad magic")
        (dim,) = struct.unpack("<I", f.read(4))
        (count,) = struct.unpack("<Q", f.read(8))
        entries = {}
        for _ in range(count):
            (id_len,) = struct.unpack("<I", f.read(4))
            utterance_id = f.read(id_len).decode("utf-8")
            entries[utterance_id] = np.frombuffer(f.read(4 * dim), dtype="<f4").copy()
    return dim, entries
