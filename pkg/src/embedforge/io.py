"""Readers and writers for interaction and embedding files.

Interaction files are UTF-8 TSV (``row_key<TAB>col_key<TAB>weight``, ``#``
comments ignored). Embeddings are stored either as TSV with 9 significant
digits or in the ``EMB1`` binary layout::

    b"EMB1" | u32 dim | u64 count | count * (u16 keylen | key bytes | dim * f32)

All binary integers and floats are little-endian.
"""
from __future__ import annotations

import hashlib
import os
import struct
from pathlib import Path

import numpy as np

from .core import EmbeddingMatrix, EntityVocab, SparseInteractionMatrix, consolidate

MAGIC = b"EMB1"

__all__ = [
    "MAGIC",
    "iter_interaction_records",
    "read_interactions",
    "write_interactions",
    "embeddings_to_bytes",
    "embeddings_from_bytes",
    "write_embeddings",
    "read_embeddings",
    "file_digest",
    "bytes_digest",
]


def iter_interaction_records(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) == 2:
                parts.append("1")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
            yield parts[0], parts[1], parts[2]


def read_interactions(path) -> SparseInteractionMatrix:
    return consolidate(iter_interaction_records(path))


def write_interactions(m: SparseInteractionMatrix, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r, c, w in m.records():
            fh.write(f"{r}\t{c}\t{w!r}\n")


def embeddings_to_bytes(emb: EmbeddingMatrix) -> bytes:
    parts = [MAGIC, struct.pack("<IQ", emb.dim, len(emb))]
    vals = emb.values.astype("<f4")
    for key, row in zip(emb.vocab, vals):
        kb = key.encode("utf-8")
        if len(kb) > 0xFFFF:
            raise ValueError(f"key too long for EMB1 ({len(kb)} bytes)")
        parts.append(struct.pack("<H", len(kb)))
        parts.append(kb)
        parts.append(row.tobytes())
    return b"".join(parts)


def embeddings_from_bytes(buf: bytes) -> EmbeddingMatrix:
    if buf[:4] != MAGIC:
        raise ValueError("not an EMB1 payload")
    dim, count = struct.unpack_from("<IQ", buf, 4)
    off = 16
    keys = []
    values = np.empty((count, dim), dtype=np.float64)
    rowbytes = 4 * dim
    for i in range(count):
        (klen,) = struct.unpack_from("<H", buf, off)
        off += 2
        keys.append(buf[off:off + klen].decode("utf-8"))
        off += klen
        values[i] = np.frombuffer(buf, dtype="<f4", count=dim, offset=off)
        off += rowbytes
    if off != len(buf):
        raise ValueError(f"trailing bytes in EMB1 payload ({len(buf) - off})")
    return EmbeddingMatrix(EntityVocab(keys), values.reshape(count, dim) if count else np.empty((0, dim)))


def _is_binary(path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(4) == MAGIC


def write_embeddings(emb: EmbeddingMatrix, path, fmt: str | None = None) -> None:
    """Write ``emb``; format from ``fmt`` or the extension (``.bin`` → EMB1)."""
    path = Path(path)
    if fmt is None:
        fmt = "bin" if path.suffix in (".bin", ".emb") else "tsv"
    if fmt == "bin":
        path.write_bytes(embeddings_to_bytes(emb))
    elif fmt == "tsv":
        with open(path, "w", encoding="utf-8") as fh:
            for key, row in zip(emb.vocab, emb.values):
                fh.write(key + "\t" + "\t".join(f"{v:.9g}" for v in row) + "\n")
    else:
        raise ValueError(f"unknown embedding format {fmt!r}")


def read_embeddings(path) -> EmbeddingMatrix:
    if _is_binary(path):
        return embeddings_from_bytes(Path(path).read_bytes())
    keys, rows = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\r\n")
            if not line or line.startswith("#"):
                continue
            key, *vals = line.split("\t")
            keys.append(key)
            rows.append([float(v) for v in vals])
    if not rows:
        raise ValueError(f"{path}: no embeddings")
    return EmbeddingMatrix(EntityVocab(keys), np.array(rows))


def bytes_digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
