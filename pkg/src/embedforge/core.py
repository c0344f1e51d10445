"""Entity vocabularies, sparse interaction matrices and embedding tables.

Interaction data is held in coordinate form (parallel ``rows``/``cols``/
``weights`` arrays) because ingestion appends records; a row-compressed
``scipy.sparse`` view is built lazily for products.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "EntityVocab",
    "SparseInteractionMatrix",
    "EmbeddingMatrix",
    "InvalidRecordError",
    "consolidate",
    "prune_top_rows",
    "prune_top_cols",
    "drop_top_cols",
    "normalize",
]


class InvalidRecordError(ValueError):
    """An interaction record failed validation."""

    def __init__(self, position: int, record, reason: str):
        self.position = position
        self.record = record
        super().__init__(f"record {position} {record!r}: {reason}")


class EntityVocab:
    """Bijection between opaque entity keys and dense indices ``0..n-1``.

    Insertion order is preserved, so building a vocab from the same key
    sequence always yields the same indices.
    """

    __slots__ = ("_keys", "_index")

    def __init__(self, keys: Iterable[str] = ()):
        self._keys: list[str] = []
        self._index: dict[str, int] = {}
        for key in keys:
            self.add(key)

    def add(self, key: str) -> int:
        idx = self._index.get(key)
        if idx is None:
            idx = len(self._keys)
            self._index[key] = idx
            self._keys.append(key)
        return idx

    def index(self, key: str) -> int:
        return self._index[key]

    def get(self, key: str, default=None):
        return self._index.get(key, default)

    @property
    def keys(self) -> tuple[str, ...]:
        return tuple(self._keys)

    def subset(self, indices: Sequence[int]) -> "EntityVocab":
        """New vocab holding the keys at ``indices``, in that order."""
        return EntityVocab(self._keys[i] for i in indices)

    def __len__(self) -> int:
        return len(self._keys)

    def __getitem__(self, i: int) -> str:
        return self._keys[i]

    def __contains__(self, key) -> bool:
        return key in self._index

    def __iter__(self):
        return iter(self._keys)

    def __eq__(self, other) -> bool:
        return isinstance(other, EntityVocab) and self._keys == other._keys

    def __repr__(self) -> str:
        head = ", ".join(map(repr, self._keys[:3]))
        more = ", ..." if len(self._keys) > 3 else ""
        return f"EntityVocab([{head}{more}], n={len(self._keys)})"


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SparseInteractionMatrix:
    """Weighted bipartite interactions between row and column entities."""

    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    row_vocab: EntityVocab
    col_vocab: EntityVocab

    def __post_init__(self):
        object.__setattr__(self, "rows", _frozen(self.rows, np.int64))
        object.__setattr__(self, "cols", _frozen(self.cols, np.int64))
        object.__setattr__(self, "weights", _frozen(self.weights, np.float64))
        if not (len(self.rows) == len(self.cols) == len(self.weights)):
            raise ValueError("rows, cols and weights must have equal length")
        if len(self.rows):
            if self.rows.min() < 0 or self.rows.max() >= self.n_rows:
                raise ValueError("row index out of bounds")
            if self.cols.min() < 0 or self.cols.max() >= self.n_cols:
                raise ValueError("column index out of bounds")
            if not np.all(np.isfinite(self.weights)) or self.weights.min() < 0:
                raise ValueError("weights must be finite and non-negative")

    @property
    def n_rows(self) -> int:
        return len(self.row_vocab)

    @property
    def n_cols(self) -> int:
        return len(self.col_vocab)

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_rows, self.n_cols

    @property
    def nnz(self) -> int:
        return len(self.weights)

    @cached_property
    def csr(self) -> sp.csr_matrix:
        """Row-compressed view (duplicates summed)."""
        m = sp.csr_matrix(
            (self.weights, (self.rows, self.cols)), shape=self.shape, dtype=np.float64
        )
        m.sum_duplicates()
        m.sort_indices()
        return m

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.rows, weights=self.weights, minlength=self.n_rows)

    def col_sums(self) -> np.ndarray:
        return np.bincount(self.cols, weights=self.weights, minlength=self.n_cols)

    def total_weight(self) -> float:
        return math.fsum(self.weights)

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()

    def weight(self, row_key: str, col_key: str) -> float:
        """Weight stored for a (row key, column key) pair, 0 when absent."""
        i = self.row_vocab.get(row_key)
        j = self.col_vocab.get(col_key)
        if i is None or j is None:
            return 0.0
        mask = (self.rows == i) & (self.cols == j)
        return float(self.weights[mask].sum())

    def records(self):
        """Yield ``(row_key, col_key, weight)`` triples."""
        rk, ck = self.row_vocab, self.col_vocab
        for i, j, w in zip(self.rows.tolist(), self.cols.tolist(), self.weights.tolist()):
            yield rk[i], ck[j], w

    def with_weights(self, weights) -> "SparseInteractionMatrix":
        return SparseInteractionMatrix(self.rows, self.cols, weights, self.row_vocab, self.col_vocab)

    def select_rows(self, keep: Sequence[int]) -> "SparseInteractionMatrix":
        """Restrict to the given row indices (kept in the given order)."""
        keep = np.asarray(keep, dtype=np.int64)
        remap = np.full(self.n_rows, -1, dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        mask = remap[self.rows] >= 0
        return SparseInteractionMatrix(
            remap[self.rows[mask]], self.cols[mask], self.weights[mask],
            self.row_vocab.subset(keep.tolist()), self.col_vocab,
        )

    def select_cols(self, keep: Sequence[int]) -> "SparseInteractionMatrix":
        keep = np.asarray(keep, dtype=np.int64)
        remap = np.full(self.n_cols, -1, dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        mask = remap[self.cols] >= 0
        return SparseInteractionMatrix(
            self.rows[mask], remap[self.cols[mask]], self.weights[mask],
            self.row_vocab, self.col_vocab.subset(keep.tolist()),
        )

    @classmethod
    def from_dense(cls, dense, row_keys=None, col_keys=None) -> "SparseInteractionMatrix":
        dense = np.asarray(dense, dtype=np.float64)
        n, m = dense.shape
        rk = row_keys if row_keys is not None else [f"r{i}" for i in range(n)]
        ck = col_keys if col_keys is not None else [f"c{j}" for j in range(m)]
        r, c = np.nonzero(dense)
        return cls(r, c, dense[r, c], EntityVocab(rk), EntityVocab(ck))

    def __repr__(self) -> str:
        return f"SparseInteractionMatrix(shape={self.shape}, nnz={self.nnz})"


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """Dense ``n x dim`` entity representations keyed by ``vocab``."""

    vocab: EntityVocab
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        if v.ndim != 2:
            raise ValueError(f"embedding values must be 2-D, got shape {v.shape}")
        if v.shape[0] != len(self.vocab):
            raise ValueError(f"{v.shape[0]} rows for a vocab of {len(self.vocab)}")
        if v.shape[1] < 1:
            raise ValueError("embedding dim must be positive")
        if not np.all(np.isfinite(v)):
            raise ValueError("embedding values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return len(self.vocab)

    def __getitem__(self, key: str) -> np.ndarray:
        return self.values[self.vocab.index(key)]

    def __contains__(self, key) -> bool:
        return key in self.vocab


def consolidate(interactions: Iterable[tuple[str, str, float]]) -> SparseInteractionMatrix:
    """Build a matrix from ``(row_key, col_key, weight)`` records.

    Duplicate pairs are summed. Vocabularies follow first-seen order and
    entries are stored sorted by ``(row, col)``.
    """
    row_vocab, col_vocab = EntityVocab(), EntityVocab()
    acc: dict[tuple[int, int], list[float]] = {}
    for pos, rec in enumerate(interactions):
        try:
            rkey, ckey, w = rec
            w = float(w)
        except (TypeError, ValueError) as exc:
            raise InvalidRecordError(pos, rec, f"malformed ({exc})") from None
        if not math.isfinite(w):
            raise InvalidRecordError(pos, rec, "weight is not finite")
        if w < 0:
            raise InvalidRecordError(pos, rec, "weight is negative")
        key = (row_vocab.add(rkey), col_vocab.add(ckey))
        acc.setdefault(key, []).append(w)

    pairs = sorted(acc)
    rows = np.fromiter((p[0] for p in pairs), dtype=np.int64, count=len(pairs))
    cols = np.fromiter((p[1] for p in pairs), dtype=np.int64, count=len(pairs))
    weights = np.fromiter((math.fsum(acc[p]) for p in pairs), dtype=np.float64, count=len(pairs))
    return SparseInteractionMatrix(rows, cols, weights, row_vocab, col_vocab)


def _top_indices(sums: np.ndarray, n: int) -> np.ndarray:
    # highest sum first, lower index wins ties
    order = np.lexsort((np.arange(len(sums)), -sums))
    return order[:n]


def prune_top_rows(m: SparseInteractionMatrix, n: int) -> SparseInteractionMatrix:
    """Keep the ``n`` rows with the largest total weight, in original order."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n >= m.n_rows:
        return m
    keep = np.sort(_top_indices(m.row_sums(), n))
    return m.select_rows(keep)


def prune_top_cols(m: SparseInteractionMatrix, n: int) -> SparseInteractionMatrix:
    """Column counterpart of :func:`prune_top_rows`."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n >= m.n_cols:
        return m
    keep = np.sort(_top_indices(m.col_sums(), n))
    return m.select_cols(keep)


def drop_top_cols(m: SparseInteractionMatrix, n: int) -> SparseInteractionMatrix:
    """Remove the ``n`` heaviest columns (very popular, uninformative items)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return m
    drop = np.zeros(m.n_cols, dtype=bool)
    drop[_top_indices(m.col_sums(), n)] = True
    return m.select_cols(np.flatnonzero(~drop))


def normalize(m: SparseInteractionMatrix) -> SparseInteractionMatrix:
    """Scale each entry by ``1 / (sqrt(row_sum) * sqrt(col_sum))`` of the raw matrix."""
    rs = np.sqrt(m.row_sums())
    cs = np.sqrt(m.col_sums())
    w = m.weights.copy()
    nz = w > 0
    w[nz] = w[nz] / (rs[m.rows[nz]] * cs[m.cols[nz]])
    return m.with_weights(w)
