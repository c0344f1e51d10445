"""Co-occurrence embeddings trained with negative sampling.

Three usage modes share one trainer:

* direct pairs ``(e1, e2)`` between two entity types,
* skipgram pairs within token sequences (one shared vocabulary),
* bag-of-features, where an entity's vector is the weighted mean of its
  feature vectors (:func:`bag_of_features_embed`).

For each observed pair ``(i, j)`` with negatives ``K`` the trainer ascends
``log sig(E1_i . E2_j) + sum_k log sig(-E1_i . E2_k)``.
"""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numba
import numpy as np

from .core import EmbeddingMatrix, EntityVocab

_log = logging.getLogger(__name__)

__all__ = [
    "PairStream",
    "CooccurConfig",
    "NegativeSampler",
    "EmptyVocabularyError",
    "pair_objective",
    "pair_gradients",
    "sgd_step",
    "train",
    "skipgram_pairs",
    "detect_phrases",
    "bag_of_features_embed",
]


class EmptyVocabularyError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PairStream:
    """Co-occurrence events as index arrays into ``left_vocab``/``right_vocab``.

    Skipgram streams pass the same vocab object on both sides.
    """

    left: np.ndarray
    right: np.ndarray
    weights: np.ndarray
    left_vocab: EntityVocab
    right_vocab: EntityVocab

    def __post_init__(self):
        left = np.asarray(self.left, dtype=np.int64)
        right = np.asarray(self.right, dtype=np.int64)
        w = np.asarray(self.weights, dtype=np.float64)
        if not (left.shape == right.shape == w.shape):
            raise ValueError("left, right and weights must align")
        if len(w) and (not np.all(np.isfinite(w)) or w.min() <= 0):
            raise ValueError("pair weights must be finite and > 0")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)
        object.__setattr__(self, "weights", w)

    @property
    def shared_vocab(self) -> bool:
        return self.left_vocab is self.right_vocab

    def __len__(self) -> int:
        return len(self.left)

    @classmethod
    def from_records(cls, records: Iterable, shared_vocab: bool = False) -> "PairStream":
        """Build from ``(left_key, right_key[, weight])`` tuples."""
        lv = EntityVocab()
        rv = lv if shared_vocab else EntityVocab()
        left, right, weights = [], [], []
        for rec in records:
            if len(rec) == 2:
                a, b = rec
                w = 1.0
            else:
                a, b, w = rec
            left.append(lv.add(a))
            right.append(rv.add(b))
            weights.append(float(w))
        return cls(np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                   np.array(weights, dtype=np.float64), lv, rv)

    def key_pairs(self) -> list[tuple[str, str]]:
        return [(self.left_vocab[a], self.right_vocab[b]) for a, b in zip(self.left.tolist(), self.right.tolist())]


@dataclass(frozen=True)
class CooccurConfig:
    dim: int = 64
    negatives: int = 5
    lr: float = 0.025
    epochs: int = 5
    exponent: float = 0.75
    seed: int = 0
    min_count: int = 1
    window: int = 5

    def __post_init__(self):
        if self.dim < 1 or self.negatives < 1 or self.epochs < 1:
            raise ValueError("dim, negatives and epochs must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.exponent <= 1.0:
            raise ValueError("exponent must lie in [0, 1]")
        if self.window < 1:
            raise ValueError("window must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


# -- objective and gradients ------------------------------------------------------


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _check_dims(e1, e2, negs):
    e1 = np.asarray(e1, dtype=np.float64)
    e2 = np.asarray(e2, dtype=np.float64)
    negs = np.asarray(negs, dtype=np.float64).reshape(-1, e1.shape[-1]) if len(negs) else np.empty((0, e1.shape[-1]))
    if e1.shape != e2.shape or (len(negs) and negs.shape[1] != e1.shape[0]):
        raise ValueError("all vectors must share one dimension")
    return e1, e2, negs


def pair_objective(e1, e2, negs=()) -> float:
    """``log sig(e1.e2) + sum_k log sig(-e1.n_k)``."""
    if len(negs) and any(len(n) != len(e1) for n in negs):
        raise ValueError("all vectors must share one dimension")
    e1, e2, negs = _check_dims(e1, e2, negs)
    val = float(_log_sigmoid(e1 @ e2))
    if len(negs):
        val += float(np.sum(_log_sigmoid(-(negs @ e1))))
    return val


def pair_gradients(e1, e2, negs=()):
    """Gradients of :func:`pair_objective` w.r.t. ``e1``, ``e2`` and each negative."""
    e1, e2, negs = _check_dims(e1, e2, negs)
    g_pos = 1.0 - _sigmoid(e1 @ e2)
    g_neg = _sigmoid(negs @ e1) if len(negs) else np.empty(0)
    d_e1 = g_pos * e2 - g_neg @ negs
    d_e2 = g_pos * e1
    d_negs = -g_neg[:, None] * e1[None, :]
    return d_e1, d_e2, d_negs


def sgd_step(E1: np.ndarray, E2: np.ndarray, i: int, j: int, negs: Sequence[int], lr: float):
    """One in-place ascent step on pair ``(i, j)`` with negative rows ``negs``.

    All gradients are taken at the pre-step parameters; a row that appears
    more than once (e.g. a negative equal to ``j``) accumulates every term.
    Returns the updated ``E1[i]`` and ``E2[j]`` rows.
    """
    negs = np.asarray(negs, dtype=np.int64)
    d1, d2, dn = pair_gradients(E1[i], E2[j], E2[negs])
    E2[j] += lr * d2
    np.add.at(E2, negs, lr * dn)
    E1[i] += lr * d1
    return E1[i], E2[j]


# -- negative sampling ------------------------------------------------------------


class NegativeSampler:
    """Draws entity indices with probability ``freq**exponent / Z``."""

    def __init__(self, freqs, exponent: float = 0.75):
        freqs = np.asarray(freqs, dtype=np.float64)
        w = np.where(freqs > 0, freqs ** exponent, 0.0)
        total = w.sum()
        if total <= 0:
            raise EmptyVocabularyError("no entity has positive frequency")
        self.probs = w / total
        self._cdf = np.cumsum(self.probs)
        self._cdf[-1] = 1.0

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        u = rng.random(size)
        return np.searchsorted(self._cdf, u, side="right").clip(max=len(self._cdf) - 1)


# -- kernels ----------------------------------------------------------------------


@numba.njit(cache=True, inline="always")
def _fsigmoid(x):
    if x >= 0:
        z = math.exp(-x)
        return 1.0 / (1.0 + z)
    z = math.exp(x)
    return z / (1.0 + z)


@numba.njit(cache=True)
def _log_sig(x):
    if x >= 0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


@numba.njit(cache=True)
def _step(E1, E2, i, j, negs_row, lr, grad, gneg):
    dim = E1.shape[1]
    s = 0.0
    for d in range(dim):
        s += E1[i, d] * E2[j, d]
    obj = _log_sig(s)
    gp = 1.0 - _fsigmoid(s)
    for d in range(dim):
        grad[d] = gp * E2[j, d]
    for t in range(negs_row.shape[0]):
        k = negs_row[t]
        sk = 0.0
        for d in range(dim):
            sk += E1[i, d] * E2[k, d]
        obj += _log_sig(-sk)
        gneg[t] = _fsigmoid(sk)
        for d in range(dim):
            grad[d] -= gneg[t] * E2[k, d]
    for d in range(dim):
        E2[j, d] += lr * gp * E1[i, d]
    for t in range(negs_row.shape[0]):
        k = negs_row[t]
        for d in range(dim):
            E2[k, d] -= lr * gneg[t] * E1[i, d]
    for d in range(dim):
        E1[i, d] += lr * grad[d]
    return obj


@numba.njit(cache=True)
def _epoch_serial(E1, E2, left, right, negs, lr0, lr_min, t0, total):
    grad = np.empty(E1.shape[1])
    gneg = np.empty(negs.shape[1])
    acc = 0.0
    for t in range(left.shape[0]):
        lr = lr0 - (lr0 - lr_min) * (t0 + t) / total
        if lr < lr_min:
            lr = lr_min
        acc += _step(E1, E2, left[t], right[t], negs[t], lr, grad, gneg)
    return acc


@numba.njit(cache=True, parallel=True)
def _epoch_hogwild(E1, E2, left, right, negs, lr0, lr_min, t0, total, workers):
    n = left.shape[0]
    chunk = (n + workers - 1) // workers
    partial = np.zeros(workers)
    for w in numba.prange(workers):
        grad = np.empty(E1.shape[1])
        gneg = np.empty(negs.shape[1])
        lo = w * chunk
        hi = min(n, lo + chunk)
        acc = 0.0
        for t in range(lo, hi):
            # each worker walks its own slice with the global schedule position
            lr = lr0 - (lr0 - lr_min) * (t0 + t) / total
            if lr < lr_min:
                lr = lr_min
            acc += _step(E1, E2, left[t], right[t], negs[t], lr, grad, gneg)
        partial[w] = acc
    return partial.sum()


def run_epoch(E1, E2, left, right, negs, lr0, lr_min, t0, total, workers=1) -> float:
    """Apply the SGD steps for one epoch in order; returns the summed objective."""
    left = np.ascontiguousarray(left, dtype=np.int64)
    right = np.ascontiguousarray(right, dtype=np.int64)
    negs = np.ascontiguousarray(negs, dtype=np.int64)
    if workers <= 1:
        return float(_epoch_serial(E1, E2, left, right, negs, lr0, lr_min, float(t0), float(total)))
    numba.set_num_threads(min(workers, numba.config.NUMBA_NUM_THREADS))
    return float(_epoch_hogwild(E1, E2, left, right, negs, lr0, lr_min, float(t0), float(total), workers))


# -- training ---------------------------------------------------------------------


def _filter_min_count(pairs: PairStream, min_count: int) -> PairStream:
    if min_count <= 1:
        return pairs
    lc = np.bincount(pairs.left, weights=pairs.weights, minlength=len(pairs.left_vocab))
    if pairs.shared_vocab:
        keep_l = keep_r = np.flatnonzero(lc >= min_count)
    else:
        rc = np.bincount(pairs.right, weights=pairs.weights, minlength=len(pairs.right_vocab))
        keep_l, keep_r = np.flatnonzero(lc >= min_count), np.flatnonzero(rc >= min_count)
    lmap = np.full(len(pairs.left_vocab), -1)
    lmap[keep_l] = np.arange(len(keep_l))
    rmap = np.full(len(pairs.right_vocab), -1)
    rmap[keep_r] = np.arange(len(keep_r))
    mask = (lmap[pairs.left] >= 0) & (rmap[pairs.right] >= 0)
    lv = pairs.left_vocab.subset(keep_l.tolist())
    rv = lv if pairs.shared_vocab else pairs.right_vocab.subset(keep_r.tolist())
    return PairStream(lmap[pairs.left[mask]], rmap[pairs.right[mask]], pairs.weights[mask], lv, rv)


def _epoch_order(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # weight w -> floor(w) copies plus one more with probability frac(w)
    base = np.floor(weights).astype(np.int64)
    frac = weights - base
    extra = rng.random(len(weights)) < frac
    reps = base + extra
    idx = np.repeat(np.arange(len(weights)), reps)
    return rng.permutation(idx)


def train(pairs: PairStream, config: CooccurConfig = CooccurConfig(), workers: int = 1,
          return_trace: bool = False):
    """Train left/right co-embeddings from a pair stream.

    ``workers=1`` is bit-reproducible for a fixed seed. More workers update
    rows concurrently without locks, trading determinism for throughput.
    """
    pairs = _filter_min_count(pairs, config.min_count)
    if len(pairs) == 0 or len(pairs.left_vocab) == 0:
        raise EmptyVocabularyError("no pairs survive min_count filtering")

    rng = np.random.default_rng(config.seed)
    dim = config.dim
    bound = 0.5 / dim
    E1 = rng.uniform(-bound, bound, size=(len(pairs.left_vocab), dim))
    E2 = rng.uniform(-bound, bound, size=(len(pairs.right_vocab), dim))

    freqs = np.bincount(pairs.right, weights=pairs.weights, minlength=len(pairs.right_vocab))
    sampler = NegativeSampler(freqs, config.exponent)
    total = max(1.0, config.epochs * float(pairs.weights.sum()))
    lr_min = config.lr / 100.0

    trace = []
    t0 = 0
    for epoch in range(config.epochs):
        order = _epoch_order(pairs.weights, rng)
        negs = sampler.draw(rng, (len(order), config.negatives))
        obj = run_epoch(E1, E2, pairs.left[order], pairs.right[order], negs,
                        config.lr, lr_min, t0, total, workers)
        t0 += len(order)
        trace.append(obj / max(1, len(order)))
        _log.debug("epoch %d mean objective %.5f", epoch, trace[-1])
        if not (np.all(np.isfinite(E1)) and np.all(np.isfinite(E2))):
            raise FloatingPointError(f"embeddings diverged in epoch {epoch}")

    out = EmbeddingMatrix(pairs.left_vocab, E1), EmbeddingMatrix(pairs.right_vocab, E2)
    if return_trace:
        return out + (trace,)
    return out


# -- pair generation --------------------------------------------------------------


def detect_phrases(sequences: Iterable[Sequence[str]], threshold: int, joiner: str = "_") -> list[list[str]]:
    """Merge adjacent bigrams seen more than ``threshold`` times into one token.

    A single greedy left-to-right pass; merged tokens are not merged again.
    """
    seqs = [list(s) for s in sequences]
    counts = Counter()
    for s in seqs:
        counts.update(zip(s, s[1:]))
    frequent = {bg for bg, c in counts.items() if c > threshold}
    out = []
    for s in seqs:
        merged, t = [], 0
        while t < len(s):
            if t + 1 < len(s) and (s[t], s[t + 1]) in frequent:
                merged.append(s[t] + joiner + s[t + 1])
                t += 2
            else:
                merged.append(s[t])
                t += 1
        out.append(merged)
    return out


def skipgram_pairs(sequences: Iterable[Sequence[str]], window: int, min_count: int = 1) -> PairStream:
    """All ``(tok_t, tok_{t+d})`` with ``0 < |d| <= window`` inside each sequence.

    Tokens rarer than ``min_count`` are deleted before windows are formed.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    seqs = [list(s) for s in sequences]
    counts = Counter(tok for s in seqs for tok in s)
    vocab = EntityVocab()
    left, right = [], []
    for s in seqs:
        ids = np.array([vocab.add(t) for t in s if counts[t] >= min_count], dtype=np.int64)
        n = len(ids)
        for d in range(1, min(window, n - 1) + 1):
            a, b = ids[:-d], ids[d:]
            left.extend((a, b))
            right.extend((b, a))
    if left:
        left_arr, right_arr = np.concatenate(left), np.concatenate(right)
    else:
        left_arr = right_arr = np.empty(0, dtype=np.int64)
    return PairStream(left_arr, right_arr, np.ones(len(left_arr)), vocab, vocab)


def bag_of_features_embed(feature_embeddings: EmbeddingMatrix, features, on_unknown: str = "fail") -> np.ndarray:
    """Weighted mean of feature vectors: ``sum w_f E(f) / sum w_f``.

    ``on_unknown`` is ``"fail"`` (raise ``KeyError``) or ``"skip"``.
    """
    if on_unknown not in ("fail", "skip"):
        raise ValueError("on_unknown must be 'fail' or 'skip'")
    acc = np.zeros(feature_embeddings.dim)
    total = 0.0
    for key, w in features:
        if key not in feature_embeddings:
            if on_unknown == "fail":
                raise KeyError(f"unknown feature {key!r}")
            continue
        acc += float(w) * feature_embeddings[key]
        total += float(w)
    if total == 0:
        raise KeyError("no known features with positive total weight")
    return acc / total
