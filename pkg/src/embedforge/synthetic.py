"""Seeded synthetic datasets with known structure, used by demos and acceptance tests."""
from __future__ import annotations

import numpy as np

from .core import EmbeddingMatrix, EntityVocab, SparseInteractionMatrix

__all__ = [
    "make_foldin_data",
    "make_two_topic_corpus",
    "make_subspace_embeddings",
    "make_planted_label_matrix",
]


def make_foldin_data(seed: int, n_users: int = 200, n_items: int = 100, rank: int = 2,
                     sharpness: float = 4.0, min_activity: int = 3, activity_scale: float = 10.0,
                     tail: float = 1.0, noise_level: float = 5.0, max_activity_frac: float = 0.5):
    """Engagement counts from a rank-``rank`` affinity model with activity-dependent noise.

    User ``u`` makes ``n_u = min_activity + floor(activity_scale * Pareto(tail))``
    engagements (capped at ``max_activity_frac * n_items``). Each one is,
    with probability ``min(1, noise_level / n_u)``, a uniformly random item,
    and otherwise an item drawn from ``softmax(sharpness * a_u . b_j / sqrt(rank))``.

    Returns ``(matrix, user_factors, item_factors, activity)``.
    """
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n_users, rank))
    B = rng.normal(size=(n_items, rank))
    logits = sharpness * (A @ B.T) / np.sqrt(rank)
    cap = max(min_activity, int(max_activity_frac * n_items))
    act = np.minimum(min_activity + np.floor(activity_scale * rng.pareto(tail, size=n_users)), cap).astype(int)
    rows, cols, weights = [], [], []
    for u in range(n_users):
        noise = min(1.0, noise_level / act[u])
        p = np.exp(logits[u] - logits[u].max())
        p /= p.sum()
        is_noise = rng.random(act[u]) < noise
        picks = np.where(is_noise, rng.integers(0, n_items, size=act[u]),
                         rng.choice(n_items, size=act[u], p=p))
        counts = np.bincount(picks, minlength=n_items)
        nz = np.flatnonzero(counts)
        rows.extend([u] * len(nz))
        cols.extend(nz.tolist())
        weights.extend(counts[nz].tolist())
    m = SparseInteractionMatrix(np.array(rows), np.array(cols), np.array(weights, dtype=float),
                                EntityVocab(f"u{i}" for i in range(n_users)),
                                EntityVocab(f"i{j}" for j in range(n_items)))
    return m, A, B, act


def make_two_topic_corpus(seed: int, n_sentences: int = 2000, vocab_per_topic: int = 50,
                          sentence_length: int = 10):
    """Sentences drawn from one of two disjoint vocabularies (``a*`` or ``b*`` words)."""
    rng = np.random.default_rng(seed)
    topics = [[f"a{i}" for i in range(vocab_per_topic)], [f"b{i}" for i in range(vocab_per_topic)]]
    out = []
    for _ in range(n_sentences):
        words = topics[int(rng.integers(2))]
        out.append([words[i] for i in rng.integers(0, vocab_per_topic, size=sentence_length)])
    return out, topics


def make_subspace_embeddings(seed: int, n: int = 500, dim: int = 64, subspace: int = 5) -> EmbeddingMatrix:
    """Points ``z Q^T`` with ``z ~ N(0, I_subspace)`` and a random orthonormal ``Q``."""
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.normal(size=(dim, subspace)))
    Z = rng.normal(size=(n, subspace))
    return EmbeddingMatrix(EntityVocab(f"e{i}" for i in range(n)), Z @ Q.T)


def make_planted_label_matrix(seed: int, n: int = 2000, n_cols: int = 280, head: int = 16,
                              head_scale: float = 3.0, clusters: int = 64, tail_scale: float = 0.6,
                              within: float = 0.02, label_flip: float = 0.05):
    """A dense matrix whose SVD puts label-free structure first and the label in the tail.

    The first ``head`` columns are independent, high-variance and label-free,
    so they own the leading singular components. The remaining columns place
    each row near one of ``clusters`` random centroids with a small scale, so
    the cluster structure lives in trailing singular components. A row's
    binary label is its centroid's side of a random hyperplane (median
    split), flipped with probability ``label_flip``; it is linearly
    decodable from the full SVD embedding but invisible in the leading
    ``head`` components.

    Returns ``(matrix, labels)``.
    """
    rng = np.random.default_rng(seed)
    tail = n_cols - head
    Hd = head_scale * rng.normal(size=(n, head)) * np.linspace(1.0, 0.8, head)
    C = tail_scale * rng.normal(size=(clusters, tail))
    member = rng.integers(0, clusters, size=n)
    T = C[member] + within * tail_scale * rng.normal(size=(n, tail))
    side = C @ rng.normal(size=tail)
    y = (side > np.median(side)).astype(int)[member] ^ (rng.random(n) < label_flip)
    return np.hstack([Hd, T]), y.astype(int)
