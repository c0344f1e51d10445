"""Embeddings for entities that were not part of a trained factorization.

For an SVD model with absorbed factors ``U* = U sqrt(S)``, ``V* = V sqrt(S)``
a new interaction vector ``x`` is projected with ``u = x V S^{-1/2}``, which
minimizes ``|u V*^T - x|``. That projection is a single sparse-times-dense
product, so a whole batch folds in as a map-reduce over interaction tuples.
ALS models fold in through the same confidence-weighted ridge solve the
trainer uses for its user half-step.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from .bench import ndcg
from .core import EmbeddingMatrix, EntityVocab, SparseInteractionMatrix
from .factorize import ALS, SVD_ABSORBED, CoEmbeddingModel, als_solve_rows, implicit_als

_log = logging.getLogger(__name__)

__all__ = [
    "FoldInMatrix",
    "FoldInResult",
    "LookalikeGroups",
    "LookalikeFeatures",
    "ExperimentRow",
    "svd_fold_in",
    "ls_fold_in",
    "batch_fold_in",
    "lookalike_features",
    "split_engagements",
    "foldin_experiment",
]


@dataclass(frozen=True, eq=False)
class FoldInMatrix:
    """Dense ``items x dim`` matrix ``F`` with ``u = x F``."""

    vocab: EntityVocab
    matrix: np.ndarray
    kind: str

    def __post_init__(self):
        if self.matrix.shape[0] != len(self.vocab):
            raise ValueError("fold-in matrix rows must match the item vocab")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("fold-in matrix has non-finite entries")

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @classmethod
    def from_model(cls, model: CoEmbeddingModel, lam: float | None = None) -> "FoldInMatrix":
        """``V S^{-1/2}`` for SVD models; the uniform-confidence ridge inverse for ALS."""
        Vs = model.right_star.values
        if model.kind == SVD_ABSORBED:
            F = Vs / model.singular_values
        else:
            lam = model.params.get("lambda", 0.1) if lam is None else lam
            G = Vs.T @ Vs + lam * np.eye(model.dim)
            F = np.linalg.solve(G, Vs.T).T
        return cls(model.right_star.vocab, F, model.kind)

    def fold(self, x) -> np.ndarray:
        idx, val = _sparse_vector(x, len(self.vocab))
        return val @ self.matrix[idx]


def _sparse_vector(x, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Normalize ``x`` to (indices, values); accepts dense, scipy sparse or an index mapping."""
    if sp.issparse(x):
        x = sp.csr_matrix(x)
        if x.shape[0] != 1:
            raise ValueError("expected a single sparse row")
        if x.shape[1] != n:
            raise IndexError(f"vector length {x.shape[1]} does not match {n} items")
        return x.indices.astype(np.int64), x.data.astype(np.float64)
    if isinstance(x, Mapping):
        idx = np.fromiter(x.keys(), dtype=np.int64, count=len(x))
        val = np.fromiter(x.values(), dtype=np.float64, count=len(x))
    else:
        dense = np.asarray(x, dtype=np.float64)
        if dense.ndim != 1 or len(dense) != n:
            raise IndexError(f"dense vector of shape {dense.shape} does not match {n} items")
        idx = np.flatnonzero(dense)
        val = dense[idx]
    if len(idx) and (idx.min() < 0 or idx.max() >= n):
        raise IndexError("item index outside the model's vocab")
    return idx, val


@lru_cache(maxsize=16)
def _fold_matrix(model: CoEmbeddingModel) -> FoldInMatrix:
    return FoldInMatrix.from_model(model)


@lru_cache(maxsize=16)
def _gram(model: CoEmbeddingModel) -> np.ndarray:
    Vs = model.right_star.values
    return Vs.T @ Vs


def svd_fold_in(x, model: CoEmbeddingModel) -> np.ndarray:
    """Project ``x`` (indexed by the model's item vocab) onto the user space."""
    if model.kind != SVD_ABSORBED:
        raise ValueError("svd_fold_in needs an svd-absorbed model; use ls_fold_in")
    return _fold_matrix(model).fold(x)


def ls_fold_in(x, model: CoEmbeddingModel, lam: float | None = None, alpha: float | None = None) -> np.ndarray:
    """Least-squares fold-in against the frozen item factors.

    For ALS models ``lam`` and ``alpha`` default to the training values and
    the solve is the trainer's own user half-step. Without ``alpha`` the
    problem is the plain ridge ``min |u V*^T - x|^2 + lam |u|^2``; for SVD
    models with ``lam=0`` that is exactly :func:`svd_fold_in`.
    """
    n_items = len(model.right_star.vocab)
    idx, val = _sparse_vector(x, n_items)
    Vs = model.right_star.values
    if model.kind == ALS:
        lam = model.params.get("lambda") if lam is None else lam
        alpha = model.params.get("alpha") if alpha is None else alpha
        if lam is None or lam <= 0:
            raise ValueError("ALS fold-in needs lam > 0")
    else:
        lam = 0.0 if lam is None else lam
    if alpha is not None:
        row = sp.csr_matrix((val, (np.zeros(len(idx), dtype=np.int64), idx)), shape=(1, n_items))
        return als_solve_rows(row, Vs, alpha, lam, gram=_gram(model))[0]
    G = _gram(model) + lam * np.eye(model.dim)
    rhs = val @ Vs[idx]
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("fold-in normal matrix is not positive definite") from exc
    return np.linalg.solve(L.T, np.linalg.solve(L, rhs))


class FoldInResult(NamedTuple):
    embeddings: EmbeddingMatrix
    n_unknown: int


def batch_fold_in(interactions: Iterable[tuple[str, str, float]], fold: FoldInMatrix) -> FoldInResult:
    """Fold in many users from ``(user, item, weight)`` tuples.

    Map: each tuple becomes ``(user, weight * F[item])``. Reduce: sum per
    user. Rows come out in first-seen user order; unknown items are counted
    and skipped.
    """
    users = EntityVocab()
    uidx, iidx, wts = [], [], []
    unknown = 0
    for user, item, w in interactions:
        j = fold.vocab.get(item)
        if j is None:
            unknown += 1
            users.add(user)
            continue
        uidx.append(users.add(user))
        iidx.append(j)
        wts.append(float(w))
    out = np.zeros((len(users), fold.dim))
    if uidx:
        contrib = np.asarray(wts)[:, None] * fold.matrix[np.asarray(iidx)]
        np.add.at(out, np.asarray(uidx), contrib)
    if unknown:
        _log.info("batch_fold_in: skipped %d interactions with unknown items", unknown)
    if len(users) == 0:
        return FoldInResult(EmbeddingMatrix(users, np.empty((0, fold.dim))), unknown)
    return FoldInResult(EmbeddingMatrix(users, out), unknown)


# -- lookalike ----------------------------------------------------------------------


class LookalikeGroups:
    """Ordered named groups of reference vectors for a brand-new user.

    Typical groups: ``address_book`` (one row per contact),
    ``interests`` and ``geography`` (one averaged row per selected interest
    or area).
    """

    def __init__(self, groups: Mapping[str, np.ndarray] | Sequence[tuple[str, np.ndarray]], dim: int | None = None):
        items = list(groups.items()) if isinstance(groups, Mapping) else list(groups)
        norm = []
        for name, vecs in items:
            vecs = np.asarray(vecs, dtype=np.float64)
            if vecs.size == 0:
                vecs = vecs.reshape(0, dim or 0)
            elif vecs.ndim == 1:
                vecs = vecs[None, :]
            norm.append((name, vecs))
        dims = {v.shape[1] for _, v in norm if len(v)}
        if dim is not None:
            dims.add(dim)
        if len(dims) > 1:
            raise ValueError(f"group vectors disagree on dimension: {sorted(dims)}")
        self.groups = tuple(norm)

    @classmethod
    def build(cls, user_emb: EmbeddingMatrix, address_book: Sequence[str] = (),
              interests: Sequence[Sequence[str]] = (), geography: Sequence[Sequence[str]] = ()) -> "LookalikeGroups":
        """Assemble the standard three groups from existing user embeddings.

        Interest and geography member lists are averaged into one vector
        each; unknown users are ignored.
        """
        def rows(keys):
            keys = [k for k in keys if k in user_emb]
            return np.stack([user_emb[k] for k in keys]) if keys else np.empty((0, user_emb.dim))

        def means(member_lists):
            vecs = [rows(m).mean(axis=0) for m in member_lists if len(rows(m))]
            return np.stack(vecs) if vecs else np.empty((0, user_emb.dim))

        return cls([("address_book", rows(address_book)), ("interests", means(interests)),
                    ("geography", means(geography))], dim=user_emb.dim)

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.groups]


class LookalikeFeatures(NamedTuple):
    values: np.ndarray
    present: np.ndarray
    names: list


def lookalike_features(candidate, groups: LookalikeGroups, quantiles: Sequence[float],
                       sentinel: float = 0.0) -> LookalikeFeatures:
    """Quantiles of dot similarities between ``candidate`` and each group's vectors.

    Values are laid out group-major, quantile-minor. Quantiles interpolate
    linearly between order statistics. An empty group contributes
    ``sentinel`` values and a 0 in ``present``.
    """
    q = np.asarray(quantiles, dtype=np.float64)
    if np.any((q < 0) | (q > 1)):
        raise ValueError("quantiles must lie in [0, 1]")
    c = np.asarray(candidate, dtype=np.float64)
    if all(len(v) == 0 for _, v in groups.groups):
        raise ValueError("all lookalike groups are empty")
    values, present, names = [], [], []
    for name, vecs in groups.groups:
        names.extend(f"{name}@{x:g}" for x in q)
        if len(vecs) == 0:
            values.extend([sentinel] * len(q))
            present.append(0)
            continue
        if vecs.shape[1] != len(c):
            raise ValueError(f"candidate dim {len(c)} does not match group {name!r}")
        sims = vecs @ c
        values.extend(np.quantile(sims, q, method="linear").tolist())
        present.append(1)
    return LookalikeFeatures(np.asarray(values), np.asarray(present, dtype=np.int8), names)


# -- fold-in experiment ----------------------------------------------------------


def split_engagements(m: SparseInteractionMatrix, train_ratio: float, seed: int = 0):
    """Per-user random split of stored engagements into train and test matrices.

    A user with ``n`` engagements keeps ``floor(train_ratio * n + 1/2)`` for
    training.
    """
    if not 0.0 <= train_ratio <= 1.0:
        raise ValueError("train_ratio must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    order = np.lexsort((m.cols, m.rows))
    rows = m.rows[order]
    bounds = np.searchsorted(rows, np.arange(m.n_rows + 1))
    is_train = np.zeros(m.nnz, dtype=bool)
    for u in range(m.n_rows):
        lo, hi = bounds[u], bounds[u + 1]
        n = hi - lo
        if n == 0:
            continue
        n_train = int(math.floor(train_ratio * n + 0.5))
        pick = rng.permutation(n)[:n_train]
        is_train[order[lo + pick]] = True
    mk = lambda mask: SparseInteractionMatrix(m.rows[mask], m.cols[mask], m.weights[mask], m.row_vocab, m.col_vocab)
    return mk(is_train), mk(~is_train)


@dataclass(frozen=True)
class ExperimentRow:
    percent: float
    ndcg_trained: float
    ndcg_folded: float | None
    ndcg_all: float
    n_trained: int
    n_folded: int


def _user_ndcg(scores: np.ndarray, train_items: np.ndarray, test_items: np.ndarray) -> float:
    s = scores.copy()
    s[train_items] = -np.inf
    ranking = np.argsort(-s, kind="stable")[: len(s) - len(train_items)]
    return ndcg(ranking.tolist(), set(test_items.tolist()), len(test_items))


def _scale(X: sp.csr_matrix, row_f: np.ndarray, col_f: np.ndarray) -> sp.csr_matrix:
    out = sp.csr_matrix(sp.diags(row_f) @ X @ sp.diags(col_f))
    out.eliminate_zeros()
    return out


def foldin_experiment(m: SparseInteractionMatrix, percents: Sequence[float], k: int = 8, alpha: float = 40.0,
                      lam: float = 0.1, iters: int = 15, train_ratio: float = 0.5, seed: int = 0,
                      normalize: bool = True, return_info: bool = False):
    """Train ALS on the most active N% of users and fold the rest in.

    For each N the model sees only the training engagements of the top users
    (ranked by training weight, ties by index); every other user is folded
    in with :func:`ls_fold_in`. NDCG over each user's test engagements
    (binary gains, cutoff = number of test items, training items excluded
    from the ranking) is averaged separately over trained and folded users.
    Users with an empty training or test split are excluded and counted.

    With ``normalize`` the engagements fed to ALS (and to fold-in) are
    scaled like the consumer-producer matrix: ``x / (sqrt(row_sum) *
    sqrt(col_sum))``, with column sums taken over the trained users only.
    Items none of the trained users touched are dropped from fold-in
    vectors.
    """
    for p in percents:
        if not 0 < p <= 100:
            raise ValueError(f"percent {p} outside (0, 100]")
    train, test = split_engagements(m, train_ratio, seed)
    Xtr, Xte = train.csr, test.csr
    tr_counts, te_counts = np.diff(Xtr.indptr), np.diff(Xte.indptr)
    eligible = np.flatnonzero((tr_counts > 0) & (te_counts > 0))
    excluded = {"empty_train": int(np.sum(tr_counts == 0)), "empty_test": int(np.sum((tr_counts > 0) & (te_counts == 0)))}
    if excluded["empty_train"] or excluded["empty_test"]:
        _log.info("foldin_experiment: excluded users %s", excluded)
    activity = train.row_sums()[eligible]
    ranked = eligible[np.lexsort((eligible, -activity))]

    rows = []
    for p in percents:
        n_top = max(1, int(math.ceil(p * len(ranked) / 100.0 - 1e-9)))
        top = np.sort(ranked[:n_top])
        rest = np.sort(ranked[n_top:])
        X_top, X_rest = Xtr[top], Xtr[rest]
        if normalize:
            cs = np.asarray(X_top.sum(axis=0)).ravel()
            inv_c = np.divide(1.0, np.sqrt(cs), out=np.zeros_like(cs), where=cs > 0)
            inv_r = 1.0 / np.sqrt(np.asarray(Xtr.sum(axis=1)).ravel())
            X_top = _scale(X_top, inv_r[top], inv_c)
            X_rest = _scale(X_rest, inv_r[rest], inv_c)
        model = implicit_als(X_top, k, alpha=alpha, lam=lam, iters=iters, seed=seed, track_objective=False)
        V = model.right_star.values
        U_top = model.left_star.values
        U_rest = als_solve_rows(X_rest, V, alpha, lam) if len(rest) else np.empty((0, k))

        def cohort(users, U):
            vals = []
            for u, vec in zip(users, U):
                tr_items = Xtr.indices[Xtr.indptr[u]:Xtr.indptr[u + 1]]
                te_items = Xte.indices[Xte.indptr[u]:Xte.indptr[u + 1]]
                vals.append(_user_ndcg(V @ vec, tr_items, te_items))
            return vals

        trained = cohort(top, U_top)
        folded = cohort(rest, U_rest)
        rows.append(ExperimentRow(float(p), float(np.mean(trained)),
                                  float(np.mean(folded)) if folded else None,
                                  float(np.mean(trained + folded)), len(trained), len(folded)))
    if return_info:
        return rows, excluded
    return rows
