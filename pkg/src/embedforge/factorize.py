"""Truncated SVD and implicit-feedback ALS co-embeddings."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .core import EmbeddingMatrix, EntityVocab, SparseInteractionMatrix

_log = logging.getLogger(__name__)

__all__ = [
    "SvdModel",
    "CoEmbeddingModel",
    "AlsSolverError",
    "truncated_svd",
    "absorb",
    "implicit_als",
    "als_objective",
    "als_solve_rows",
    "save_model",
    "load_model",
]

SVD_ABSORBED = "svd-absorbed"
ALS = "als"


class AlsSolverError(RuntimeError):
    """A regularized normal-equation system could not be factorized."""


@dataclass(frozen=True, eq=False)
class SvdModel:
    """Top singular triplets: ``left`` (U), ``singular_values``, ``right`` (V)."""

    left: EmbeddingMatrix
    singular_values: np.ndarray
    right: EmbeddingMatrix
    requested_rank: int
    power_iters_run: int = 0

    @property
    def rank(self) -> int:
        return len(self.singular_values)

    @property
    def truncated(self) -> bool:
        """True when fewer than the requested components were numerically nonzero."""
        return self.rank < self.requested_rank

    def reconstruct(self) -> np.ndarray:
        return (self.left.values * self.singular_values) @ self.right.values.T


@dataclass(frozen=True, eq=False)
class CoEmbeddingModel:
    left_star: EmbeddingMatrix
    right_star: EmbeddingMatrix
    kind: str
    singular_values: np.ndarray | None = None
    params: dict = field(default_factory=dict)
    trace: tuple = ()

    def __post_init__(self):
        if self.left_star.dim != self.right_star.dim:
            raise ValueError("left and right embeddings must share a dimension")
        if self.kind not in (SVD_ABSORBED, ALS):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == SVD_ABSORBED and self.singular_values is None:
            raise ValueError("svd-absorbed models keep their singular values")

    @property
    def dim(self) -> int:
        return self.left_star.dim

    def score(self, i: int, j: int) -> float:
        return float(self.left_star.values[i] @ self.right_star.values[j])


def _as_operator(m):
    if isinstance(m, SparseInteractionMatrix):
        return m.csr
    if sp.issparse(m):
        return sp.csr_matrix(m, dtype=np.float64)
    return np.asarray(m, dtype=np.float64)


def _orth(Y: np.ndarray) -> np.ndarray:
    q, _ = np.linalg.qr(Y, mode="reduced")
    return q


def truncated_svd(
    m: SparseInteractionMatrix,
    k: int,
    oversample: int = 10,
    power_iters: int = 2,
    seed: int = 0,
    tol: float = 1e-10,
    max_power_iters: int = 500,
) -> SvdModel:
    """Randomized truncated SVD of a sparse matrix.

    A Gaussian sketch of width ``k + oversample`` is refined with
    ``power_iters`` normalized subspace iterations. Iteration then continues
    until every one of the top ``k`` Ritz values changes by less than
    ``tol`` (relative) between sweeps, or ``max_power_iters`` is reached, so
    flat spectra still converge to the dense answer.

    Components whose singular value is numerically zero are dropped; the
    returned model is then flagged ``truncated``. Each right singular vector
    is signed so that its largest-magnitude entry is positive.
    """
    A = _as_operator(m)
    n, p = A.shape
    if not 1 <= k <= min(n, p):
        raise ValueError(f"rank k={k} outside [1, {min(n, p)}]")
    if (A.nnz if sp.issparse(A) else np.count_nonzero(A)) == 0:
        raise ValueError("cannot factorize an all-zero matrix")

    width = min(k + oversample, min(n, p))
    rng = np.random.default_rng(seed)
    omega = rng.standard_normal((p, width))
    Q = _orth(A @ omega)
    for _ in range(power_iters):
        Q = _orth(A @ _orth(A.T @ Q))
    sweeps = power_iters

    prev = None
    while True:
        # B = Q^T A, formed as (A^T Q)^T to keep the sparse operand on the left
        B = np.asarray(A.T @ Q).T
        ub, s, vt = np.linalg.svd(B, full_matrices=False)
        top = s[:k]
        if width == min(n, p):
            break  # sketch spans the full range, decomposition is exact
        scale = np.maximum(top, 1e-8 * top[0])
        if prev is not None and np.all(np.abs(top - prev) <= tol * scale):
            break
        if sweeps >= max_power_iters:
            _log.warning("truncated_svd: not converged after %d power iterations", sweeps)
            break
        prev = top
        Q = _orth(A @ _orth(A.T @ Q))
        sweeps += 1

    U = Q @ ub[:, :k]
    V = vt[:k].T
    cutoff = max(n, p) * np.finfo(np.float64).eps * s[0]
    keep = top > cutoff
    U, top, V = U[:, keep], top[keep], V[:, keep]
    if len(top) < k:
        _log.info("truncated_svd: matrix rank %d below requested k=%d", len(top), k)

    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    U, V = U * signs, V * signs

    rv = m.row_vocab if isinstance(m, SparseInteractionMatrix) else _default_vocab("r", n)
    cv = m.col_vocab if isinstance(m, SparseInteractionMatrix) else _default_vocab("c", p)
    return SvdModel(EmbeddingMatrix(rv, U), top.copy(), EmbeddingMatrix(cv, V), k, sweeps)


def _default_vocab(prefix, n):
    return EntityVocab(f"{prefix}{i}" for i in range(n))


def absorb(svd: SvdModel) -> CoEmbeddingModel:
    """Fold the square root of the singular values into both factors."""
    root = np.sqrt(svd.singular_values)
    return CoEmbeddingModel(
        EmbeddingMatrix(svd.left.vocab, svd.left.values * root),
        EmbeddingMatrix(svd.right.vocab, svd.right.values * root),
        SVD_ABSORBED,
        singular_values=svd.singular_values.copy(),
        params={"rank": svd.rank, "requested_rank": svd.requested_rank},
    )


# -- implicit ALS -------------------------------------------------------------


def als_objective(m, U: np.ndarray, V: np.ndarray, alpha: float, lam: float) -> float:
    """sum_ij c_ij (p_ij - u_i.v_j)^2 + lam (|U|^2 + |V|^2) with c = 1 + alpha x, p = [x > 0].

    Evaluated without densifying: every cell contributes ``s^2`` at unit
    confidence, stored cells correct that term.
    """
    A = _as_operator(m)
    A = sp.coo_matrix(A)
    r, c, x = A.row, A.col, A.data
    s = np.einsum("ij,ij->i", U[r], V[c])
    conf = 1.0 + alpha * x
    pref = (x > 0).astype(np.float64)
    full = float(np.sum((U.T @ U) * (V.T @ V)))
    corr = float(np.sum(conf * (pref - s) ** 2 - s * s))
    return full + corr + lam * (float(np.sum(U * U)) + float(np.sum(V * V)))


def als_solve_rows(
    csr: sp.csr_matrix,
    other: np.ndarray,
    alpha: float,
    lam: float,
    gram: np.ndarray | None = None,
    block_bytes: int = 1 << 26,
) -> np.ndarray:
    """Exact ridge update for every row of ``csr`` against the fixed factor ``other``.

    Row ``i`` solves ``(Y^T C_i Y + lam I) u = Y^T C_i p_i`` using
    ``Y^T C_i Y = Y^T Y + Y^T (C_i - I) Y`` so only stored cells are touched.
    """
    csr = sp.csr_matrix(csr)
    n = csr.shape[0]
    k = other.shape[1]
    if gram is None:
        gram = other.T @ other
    base = gram + lam * np.eye(k)
    out = np.empty((n, k))
    indptr, indices, data = csr.indptr, csr.indices, csr.data
    # bound the (nnz, k, k) outer-product buffer
    per_nz = max(1, 8 * k * k)
    start = 0
    while start < n:
        budget = indptr[start] + block_bytes // per_nz
        stop = int(np.searchsorted(indptr, budget, side="right")) - 1
        stop = min(n, max(stop, start + 1))
        lo, hi = indptr[start], indptr[stop]
        counts = np.diff(indptr[start:stop + 1])
        A = np.broadcast_to(base, (stop - start, k, k)).copy()
        rhs = np.zeros((stop - start, k))
        if hi > lo:
            rowid = np.repeat(np.arange(stop - start), counts)
            x = data[lo:hi]
            Y = other[indices[lo:hi]]
            conf = 1.0 + alpha * x
            pref = (x > 0).astype(np.float64)
            np.add.at(A, rowid, (conf - 1.0)[:, None, None] * Y[:, :, None] * Y[:, None, :])
            np.add.at(rhs, rowid, (conf * pref)[:, None] * Y)
        try:
            np.linalg.cholesky(A)
            out[start:stop] = np.linalg.solve(A, rhs[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError as exc:
            raise AlsSolverError(f"normal equations not positive definite in rows {start}..{stop}") from exc
        start = stop
    if not np.all(np.isfinite(out)):
        raise AlsSolverError("non-finite factor produced by ALS solve")
    return out


def implicit_als(
    m: SparseInteractionMatrix,
    k: int,
    alpha: float = 40.0,
    lam: float = 0.1,
    iters: int = 15,
    seed: int = 0,
    track_objective: bool = True,
) -> CoEmbeddingModel:
    """Implicit-feedback ALS with confidence ``1 + alpha*x`` and binary preference.

    Each sweep solves the item factors against the current user factors and
    then the user factors against the new item factors, so the returned user
    rows are exactly the ridge solutions for the returned item matrix.
    ``trace`` holds the objective at init and after every half-step.
    """
    if k < 1 or alpha <= 0 or lam <= 0 or iters < 1:
        raise ValueError("need k >= 1, alpha > 0, lam > 0, iters >= 1")
    X = sp.csr_matrix(_as_operator(m))
    XT = X.T.tocsr()
    n, p = X.shape
    rng = np.random.default_rng(seed)
    U = rng.uniform(-0.01, 0.01, size=(n, k))
    V = rng.uniform(-0.01, 0.01, size=(p, k))
    trace = []
    if track_objective:
        trace.append(als_objective(X, U, V, alpha, lam))
    for it in range(iters):
        V = als_solve_rows(XT, U, alpha, lam)
        if track_objective:
            trace.append(als_objective(X, U, V, alpha, lam))
        U = als_solve_rows(X, V, alpha, lam)
        if track_objective:
            trace.append(als_objective(X, U, V, alpha, lam))
            _log.debug("als iter %d objective %.6g", it, trace[-1])
    rv = m.row_vocab if isinstance(m, SparseInteractionMatrix) else _default_vocab("r", n)
    cv = m.col_vocab if isinstance(m, SparseInteractionMatrix) else _default_vocab("c", p)
    return CoEmbeddingModel(
        EmbeddingMatrix(rv, U),
        EmbeddingMatrix(cv, V),
        ALS,
        params={"rank": k, "alpha": alpha, "lambda": lam, "iters": iters, "seed": seed},
        trace=tuple(trace),
    )


# -- persistence ----------------------------------------------------------------


def save_model(model: CoEmbeddingModel, out_dir, **manifest) -> Path:
    """Write ``left.bin``, ``right.bin`` and ``model.json`` into ``out_dir``."""
    from .io import write_embeddings

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_embeddings(model.left_star, out / "left.bin")
    write_embeddings(model.right_star, out / "right.bin")
    doc = {
        "kind": model.kind,
        "dim": model.dim,
        "params": model.params,
        "singular_values": None if model.singular_values is None else model.singular_values.tolist(),
    }
    doc.update(manifest)
    (out / "model.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return out


def load_model(model_dir) -> CoEmbeddingModel:
    from .io import read_embeddings

    d = Path(model_dir)
    doc = json.loads((d / "model.json").read_text())
    sv = doc.get("singular_values")
    return CoEmbeddingModel(
        read_embeddings(d / "left.bin"),
        read_embeddings(d / "right.bin"),
        doc["kind"],
        singular_values=None if sv is None else np.asarray(sv, dtype=np.float64),
        params=doc.get("params", {}),
    )
