"""Embedding benchmarks: similarity metrics, probes, rank metrics, drift overlap.

Tie conventions are fixed: Spearman uses midranks, ROC-AUC gives half
credit to tied positive/negative pairs, and top-k selections order by count
descending then key ascending.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .core import EmbeddingMatrix

_log = logging.getLogger(__name__)

__all__ = [
    "similarity",
    "roc_auc",
    "spearman_rho",
    "jaccard",
    "ndcg",
    "topk_overlap",
    "LogisticProbe",
    "probe_loss_grad",
    "train_probe",
    "probe_auc",
    "follow_jaccard_task",
    "TaskSpec",
    "ReportRow",
    "BenchmarkReport",
    "run_suite",
    "load_suite",
]

METRICS = ("dot", "cosine", "euclidean")


def similarity(u, v, metric: str = "dot") -> float:
    """``dot``: u.v, ``cosine``: u.v/(|u||v|), ``euclidean``: 1 - |u - v| (unclamped)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch {u.shape} vs {v.shape}")
    if metric == "dot":
        return float(u @ v)
    if metric == "cosine":
        nu, nv = np.linalg.norm(u), np.linalg.norm(v)
        if nu == 0 or nv == 0:
            raise ValueError("cosine similarity undefined for a zero vector")
        return float(u @ v / (nu * nv))
    if metric == "euclidean":
        return float(1.0 - np.linalg.norm(u - v))
    raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative (ties = 1/2)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels must align")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes")
    ranks = rankdata(s, method="average")
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def spearman_rho(xs, ys) -> float:
    """Pearson correlation of midranks."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("xs and ys must be paired 1-D sequences")
    if len(x) < 2:
        raise ValueError("spearman_rho needs at least 2 pairs")
    rx = rankdata(x, method="average")
    ry = rankdata(y, method="average")
    rx -= rx.mean()
    ry -= ry.mean()
    den = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if den == 0:
        raise ValueError("zero rank variance")
    return float(rx @ ry) / den


def jaccard(a, b) -> float:
    a, b = set(a), set(b)
    union = a | b
    if not union:
        raise ValueError("jaccard undefined for two empty sets")
    return len(a & b) / len(union)


def ndcg(ranking: Sequence, relevant, k: int) -> float:
    """Binary-gain NDCG@k with ``1/log2(position + 1)`` discount."""
    if k < 1:
        raise ValueError("k must be >= 1")
    relevant = set(relevant)
    if not relevant:
        raise ValueError("ndcg needs a non-empty relevant set")
    dcg = sum(1.0 / math.log2(pos + 2) for pos, item in enumerate(list(ranking)[:k]) if item in relevant)
    ideal = sum(1.0 / math.log2(pos + 2) for pos in range(min(k, len(relevant))))
    return dcg / ideal


def _topk_keys(counts: Mapping, k: int) -> set:
    if len(counts) < k:
        raise ValueError(f"need at least {k} keys, got {len(counts)}")
    return {key for key, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:k]}


def topk_overlap(counts_a: Mapping, counts_b: Mapping, k: int) -> float:
    """Percent of this period's top-k keys that were also top-k in the other period."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return 100.0 * len(_topk_keys(counts_a, k) & _topk_keys(counts_b, k)) / k


# -- logistic probe --------------------------------------------------------------


def probe_loss_grad(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, l2: float):
    """Mean log-loss plus ``l2/2 |w|^2``, with gradients w.r.t. ``w`` and ``b``."""
    z = X @ w + b
    # log(1 + e^z) - y z, computed stably
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z)) + 0.5 * l2 * float(w @ w)
    r = 0.5 * (1.0 + np.tanh(0.5 * z)) - y
    gw = X.T @ r / len(y) + l2 * w
    gb = float(r.mean())
    return loss, gw, gb


@dataclass
class LogisticProbe:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    scale: np.ndarray
    converged: bool
    iters: int
    loss: float

    def decision_function(self, X) -> np.ndarray:
        Xs = (np.asarray(X, dtype=np.float64) - self.mean) / self.scale
        return Xs @ self.weights + self.bias

    def predict_proba(self, X) -> np.ndarray:
        return 0.5 * (1.0 + np.tanh(0.5 * self.decision_function(X)))


def train_probe(features, labels, l2: float = 1e-4, iters: int = 500, tol: float = 1e-6) -> LogisticProbe:
    """L2-regularized logistic regression by full-batch gradient descent.

    Features are standardized with training statistics; the step size is the
    inverse Lipschitz constant of the loss so every step is a descent step.
    The result is flagged ``converged=False`` when the gradient norm is still
    above ``tol`` after ``iters`` steps.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels).astype(np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("features must be (n, d) and align with labels")
    n_pos = int(y.sum())
    if n_pos < 2 or len(y) - n_pos < 2:
        raise ValueError("train_probe needs at least 2 samples per class")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Xs = (X - mean) / scale
    lip = 0.25 * (np.linalg.norm(Xs, 2) ** 2 / len(y) + 1.0) + l2
    step = 1.0 / lip
    w = np.zeros(X.shape[1])
    b = 0.0
    converged = False
    it = 0
    for it in range(1, iters + 1):
        loss, gw, gb = probe_loss_grad(w, b, Xs, y, l2)
        if math.sqrt(float(gw @ gw) + gb * gb) < tol:
            converged = True
            break
        w = w - step * gw
        b = b - step * gb
    loss, _, _ = probe_loss_grad(w, b, Xs, y, l2)
    if not converged:
        _log.debug("train_probe: gradient norm above %g after %d iterations", tol, iters)
    return LogisticProbe(w, b, mean, scale, converged, it, loss)


def _split(n: int, rng: np.random.Generator, train_frac: float = 0.8):
    perm = rng.permutation(n)
    cut = int(round(train_frac * n))
    return perm[:cut], perm[cut:]


def probe_auc(X: np.ndarray, labels: Sequence, seed: int = 0, l2: float = 1e-4, iters: int = 500) -> float:
    """Held-out ROC-AUC of a probe on an 80/20 seeded split.

    Binary labels give one AUC; more classes are scored one-vs-rest and
    macro-averaged over classes that have both positives and negatives in
    each split.
    """
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValueError("need at least two label classes")
    rng = np.random.default_rng(seed)
    tr, te = _split(len(labels), rng)
    targets = classes[1:] if len(classes) == 2 else classes
    aucs = []
    for c in targets:
        y = labels == c
        ytr, yte = y[tr], y[te]
        if min(ytr.sum(), (~ytr).sum()) < 2 or yte.all() or not yte.any():
            continue
        probe = train_probe(X[tr], ytr, l2=l2, iters=iters)
        aucs.append(roc_auc(probe.decision_function(X[te]), yte))
    if not aucs:
        raise ValueError("no class has enough samples in both splits")
    return float(np.mean(aucs))


def follow_jaccard_task(emb: EmbeddingMatrix, follow_sets: Mapping, pairs, metric: str = "cosine",
                        return_counts: bool = False):
    """Spearman rho between embedding similarity and follow-set Jaccard over user pairs.

    Pairs whose users lack an embedding or a follow set are skipped.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    sims, jacs = [], []
    skipped = 0
    for u1, u2 in pairs:
        if u1 not in emb or u2 not in emb or u1 not in follow_sets or u2 not in follow_sets:
            skipped += 1
            continue
        try:
            j = jaccard(follow_sets[u1], follow_sets[u2])
            s = similarity(emb[u1], emb[u2], metric)
        except ValueError:
            skipped += 1
            continue
        sims.append(s)
        jacs.append(j)
    if not sims:
        raise ValueError(f"all {skipped} pairs were unresolvable")
    if skipped:
        _log.info("follow_jaccard_task: skipped %d of %d pairs", skipped, skipped + len(sims))
    rho = spearman_rho(sims, jacs)
    return (rho, len(sims), skipped) if return_counts else rho


# -- suite and report --------------------------------------------------------------

PROBE_KINDS = ("topic_probe", "metadata_probe")
TASK_KINDS = PROBE_KINDS + ("follow_jaccard",)


@dataclass
class TaskSpec:
    """One benchmark task with its in-memory dataset.

    Probe tasks use ``labels`` (key -> label). ``follow_jaccard`` uses
    ``follows`` (key -> set of followed keys) and either explicit ``pairs``
    or ``n_pairs`` pairs sampled with the task seed.
    """

    name: str
    kind: str
    labels: dict | None = None
    follows: dict | None = None
    pairs: list | None = None
    n_pairs: int = 200
    metric: str = "cosine"
    l2: float = 1e-4
    iters: int = 500

    def dataset_digest(self) -> str:
        h = hashlib.sha256()
        if self.labels is not None:
            for k in sorted(self.labels):
                h.update(f"L\t{k}\t{self.labels[k]}\n".encode())
        if self.follows is not None:
            for k in sorted(self.follows):
                h.update(("F\t" + k + "\t" + "\t".join(sorted(self.follows[k])) + "\n").encode())
        if self.pairs is not None:
            for a, b in self.pairs:
                h.update(f"P\t{a}\t{b}\n".encode())
        return h.hexdigest()


@dataclass
class ReportRow:
    task: str
    metric: str
    value: float | None
    dataset_digest: str
    timestamp: float
    status: str = "ok"
    error: str | None = None


@dataclass
class BenchmarkReport:
    embedding: str
    version: str
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {"embedding": self.embedding, "version": self.version,
               "metadata": self.metadata, "rows": [asdict(r) for r in self.rows]}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "BenchmarkReport":
        doc = json.loads(text)
        return cls(doc["embedding"], doc["version"], [ReportRow(**r) for r in doc["rows"]], doc.get("metadata", {}))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "BenchmarkReport":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def content_digest(self) -> str:
        """Digest of the results alone, ignoring timestamps."""
        stable = [(r.task, r.metric, r.value, r.dataset_digest, r.status, r.error) for r in self.rows]
        doc = {"embedding": self.embedding, "version": self.version, "rows": stable}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    def value(self, task: str) -> float | None:
        for r in self.rows:
            if r.task == task:
                return r.value
        raise KeyError(task)


def task_seed(suite_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([suite_seed, index]).generate_state(1)[0])


def _run_task(emb: EmbeddingMatrix, task: TaskSpec, seed: int) -> tuple[str, float]:
    if task.kind in PROBE_KINDS:
        if not task.labels:
            raise ValueError("probe task without labels")
        keys = [k for k in task.labels if k in emb]
        if len(keys) < len(task.labels):
            _log.info("%s: %d labelled keys have no embedding", task.name, len(task.labels) - len(keys))
        X = np.stack([emb[k] for k in keys])
        y = [task.labels[k] for k in keys]
        return "roc_auc", probe_auc(X, y, seed=seed, l2=task.l2, iters=task.iters)
    if task.kind == "follow_jaccard":
        if not task.follows:
            raise ValueError("follow_jaccard task without follow sets")
        pairs = task.pairs
        if pairs is None:
            users = sorted(k for k in task.follows if k in emb)
            rng = np.random.default_rng(seed)
            idx = rng.integers(0, len(users), size=(task.n_pairs, 2))
            pairs = [(users[a], users[b]) for a, b in idx if a != b]
        return f"spearman_rho[{task.metric}]", follow_jaccard_task(emb, task.follows, pairs, task.metric)
    raise ValueError(f"unknown task kind {task.kind!r}")


def run_suite(emb: EmbeddingMatrix, tasks: Sequence[TaskSpec], seed: int = 0, name: str = "embedding",
              version: str = "0", timestamp: float | None = None) -> BenchmarkReport:
    """Run ``tasks`` in order; a failing task is recorded and the suite continues."""
    report = BenchmarkReport(name, str(version), metadata={"seed": seed, "dim": emb.dim, "count": len(emb)})
    for i, task in enumerate(tasks):
        ts = time.time() if timestamp is None else float(timestamp)
        digest = task.dataset_digest()
        try:
            metric, value = _run_task(emb, task, task_seed(seed, i))
            report.rows.append(ReportRow(task.name, metric, float(value), digest, ts))
        except Exception as exc:  # recorded, not raised
            _log.warning("benchmark task %s failed: %s", task.name, exc)
            report.rows.append(ReportRow(task.name, "error", None, digest, ts, "failed", f"{type(exc).__name__}: {exc}"))
    return report


# -- suite files -------------------------------------------------------------------


def read_labels(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\r\n")
            if line and not line.startswith("#"):
                key, label = line.split("\t")[:2]
                out[key] = label
    return out


def read_follows(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\r\n")
            if line and not line.startswith("#"):
                key, *followed = line.split("\t")
                out[key] = set(f for f in followed if f)
    return out


def read_pairs(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [tuple(line.rstrip("\r\n").split("\t")[:2]) for line in fh if line.strip() and not line.startswith("#")]


_TASK_KEYS = {"name", "kind", "labels", "follows", "pairs", "n_pairs", "metric", "l2", "iters"}


def load_suite(path) -> tuple[list[TaskSpec], int]:
    """Read a TOML suite: top-level ``seed`` and ``[[task]]`` tables.

    Dataset paths are resolved relative to the suite file.
    """
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib

    path = Path(path)
    doc = tomllib.loads(path.read_text(encoding="utf-8"))
    base = path.parent
    tasks = []
    for i, t in enumerate(doc.get("task", [])):
        unknown = set(t) - _TASK_KEYS
        if unknown:
            raise ValueError(f"task {i}: unknown keys {sorted(unknown)}")
        kind = t["kind"]
        if kind not in TASK_KINDS:
            raise ValueError(f"task {i}: unknown kind {kind!r}")
        spec = TaskSpec(name=t.get("name", f"{kind}_{i}"), kind=kind,
                        n_pairs=t.get("n_pairs", 200), metric=t.get("metric", "cosine"),
                        l2=t.get("l2", 1e-4), iters=t.get("iters", 500))
        if "labels" in t:
            spec.labels = read_labels(base / t["labels"])
        if "follows" in t:
            spec.follows = read_follows(base / t["follows"])
        if "pairs" in t:
            spec.pairs = read_pairs(base / t["pairs"])
        tasks.append(spec)
    return tasks, int(doc.get("seed", 0))
