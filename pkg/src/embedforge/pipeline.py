"""TOML-configured pipeline runner.

A pipeline file has a global ``seed``, an optional ``workdir`` and
``summary`` path, an ``[inputs]`` table of named input files and an ordered
list of ``[[step]]`` tables::

    seed = 7
    workdir = "out"

    [inputs]
    corpus = "corpus.txt"
    suite = "suite.toml"

    [[step]]
    name = "pairs"
    op = "skipgram"
    corpus = "@corpus"
    window = 2

    [[step]]
    name = "words"
    op = "cooccur"
    pairs = "@pairs"
    dim = 16

Parameters that take a file accept either a path (relative to the config
file) or ``@name``, naming an input or the output of an earlier step. Step
outputs land in ``workdir``. Every randomized step gets its own seed derived
from the global seed and the step index.
"""
from __future__ import annotations

import json
import logging
import os
import sys
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import registry
from .bench import BenchmarkReport, load_suite, run_suite
from .cooccur import CooccurConfig, PairStream, detect_phrases, skipgram_pairs, train
from .core import normalize
from .democratize import AutoencoderSpec, compress_embedding, load_autoencoder, save_autoencoder, train_autoencoder
from .factorize import absorb, implicit_als, load_model, save_model, truncated_svd
from .foldin import FoldInMatrix, batch_fold_in, foldin_experiment
from .io import (embeddings_to_bytes, file_digest, iter_interaction_records, read_embeddings,
                 read_interactions, write_embeddings)

_log = logging.getLogger(__name__)

__all__ = [
    "PipelineConfig",
    "PipelineError",
    "ValidationError",
    "Step",
    "load_pipeline",
    "parse_pipeline",
    "run_pipeline",
    "step_seed",
    "OPS",
    "EXIT_OK",
    "EXIT_VALIDATION",
    "EXIT_STEP_FAILED",
]

EXIT_OK, EXIT_VALIDATION, EXIT_STEP_FAILED = 0, 1, 2
INCOMPLETE = "INCOMPLETE"


class PipelineError(RuntimeError):
    pass


class ValidationError(PipelineError, ValueError):
    pass


def step_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


# -- operations -----------------------------------------------------------------------
#
# Every operation is a plain function taking keyword arguments. ``IN`` marks
# parameters that name an existing file or directory, ``OUT`` the single
# artifact the step produces. ``REQUIRED`` has no default.

REQUIRED = object()
IN = "in"
OUT = "out"


@dataclass(frozen=True)
class Param:
    default: object = REQUIRED
    kind: type | str | tuple = object


@dataclass(frozen=True)
class Op:
    fn: Callable
    params: dict
    out_suffix: str
    randomized: bool = False
    uses_workers: bool = False


def op_skipgram(corpus, out, window=5, min_count=1, phrase_threshold=0):
    with open(corpus, encoding="utf-8") as fh:
        seqs = [line.split() for line in fh]
    if phrase_threshold:
        seqs = detect_phrases(seqs, phrase_threshold)
    ps = skipgram_pairs(seqs, window, min_count)
    counts = Counter(ps.key_pairs())
    with open(out, "w", encoding="utf-8") as fh:
        for (a, b), c in sorted(counts.items()):
            fh.write(f"{a}\t{b}\t{c}\n")
    return {"pairs": len(ps), "distinct": len(counts)}


def op_cooccur(pairs, out, dim=64, negatives=5, lr=0.025, epochs=5, exponent=0.75, min_count=1,
               shared_vocab=True, right_out=None, seed=0, workers=1):
    stream = PairStream.from_records(iter_interaction_records(pairs), shared_vocab=shared_vocab)
    cfg = CooccurConfig(dim=dim, negatives=negatives, lr=lr, epochs=epochs, exponent=exponent,
                        seed=seed, min_count=min_count)
    E1, E2, trace = train(stream, cfg, workers=workers, return_trace=True)
    write_embeddings(E1, out)
    if right_out:
        write_embeddings(E2, right_out)
    return {"count": len(E1), "final_objective": trace[-1] if trace else None}


def _factor_input(input, normalize_input):
    m = read_interactions(input)
    return (normalize(m) if normalize_input else m), file_digest(input)


def op_svd(input, out, rank, oversample=10, power_iters=2, normalize_input=True, seed=0):
    m, digest = _factor_input(input, normalize_input)
    s = truncated_svd(m, rank, oversample=oversample, power_iters=power_iters, seed=seed)
    model = absorb(s)
    params = {"rank": rank, "oversample": oversample, "power_iters": power_iters,
              "normalize": normalize_input, "truncated": s.truncated}
    save_model(model, out, seed=seed, input_digest=digest, hyperparameters=params)
    return {"rank": s.rank, "truncated": s.truncated}


def op_als(input, out, rank, alpha=40.0, lam=0.1, iters=15, normalize_input=True, seed=0):
    m, digest = _factor_input(input, normalize_input)
    model = implicit_als(m, rank, alpha=alpha, lam=lam, iters=iters, seed=seed)
    params = {"rank": rank, "alpha": alpha, "lambda": lam, "iters": iters, "normalize": normalize_input}
    save_model(model, out, seed=seed, input_digest=digest, hyperparameters=params)
    return {"final_objective": model.trace[-1] if model.trace else None}


def op_foldin(model, interactions, out):
    fold = FoldInMatrix.from_model(load_model(model))
    res = batch_fold_in(iter_interaction_records(interactions), fold)
    write_embeddings(res.embeddings, out)
    return {"count": len(res.embeddings), "unknown_items": res.n_unknown}


def op_democratize(input, out, layers, lr=0.01, epochs=100, batch_size=64, seed=0):
    emb = read_embeddings(input)
    spec = AutoencoderSpec(tuple(layers), lr=lr, epochs=epochs, batch_size=batch_size, seed=seed)
    model = train_autoencoder(emb, spec)
    save_autoencoder(model, out)
    return {"final_loss": model.loss_trace[-1]}


def op_encode(model, input, out, layer):
    ae = load_autoencoder(model)
    write_embeddings(compress_embedding(ae, read_embeddings(input), layer), out)
    return {"dim": ae.spec.layer_dims[layer]}


def op_bench(embedding, suite, out, embedding_name="embedding", version="0", seed=0, timestamp=None):
    tasks, _ = load_suite(suite)
    report = run_suite(read_embeddings(embedding), tasks, seed=seed, name=embedding_name, version=str(version),
                       timestamp=timestamp)
    report.save(out)
    return {"tasks": len(report.rows), "failed": sum(r.status != "ok" for r in report.rows)}


def op_publish(root, entry, embedding, report=None, kind="embedding", hyperparameters=None, seed=None):
    emb = read_embeddings(embedding)
    payload = embeddings_to_bytes(emb)
    manifest = dict(hyperparameters or {})
    manifest.update(kind=kind, seed=seed)
    rep = Path(report).read_text(encoding="utf-8") if report else None
    e = registry.publish(root, entry, payload, manifest=manifest, report=rep)
    return {"version": e.version, "digest": e.digest, "path": str(e.path)}


def op_experiment_foldin(input, out, percents, k=8, alpha=40.0, lam=0.1, iters=15, train_ratio=0.5,
                         normalize_input=True, seed=0):
    rows = foldin_experiment(read_interactions(input), percents, k=k, alpha=alpha, lam=lam, iters=iters,
                             train_ratio=train_ratio, seed=seed, normalize=normalize_input)
    write_experiment_table(rows, out)
    return {"rows": len(rows)}


def write_experiment_table(rows, out) -> None:
    fmt = lambda v: "NA" if v is None else f"{v:.6f}"
    lines = ["percent\tndcg_trained\tndcg_folded\tndcg_all\tn_trained\tn_folded"]
    for r in rows:
        lines.append(f"{r.percent:g}\t{fmt(r.ndcg_trained)}\t{fmt(r.ndcg_folded)}\t{fmt(r.ndcg_all)}"
                     f"\t{r.n_trained}\t{r.n_folded}")
    Path(out).write_text("\n".join(lines) + "\n", encoding="utf-8")


_NUM = (int, float)
OPS = {
    "skipgram": Op(op_skipgram, {"corpus": Param(kind=IN), "window": Param(5, int), "min_count": Param(1, int),
                                 "phrase_threshold": Param(0, int)}, ".tsv"),
    "cooccur": Op(op_cooccur, {"pairs": Param(kind=IN), "dim": Param(64, int), "negatives": Param(5, int),
                               "lr": Param(0.025, _NUM), "epochs": Param(5, int), "exponent": Param(0.75, _NUM),
                               "min_count": Param(1, int), "shared_vocab": Param(True, bool),
                               "right_out": Param(None, OUT)}, ".bin", randomized=True, uses_workers=True),
    "svd": Op(op_svd, {"input": Param(kind=IN), "rank": Param(kind=int), "oversample": Param(10, int),
                       "power_iters": Param(2, int), "normalize_input": Param(True, bool)}, "", randomized=True),
    "als": Op(op_als, {"input": Param(kind=IN), "rank": Param(kind=int), "alpha": Param(40.0, _NUM),
                       "lam": Param(0.1, _NUM), "iters": Param(15, int), "normalize_input": Param(True, bool)},
              "", randomized=True),
    "foldin": Op(op_foldin, {"model": Param(kind=IN), "interactions": Param(kind=IN)}, ".bin"),
    "democratize": Op(op_democratize, {"input": Param(kind=IN), "layers": Param(kind=list), "lr": Param(0.01, _NUM),
                                       "epochs": Param(100, int), "batch_size": Param(64, int)}, "", randomized=True),
    "encode": Op(op_encode, {"model": Param(kind=IN), "input": Param(kind=IN), "layer": Param(kind=int)}, ".bin"),
    "bench": Op(op_bench, {"embedding": Param(kind=IN), "suite": Param(kind=IN), "embedding_name": Param("embedding", str),
                           "version": Param("0", (str, int))}, ".json", randomized=True),
    "publish": Op(op_publish, {"root": Param(kind=str), "entry": Param(kind=str), "embedding": Param(kind=IN),
                               "report": Param(None, IN), "kind": Param("embedding", str),
                               "hyperparameters": Param(None, dict)}, ""),
    "experiment_foldin": Op(op_experiment_foldin, {"input": Param(kind=IN), "percents": Param(kind=list),
                                                   "k": Param(8, int), "alpha": Param(40.0, _NUM),
                                                   "lam": Param(0.1, _NUM), "iters": Param(15, int),
                                                   "train_ratio": Param(0.5, _NUM),
                                                   "normalize_input": Param(True, bool)},
                            ".tsv", randomized=True),
}

# ops whose result is not a file written under workdir
_NO_OUT = {"publish"}


# -- configuration ----------------------------------------------------------------------

TOP_KEYS = {"seed", "workdir", "summary", "inputs", "step"}


@dataclass
class Step:
    index: int
    name: str
    op: str
    params: dict
    out: Path | None
    seed: int | None

    def plan_line(self) -> str:
        shown = {k: (str(v) if isinstance(v, Path) else v) for k, v in self.params.items()}
        seed = "" if self.seed is None else f" seed={self.seed}"
        out = f" -> {self.out}" if self.out else ""
        return f"[{self.index}] {self.name} ({self.op}){seed} {json.dumps(shown, sort_keys=True)}{out}"


@dataclass
class PipelineConfig:
    seed: int
    workdir: Path
    summary: Path
    inputs: dict
    steps: list = field(default_factory=list)
    base: Path = Path(".")

    def rel(self, path) -> str:
        """``path`` relative to the config directory, for location-independent summaries."""
        return os.path.relpath(path, self.base)


def _typecheck(where: str, key: str, value, kind) -> None:
    if kind in (IN, OUT, object):
        if not isinstance(value, str):
            raise ValidationError(f"{where}: {key!r} must be a path string")
        return
    if kind is bool:
        ok = isinstance(value, bool)
    elif kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        kinds = kind if isinstance(kind, tuple) else (kind,)
        ok = isinstance(value, kinds) and not (isinstance(value, bool) and bool not in kinds)
    if not ok:
        raise ValidationError(f"{where}: {key!r} has invalid value {value!r}")


def parse_pipeline(doc: dict, base_dir=".") -> PipelineConfig:
    """Validate a parsed TOML document; nothing is executed or written."""
    base = Path(base_dir)
    unknown = sorted(set(doc) - TOP_KEYS)
    if unknown:
        raise ValidationError(f"unknown top-level key {unknown[0]!r}")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ValidationError(f"seed must be an integer, got {seed!r}")
    workdir = base / doc.get("workdir", "out")
    summary = base / doc["summary"] if "summary" in doc else workdir / "run.json"

    inputs = {}
    for key, value in (doc.get("inputs") or {}).items():
        if not isinstance(value, str):
            raise ValidationError(f"inputs: {key!r} must be a path string")
        path = base / value
        if not path.exists():
            raise ValidationError(f"inputs: {key!r} points to missing path {path}")
        inputs[key] = path

    produced = {}
    steps = []
    raw_steps = doc.get("step", [])
    if not isinstance(raw_steps, list):
        raise ValidationError("'step' must be an array of tables ([[step]])")
    for i, raw in enumerate(raw_steps):
        where = f"step {i}"
        if "name" not in raw or "op" not in raw:
            raise ValidationError(f"{where}: every step needs 'name' and 'op'")
        name, opname = raw["name"], raw["op"]
        where = f"step {i} ({name})"
        if name in produced or name in inputs:
            raise ValidationError(f"{where}: duplicate name {name!r}")
        if opname not in OPS:
            raise ValidationError(f"{where}: unknown op {opname!r}; expected one of {sorted(OPS)}")
        op = OPS[opname]
        allowed = set(op.params) | {"name", "op"} | ({"out"} if opname not in _NO_OUT else set())
        extra = sorted(set(raw) - allowed)
        if extra:
            raise ValidationError(f"{where}: unknown key {extra[0]!r}")

        params = {}
        for key, p in op.params.items():
            if key not in raw:
                if p.default is REQUIRED:
                    raise ValidationError(f"{where}: missing required key {key!r}")
                if p.default is not None:
                    params[key] = p.default
                continue
            value = raw[key]
            _typecheck(where, key, value, p.kind)
            if p.kind == IN:
                if value.startswith("@"):
                    ref = value[1:]
                    if ref in inputs:
                        value = inputs[ref]
                    elif ref in produced:
                        value = produced[ref]
                    else:
                        raise ValidationError(f"{where}: {key!r} refers to undeclared {value!r}")
                else:
                    value = base / value
                    if not value.exists():
                        raise ValidationError(f"{where}: {key!r} points to missing path {value}")
            elif p.kind == OUT:
                value = workdir / value
            elif key == "root":
                value = base / value
            params[key] = value

        out = None
        if opname not in _NO_OUT:
            out_name = raw.get("out", name + op.out_suffix)
            _typecheck(where, "out", out_name, OUT)
            out = workdir / out_name
            produced[name] = out
        seed_i = step_seed(seed, i) if op.randomized else None
        steps.append(Step(i, name, opname, params, out, seed_i))
    return PipelineConfig(seed, workdir, summary, inputs, steps, base)


def _load_toml(path: Path) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        return tomllib.loads(path.read_text(encoding="utf-8"))
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def load_pipeline(path) -> PipelineConfig:
    path = Path(path)
    return parse_pipeline(_load_toml(path), path.parent)


# -- execution -------------------------------------------------------------------------


def _artifact_digests(step: Step, info: dict, cfg: PipelineConfig) -> dict:
    """Digest every file the step produced.

    Benchmark reports are digested by content, leaving out per-row
    timestamps, so identical results give identical digests across runs.
    """
    if step.op == "publish":
        return {cfg.rel(info["path"]): info["digest"]}
    out = {}
    paths = [step.out]
    if step.params.get("right_out"):
        paths.append(step.params["right_out"])
    for p in paths:
        if p.is_dir():
            for f in sorted(p.rglob("*")):
                if f.is_file():
                    out[cfg.rel(f)] = file_digest(f)
        elif step.op == "bench":
            out[cfg.rel(p)] = BenchmarkReport.load(p).content_digest()
        elif p.exists():
            out[cfg.rel(p)] = file_digest(p)
    return out


def _json_safe(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    return v


def _execute(step: Step, cfg: PipelineConfig, workers: int) -> dict:
    op = OPS[step.op]
    kwargs = dict(step.params)
    if step.out is not None:
        kwargs["out"] = step.out
    if op.randomized:
        kwargs["seed"] = step.seed
    if op.uses_workers:
        kwargs["workers"] = workers
    if step.op == "publish":
        kwargs["seed"] = cfg.seed
    return op.fn(**kwargs) or {}


def run_pipeline(config, dry_run: bool = False, workers: int = 1, stream=None) -> tuple[int, dict]:
    """Run a pipeline; returns ``(exit_code, summary)``.

    ``config`` is a path or an already parsed :class:`PipelineConfig`.
    Validation problems return exit code 1 before anything is written. A
    failing step stops the run with exit code 2; outputs of earlier steps are
    kept and ``workdir/INCOMPLETE`` names the failed step.
    """
    stream = sys.stdout if stream is None else stream
    try:
        cfg = config if isinstance(config, PipelineConfig) else load_pipeline(config)
    except ValidationError as exc:
        _log.error("invalid pipeline: %s", exc)
        return EXIT_VALIDATION, {"status": "invalid", "error": str(exc)}

    if dry_run:
        print(f"pipeline: {len(cfg.steps)} steps, seed={cfg.seed}, workdir={cfg.workdir}", file=stream)
        for step in cfg.steps:
            print(step.plan_line(), file=stream)
        return EXIT_OK, {"status": "planned", "steps": [s.name for s in cfg.steps]}

    cfg.workdir.mkdir(parents=True, exist_ok=True)
    marker = cfg.workdir / INCOMPLETE
    if marker.exists():
        marker.unlink()
    summary = {"status": "running", "seed": cfg.seed, "workers": workers, "steps": []}
    code = EXIT_OK
    for step in cfg.steps:
        _log.info("step %d %s (%s) seed=%s params=%s", step.index, step.name, step.op, step.seed,
                  json.dumps(_json_safe(step.params), sort_keys=True))
        t0 = time.perf_counter()
        record = {"name": step.name, "op": step.op, "seed": step.seed, "params": _json_safe(step.params)}
        try:
            if step.out is not None:
                step.out.parent.mkdir(parents=True, exist_ok=True)
            info = _execute(step, cfg, workers)
            record.update(status="ok", info=_json_safe(info), artifacts=_artifact_digests(step, info, cfg))
        except Exception as exc:
            record.update(status="failed", error=f"{type(exc).__name__}: {exc}")
            _log.error("step %s failed: %s", step.name, record["error"])
            marker.write_text(json.dumps({"failed_step": step.name, "error": record["error"]}) + "\n")
            summary["failed_step"] = step.name
            code = EXIT_STEP_FAILED
        record["duration_s"] = round(time.perf_counter() - t0, 6)
        summary["steps"].append(record)
        if code:
            break
        _log.info("step %s done in %.3fs", step.name, record["duration_s"])
    summary["status"] = "ok" if code == EXIT_OK else "incomplete"
    summary["artifacts"] = {k: v for s in summary["steps"] for k, v in s.get("artifacts", {}).items()}
    cfg.summary.parent.mkdir(parents=True, exist_ok=True)
    cfg.summary.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return code, summary
