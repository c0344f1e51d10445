"""Command line entry point: ``embedforge <command> ...``.

Each training command mirrors one pipeline operation; ``embedforge run``
executes a whole TOML pipeline. Logs go to standard error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, registry
from .factorize import load_model
from .foldin import LookalikeGroups, lookalike_features
from .io import embeddings_from_bytes, write_embeddings
from .pipeline import (EXIT_OK, EXIT_STEP_FAILED, EXIT_VALIDATION, op_als, op_bench, op_cooccur, op_democratize,
                       op_encode, op_experiment_foldin, op_foldin, op_publish, op_skipgram, op_svd, run_pipeline)

_log = logging.getLogger("embedforge")


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _print_info(info: dict) -> None:
    print(json.dumps(info, sort_keys=True, default=str))


# -- commands ----------------------------------------------------------------------


def cmd_svd(a):
    _print_info(op_svd(a.input, a.out, a.rank, oversample=a.oversample, power_iters=a.power_iters,
                       normalize_input=not a.raw, seed=a.seed))


def cmd_als(a):
    _print_info(op_als(a.input, a.out, a.rank, alpha=a.alpha, lam=a.lam, iters=a.iters,
                       normalize_input=not a.raw, seed=a.seed))


def cmd_cooccur(a):
    _print_info(op_cooccur(a.pairs, a.out, dim=a.dim, negatives=a.negatives, lr=a.lr, epochs=a.epochs,
                           exponent=a.exponent, min_count=a.min_count, shared_vocab=a.shared,
                           right_out=a.right_out, seed=a.seed, workers=a.workers))


def cmd_skipgram(a):
    out = Path(a.out)
    pairs_path = Path(a.pairs_out) if a.pairs_out else out.with_name(out.stem + ".pairs.tsv")
    op_skipgram(a.corpus, pairs_path, window=a.window, min_count=a.min_count, phrase_threshold=a.phrases)
    _print_info(op_cooccur(pairs_path, out, dim=a.dim, negatives=a.negatives, lr=a.lr, epochs=a.epochs,
                           exponent=a.exponent, min_count=1, shared_vocab=True, seed=a.seed,
                           workers=a.workers))


def cmd_foldin(a):
    _print_info(op_foldin(a.model, a.interactions, a.out))


def _read_groups(path) -> dict:
    groups = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\r\n")
            if line and not line.startswith("#"):
                group, member = line.split("\t")[:2]
                groups.setdefault(group, []).append(member)
    return groups


def cmd_lookalike(a):
    model = load_model(a.model)
    users, producers = model.left_star, model.right_star
    members = _read_groups(a.groups)
    groups = LookalikeGroups(
        [(g, np.array([users[k] for k in keys if k in users]).reshape(-1, users.dim)) for g, keys in members.items()],
        dim=users.dim)
    q = _floats(a.quantiles)
    out = open(a.out, "w", encoding="utf-8") if a.out else sys.stdout
    try:
        header = None
        with open(a.candidates, encoding="utf-8") as fh:
            for line in fh:
                key = line.strip().split("\t")[0]
                if not key or key.startswith("#"):
                    continue
                if key not in producers:
                    _log.warning("candidate %s not in model; skipped", key)
                    continue
                feats = lookalike_features(producers[key], groups, q, sentinel=a.sentinel)
                if header is None:
                    header = ["candidate"] + feats.names + [f"has_{g}" for g in groups.names]
                    out.write("\t".join(header) + "\n")
                cells = [f"{v:.9g}" for v in feats.values] + [str(int(p)) for p in feats.present]
                out.write(key + "\t" + "\t".join(cells) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()


def cmd_experiment(a):
    out = a.out or "/dev/stdout"
    op_experiment_foldin(a.input, out, _floats(a.percents), k=a.rank, alpha=a.alpha, lam=a.lam, iters=a.iters,
                         train_ratio=a.train_ratio, normalize_input=not a.raw, seed=a.seed)


def cmd_democratize(a):
    _print_info(op_democratize(a.input, a.out, _ints(a.layers), lr=a.lr, epochs=a.epochs,
                               batch_size=a.batch_size, seed=a.seed))


def cmd_encode(a):
    _print_info(op_encode(a.model, a.input, a.out, a.layer))


def cmd_bench(a):
    from .bench import load_suite
    seed = a.seed if a.seed is not None else load_suite(a.suite)[1]
    _print_info(op_bench(a.embedding, a.suite, a.out, embedding_name=a.name, version=a.version, seed=seed))


def cmd_registry(a):
    if a.action == "publish":
        hp = json.loads(a.hyperparameters) if a.hyperparameters else None
        _print_info(op_publish(a.root, a.name, a.embedding, report=a.report, kind=a.kind, hyperparameters=hp,
                               seed=a.seed))
    elif a.action == "fetch":
        payload, entry = registry.fetch(a.root, a.name, a.version)
        if a.out:
            out = Path(a.out)
            if out.suffix in (".bin", ".emb"):
                out.write_bytes(payload)
            else:
                write_embeddings(embeddings_from_bytes(payload), out)
        _print_info(entry.manifest)
    else:
        for e in registry.list_entries(a.root, a.name):
            print(f"{e.name}\tv{e.version}\t{e.created_at}\t{e.digest}\t{'report' if e.has_report else '-'}")


def cmd_run(a):
    code, summary = run_pipeline(a.config, dry_run=a.dry_run, workers=a.workers)
    if code == EXIT_VALIDATION:
        print(f"validation error: {summary['error']}", file=sys.stderr)
    elif code == EXIT_STEP_FAILED:
        print(f"step failed: {summary.get('failed_step')}", file=sys.stderr)
    return code


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="embedforge", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"embedforge {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("svd", help="truncated SVD co-embedding of an interaction TSV")
    s.add_argument("--input", required=True)
    s.add_argument("--rank", type=int, required=True)
    s.add_argument("--oversample", type=int, default=10)
    s.add_argument("--power-iters", type=int, default=2)
    s.add_argument("--raw", action="store_true", help="skip row/column normalization")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_svd)

    s = sub.add_parser("als", help="implicit-feedback ALS co-embedding")
    s.add_argument("--input", required=True)
    s.add_argument("--rank", type=int, default=8)
    s.add_argument("--alpha", type=float, default=40.0)
    s.add_argument("--lambda", dest="lam", type=float, default=0.1)
    s.add_argument("--iters", type=int, default=15)
    s.add_argument("--raw", action="store_true", help="skip row/column normalization")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_als)

    def sgd_args(s):
        s.add_argument("--dim", type=int, default=64)
        s.add_argument("--negatives", type=int, default=5)
        s.add_argument("--lr", type=float, default=0.025)
        s.add_argument("--epochs", type=int, default=5)
        s.add_argument("--exponent", type=float, default=0.75)
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--workers", type=int, default=1)
        s.add_argument("--out", required=True)

    s = sub.add_parser("cooccur", help="negative-sampling co-embeddings from a pair TSV")
    s.add_argument("--pairs", required=True)
    s.add_argument("--min-count", type=int, default=1)
    s.add_argument("--shared", action="store_true", help="left and right keys share one vocabulary")
    s.add_argument("--right-out")
    sgd_args(s)
    s.set_defaults(fn=cmd_cooccur)

    s = sub.add_parser("skipgram", help="skipgram embeddings from a whitespace-tokenized corpus")
    s.add_argument("--corpus", required=True)
    s.add_argument("--window", type=int, default=5)
    s.add_argument("--min-count", type=int, default=1)
    s.add_argument("--phrases", type=int, default=0, help="merge bigrams seen more than this many times")
    s.add_argument("--pairs-out")
    sgd_args(s)
    s.set_defaults(fn=cmd_skipgram)

    s = sub.add_parser("foldin", help="fold new users into a trained model")
    s.add_argument("--model", required=True)
    s.add_argument("--interactions", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_foldin)

    s = sub.add_parser("lookalike", help="quantile similarity features for candidate producers")
    s.add_argument("--model", required=True)
    s.add_argument("--groups", required=True, help="TSV of group<TAB>member user key")
    s.add_argument("--candidates", required=True, help="one producer key per line")
    s.add_argument("--quantiles", default="0,0.5,1")
    s.add_argument("--sentinel", type=float, default=0.0)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_lookalike)

    s = sub.add_parser("experiment", help="fold-in experiments")
    esub = s.add_subparsers(dest="experiment", required=True)
    e = esub.add_parser("foldin", help="NDCG of trained vs folded users as the trained share grows")
    e.add_argument("--input", required=True)
    e.add_argument("--percents", default="10,20,30,40,50,60,70,80,90,100")
    e.add_argument("--rank", type=int, default=8)
    e.add_argument("--alpha", type=float, default=40.0)
    e.add_argument("--lambda", dest="lam", type=float, default=0.1)
    e.add_argument("--iters", type=int, default=15)
    e.add_argument("--train-ratio", type=float, default=0.5)
    e.add_argument("--raw", action="store_true")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.set_defaults(fn=cmd_experiment)

    s = sub.add_parser("democratize", help="train an autoencoder ladder on an embedding")
    s.add_argument("--input", required=True)
    s.add_argument("--layers", default="1000,500,200,100,50")
    s.add_argument("--lr", type=float, default=0.01)
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--batch-size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_democratize)

    s = sub.add_parser("encode", help="compress an embedding with a trained autoencoder")
    s.add_argument("--model", required=True)
    s.add_argument("--layer", type=int, required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_encode)

    s = sub.add_parser("bench", help="run a benchmark suite on an embedding")
    s.add_argument("--embedding", required=True)
    s.add_argument("--suite", required=True)
    s.add_argument("--name", default="embedding")
    s.add_argument("--version", default="0")
    s.add_argument("--seed", type=int, help="defaults to the suite's seed")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_bench)

    s = sub.add_parser("registry", help="versioned embedding store")
    rsub = s.add_subparsers(dest="action", required=True)
    r = rsub.add_parser("publish")
    r.add_argument("--root", required=True)
    r.add_argument("--name", required=True)
    r.add_argument("--embedding", required=True)
    r.add_argument("--report")
    r.add_argument("--kind", default="embedding")
    r.add_argument("--seed", type=int)
    r.add_argument("--hyperparameters", help="JSON object recorded in the manifest")
    r = rsub.add_parser("fetch")
    r.add_argument("--root", required=True)
    r.add_argument("--name", required=True)
    r.add_argument("--version", default="latest")
    r.add_argument("--out")
    r = rsub.add_parser("list")
    r.add_argument("--root", required=True)
    r.add_argument("--name")
    s.set_defaults(fn=cmd_registry)

    s = sub.add_parser("run", help="execute a TOML pipeline")
    s.add_argument("config")
    s.add_argument("--dry-run", action="store_true")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(fn=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        code = args.fn(args)
    except (registry.EntryNotFound, FileNotFoundError) as exc:
        _log.error("%s", exc)
        return EXIT_VALIDATION
    except Exception as exc:
        _log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_STEP_FAILED
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
