"""Benchmark an embedding and publish it with its report to a local registry.

Run: python3 demos/bench_and_registry.py
"""
import tempfile
from pathlib import Path

import numpy as np

from embedforge import registry
from embedforge.bench import TaskSpec, run_suite
from embedforge.core import EmbeddingMatrix, EntityVocab
from embedforge.io import embeddings_from_bytes, embeddings_to_bytes

rng = np.random.default_rng(0)
keys = [f"user{i}" for i in range(300)]
emb = EmbeddingMatrix(EntityVocab(keys), rng.normal(size=(300, 8)))
labels = {k: int(emb[k][0] + 0.3 * rng.normal() > 0) for k in keys}
follows = {k: set(rng.choice(40, size=6, replace=False).astype(str).tolist()) for k in keys}
report = run_suite(emb, [TaskSpec("interest", "topic_probe", labels=labels),
                         TaskSpec("follows", "follow_jaccard", follows=follows)], seed=1, name="users", version="1")
for row in report.rows:
    print(f"{row.task:10s} {row.metric:24s} {row.value:.3f}")

with tempfile.TemporaryDirectory() as root:
    entry = registry.publish(root, "users", embeddings_to_bytes(emb), {"kind": "demo", "seed": 0}, report=report)
    registry.publish(root, "users", embeddings_to_bytes(emb))
    payload, latest = registry.fetch(root, "users", "latest")
    print(f"published v{entry.version} and v{latest.version}; digest {latest.digest[:16]}...")
    back = embeddings_from_bytes(payload)
    print("round trip exact:", np.array_equal(back.values, emb.values.astype(np.float32)))
    for e in registry.list_entries(root):
        print(f"  {e.name} v{e.version} report={e.has_report} at {Path(e.path).name}")
