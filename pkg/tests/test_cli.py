import json
import subprocess
import sys

import numpy as np
import pytest

from embedforge.cli import main
from embedforge.io import read_embeddings, write_interactions
from embedforge.synthetic import make_foldin_data

from conftest import write_word_pipeline


@pytest.fixture
def interactions(tmp_path):
    m, *_ = make_foldin_data(0, n_users=60, n_items=30)
    path = tmp_path / "x.tsv"
    write_interactions(m, path)
    return path


def last_json(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def test_svd_then_foldin_and_lookalike(tmp_path, interactions, capsys):
    assert main(["svd", "--input", str(interactions), "--rank", "4", "--seed", "1",
                 "--out", str(tmp_path / "m")]) == 0
    assert last_json(capsys) == {"rank": 4, "truncated": False}
    manifest = json.loads((tmp_path / "m" / "model.json").read_text())
    assert manifest["seed"] == 1 and manifest["kind"] == "svd-absorbed" and len(manifest["input_digest"]) == 64
    assert manifest["hyperparameters"]["rank"] == 4

    (tmp_path / "new.tsv").write_text("nu1\ti0\t1\nnu1\ti3\t2\nnu2\tzzz\t1\n")
    assert main(["foldin", "--model", str(tmp_path / "m"), "--interactions", str(tmp_path / "new.tsv"),
                 "--out", str(tmp_path / "new.tsv.emb")]) == 0
    assert last_json(capsys) == {"count": 2, "unknown_items": 1}

    (tmp_path / "groups.tsv").write_text("address_book\tu0\naddress_book\tu1\ninterests\tu2\n")
    (tmp_path / "cands.txt").write_text("i0\ni1\nnot_an_item\n")
    out = tmp_path / "feats.tsv"
    assert main(["lookalike", "--model", str(tmp_path / "m"), "--groups", str(tmp_path / "groups.tsv"),
                 "--candidates", str(tmp_path / "cands.txt"), "--quantiles", "0,1", "--out", str(out)]) == 0
    rows = [line.split("\t") for line in out.read_text().splitlines()]
    assert rows[0] == ["candidate", "address_book@0", "address_book@1", "interests@0", "interests@1",
                       "has_address_book", "has_interests"]
    assert [r[0] for r in rows[1:]] == ["i0", "i1"]


def test_als_and_experiment(tmp_path, interactions, capsys):
    assert main(["als", "--input", str(interactions), "--rank", "3", "--iters", "3", "--lambda", "0.5",
                 "--out", str(tmp_path / "als")]) == 0
    manifest = json.loads((tmp_path / "als" / "model.json").read_text())
    assert manifest["kind"] == "als" and manifest["hyperparameters"]["lambda"] == 0.5
    out = tmp_path / "exp.tsv"
    assert main(["experiment", "foldin", "--input", str(interactions), "--percents", "50,100",
                 "--rank", "2", "--iters", "2", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].split("\t") == ["percent", "ndcg_trained", "ndcg_folded", "ndcg_all", "n_trained", "n_folded"]
    assert lines[2].split("\t")[2] == "NA"


def test_skipgram_cooccur_bench_registry(tmp_path, capsys):
    write_word_pipeline(tmp_path, n_lines=200)
    emb = tmp_path / "words.bin"
    assert main(["skipgram", "--corpus", str(tmp_path / "corpus.txt"), "--window", "2", "--dim", "8",
                 "--epochs", "1", "--out", str(emb)]) == 0
    assert (tmp_path / "words.pairs.tsv").exists()
    assert read_embeddings(emb).dim == 8
    assert main(["cooccur", "--pairs", str(tmp_path / "words.pairs.tsv"), "--dim", "4", "--epochs", "1",
                 "--right-out", str(tmp_path / "ctx.tsv"), "--out", str(tmp_path / "w2.tsv")]) == 0
    assert read_embeddings(tmp_path / "ctx.tsv").dim == 4

    report = tmp_path / "report.json"
    assert main(["bench", "--embedding", str(emb), "--suite", str(tmp_path / "suite.toml"),
                 "--name", "words", "--out", str(report)]) == 0
    assert json.loads(report.read_text())["metadata"]["seed"] == 3

    reg = str(tmp_path / "reg")
    capsys.readouterr()
    assert main(["registry", "publish", "--root", reg, "--name", "words", "--embedding", str(emb),
                 "--report", str(report), "--seed", "5", "--hyperparameters", '{"window": 2}']) == 0
    assert last_json(capsys)["version"] == 1
    fetched = tmp_path / "fetched.bin"
    assert main(["registry", "fetch", "--root", reg, "--name", "words", "--out", str(fetched)]) == 0
    assert fetched.read_bytes() == emb.read_bytes()
    assert last_json(capsys)["window"] == 2
    assert main(["registry", "list", "--root", reg]) == 0
    listing = capsys.readouterr().out.split("\t")
    assert listing[:2] == ["words", "v1"] and listing[-1].strip() == "report"
    assert main(["registry", "fetch", "--root", reg, "--name", "nope"]) == 1


def test_democratize_and_encode(tmp_path, capsys):
    from embedforge.io import write_embeddings
    from embedforge.synthetic import make_subspace_embeddings

    write_embeddings(make_subspace_embeddings(0, n=100, dim=16, subspace=3), tmp_path / "e.bin")
    assert main(["democratize", "--input", str(tmp_path / "e.bin"), "--layers", "16,8,4", "--epochs", "3",
                 "--batch-size", "10", "--out", str(tmp_path / "ae")]) == 0
    assert main(["encode", "--model", str(tmp_path / "ae"), "--layer", "2", "--input", str(tmp_path / "e.bin"),
                 "--out", str(tmp_path / "e4.bin")]) == 0
    small = read_embeddings(tmp_path / "e4.bin")
    assert small.values.shape == (100, 4) and np.all(np.isfinite(small.values))


def test_run_exit_codes(tmp_path, capsys):
    cfg = write_word_pipeline(tmp_path, n_lines=200)
    assert main(["run", str(cfg), "--dry-run"]) == 0
    assert not (tmp_path / "out").exists()
    assert main(["run", str(cfg)]) == 0
    bad = tmp_path / "bad.toml"
    bad.write_text("colour = 1\n")
    assert main(["run", str(bad)]) == 1
    assert "colour" in capsys.readouterr().err
    bad.write_text('[[step]]\nname = "m"\nop = "svd"\ninput = "suite.toml"\nrank = 2\n')
    assert main(["run", str(bad)]) == 2


def test_missing_input_file(tmp_path):
    assert main(["svd", "--input", str(tmp_path / "nope.tsv"), "--rank", "2", "--out", str(tmp_path / "m")]) == 1


def test_console_script(tmp_path):
    r = subprocess.run([sys.executable, "-m", "embedforge.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("embedforge ")
