import numpy as np
import pytest

from embedforge.core import SparseInteractionMatrix


def random_sparse(rng, n, m, density, integer=False):
    """Dense array with roughly ``density`` nonzeros; every row and column nonzero."""
    mask = rng.random((n, m)) < density
    mask[np.arange(n), rng.integers(0, m, size=n)] = True
    mask[rng.integers(0, n, size=m), np.arange(m)] = True
    vals = rng.integers(1, 6, size=(n, m)).astype(float) if integer else rng.random((n, m)) + 0.1
    return np.where(mask, vals, 0.0)


def as_matrix(dense):
    return SparseInteractionMatrix.from_dense(dense)


ACCEPTANCE_LINES = []


def record_criterion(number, title, ok, detail):
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_word_pipeline(root, seed=7, registry_root="registry", n_lines=1000):
    """Corpus, benchmark suite and a skipgram -> cooccur -> bench -> publish pipeline."""
    from pathlib import Path

    from embedforge.synthetic import make_two_topic_corpus

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    sentences, topics = make_two_topic_corpus(0, n_sentences=n_lines)
    (root / "corpus.txt").write_text("".join(" ".join(s) + "\n" for s in sentences))
    with open(root / "topics.tsv", "w") as fh:
        for label, words in enumerate(topics):
            for w in words:
                fh.write(f"{w}\t{label}\n")
    rng = np.random.default_rng(1)
    with open(root / "follows.tsv", "w") as fh:
        for words in topics:
            for w in words:
                picks = rng.choice(len(words), size=5, replace=False)
                fh.write(w + "\t" + "\t".join(words[i] for i in picks) + "\n")
    (root / "suite.toml").write_text(
        'seed = 3\n\n[[task]]\nname = "topic"\nkind = "topic_probe"\nlabels = "topics.tsv"\n\n'
        '[[task]]\nname = "follow"\nkind = "follow_jaccard"\nfollows = "follows.tsv"\nn_pairs = 200\n')
    (root / "pipeline.toml").write_text(f"""seed = {seed}
workdir = "out"
summary = "out/run.json"

[inputs]
corpus = "corpus.txt"
suite = "suite.toml"

[[step]]
name = "pairs"
op = "skipgram"
corpus = "@corpus"
window = 3

[[step]]
name = "words"
op = "cooccur"
pairs = "@pairs"
dim = 16
epochs = 2

[[step]]
name = "report"
op = "bench"
embedding = "@words"
suite = "@suite"
embedding_name = "words"

[[step]]
name = "publish"
op = "publish"
root = "{registry_root}"
entry = "words"
embedding = "@words"
report = "@report"
kind = "skipgram"
hyperparameters = {{ dim = 16, window = 3 }}
""")
    return root / "pipeline.toml"
