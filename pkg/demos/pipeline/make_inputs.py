"""Write the corpus and benchmark datasets used by pipeline.toml.

Run: python3 demos/pipeline/make_inputs.py && embedforge run demos/pipeline/pipeline.toml
"""
from pathlib import Path

import numpy as np

from embedforge.synthetic import make_two_topic_corpus

here = Path(__file__).resolve().parent
sentences, topics = make_two_topic_corpus(0, n_sentences=1000)
(here / "corpus.txt").write_text("".join(" ".join(s) + "\n" for s in sentences))
with open(here / "topics.tsv", "w") as fh:
    for label, words in enumerate(topics):
        fh.writelines(f"{w}\t{label}\n" for w in words)
rng = np.random.default_rng(1)
with open(here / "follows.tsv", "w") as fh:
    for words in topics:
        for w in words:
            fh.write(w + "\t" + "\t".join(words[i] for i in rng.choice(len(words), size=5, replace=False)) + "\n")
print("wrote corpus.txt, topics.tsv, follows.tsv")
