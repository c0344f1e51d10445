"""Train skipgram embeddings on a two-topic corpus and compare topic similarity.

Run: python3 demos/skipgram_topics.py
"""
import numpy as np

from embedforge.cooccur import CooccurConfig, skipgram_pairs, train
from embedforge.synthetic import make_two_topic_corpus

sentences, topics = make_two_topic_corpus(seed=5)
cfg = CooccurConfig()
pairs = skipgram_pairs(sentences, cfg.window)
words, contexts, trace = train(pairs, cfg, return_trace=True)
print(f"{len(pairs)} pairs, vocab {len(words)}, mean objective per epoch:", np.round(trace, 3))

X = words.values / np.linalg.norm(words.values, axis=1, keepdims=True)
a = [words.vocab.index(w) for w in topics[0]]
b = [words.vocab.index(w) for w in topics[1]]
same = (X[a] @ X[a].T).mean(), (X[b] @ X[b].T).mean()
print(f"mean cosine inside topic a {same[0]:.3f}, inside topic b {same[1]:.3f}, "
      f"across topics {(X[a] @ X[b].T).mean():.3f}")
