import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from embedforge.core import EmbeddingMatrix, EntityVocab
from embedforge.cooccur import (CooccurConfig, EmptyVocabularyError, NegativeSampler, PairStream,
                                bag_of_features_embed, detect_phrases, pair_gradients, pair_objective, run_epoch,
                                sgd_step, skipgram_pairs, train)


def scalar_objective(e1, e2, negs):
    sig = lambda z: 1.0 / (1.0 + math.exp(-z))
    dot = lambda a, b: math.fsum(x * y for x, y in zip(a, b))
    val = math.log(sig(dot(e1, e2)))
    for n in negs:
        val += math.log(sig(-dot(e1, n)))
    return val


def cos(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def test_objective_trivial_values():
    assert pair_objective([1.0, 0.0], [0.0, 1.0]) == pytest.approx(-0.693147, abs=1e-6)
    negs = [[0.0, 1.0], [0.0, -1.0]]
    assert pair_objective([1.0, 0.0], [0.0, 1.0], negs) == pytest.approx(-2.079442, abs=1e-6)


def test_objective_matches_scalar_formula(rng):
    e1, e2 = rng.normal(size=8), rng.normal(size=8)
    negs = rng.normal(size=(5, 8))
    assert pair_objective(e1, e2, negs) == pytest.approx(scalar_objective(e1, e2, negs), rel=1e-12)


def test_objective_dimension_mismatch():
    with pytest.raises(ValueError):
        pair_objective(np.ones(3), np.ones(4))
    with pytest.raises(ValueError):
        pair_objective(np.ones(3), np.ones(3), [np.ones(2)])


def test_gradients_finite_differences(rng):
    h = 1e-6
    for _ in range(20):
        d, k = int(rng.integers(4, 33)), int(rng.integers(1, 11))
        e1, e2, negs = rng.normal(size=d) * 0.5, rng.normal(size=d) * 0.5, rng.normal(size=(k, d)) * 0.5
        g1, g2, gn = pair_gradients(e1, e2, negs)
        t = int(rng.integers(d))
        bump = np.eye(d)[t] * h
        fd = (pair_objective(e1 + bump, e2, negs) - pair_objective(e1 - bump, e2, negs)) / (2 * h)
        assert fd == pytest.approx(g1[t], rel=1e-6, abs=1e-8)
        fd = (pair_objective(e1, e2 + bump, negs) - pair_objective(e1, e2 - bump, negs)) / (2 * h)
        assert fd == pytest.approx(g2[t], rel=1e-6, abs=1e-8)


def test_sgd_step_zero_lr_is_noop(rng):
    E1, E2 = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
    a, b = E1.copy(), E2.copy()
    sgd_step(E1, E2, 1, 2, [0, 4], 0.0)
    np.testing.assert_array_equal(E1, a)
    np.testing.assert_array_equal(E2, b)


def test_sgd_step_increases_objective(rng):
    E1, E2 = rng.normal(size=(3, 6)), rng.normal(size=(5, 6))
    negs = [0, 4]
    before = pair_objective(E1[1], E2[2], E2[negs])
    sgd_step(E1, E2, 1, 2, negs, 0.01)
    assert pair_objective(E1[1], E2[2], E2[negs]) > before


def test_kernel_matches_reference_step(rng):
    E1, E2 = rng.normal(size=(4, 5)), rng.normal(size=(6, 5))
    R1, R2 = E1.copy(), E2.copy()
    left, right = np.array([1, 3, 1]), np.array([2, 2, 0])
    negs = np.array([[0, 2], [5, 5], [0, 1]])
    run_epoch(E1, E2, left, right, negs, 0.1, 0.1, 0, 3)
    for i, j, n in zip(left, right, negs):
        sgd_step(R1, R2, i, j, n, 0.1)
    np.testing.assert_allclose(E1, R1, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(E2, R2, rtol=1e-12, atol=1e-14)


def test_sampler_frequencies():
    freqs = np.array([1.0, 16.0, 0.0, 81.0])
    s = NegativeSampler(freqs, 0.75)
    np.testing.assert_allclose(s.probs, np.array([1, 8, 0, 27]) / 36.0)
    draws = s.draw(np.random.default_rng(0), 200_000)
    emp = np.bincount(draws, minlength=4) / len(draws)
    np.testing.assert_allclose(emp, s.probs, atol=0.005)
    assert np.all(NegativeSampler(freqs, 0.0).probs[[0, 1, 3]] == pytest.approx(1 / 3))
    with pytest.raises(EmptyVocabularyError):
        NegativeSampler(np.zeros(3))


def test_pair_stream_validation():
    with pytest.raises(ValueError):
        PairStream([0], [0], [0.0], EntityVocab(["a"]), EntityVocab(["x"]))
    ps = PairStream.from_records([("a", "x"), ("b", "y", 2.0)])
    assert ps.key_pairs() == [("a", "x"), ("b", "y")]
    assert not ps.shared_vocab


def test_train_separates_repeated_pairs():
    ps = PairStream.from_records([("a", "x")] * 100 + [("b", "y")] * 100)
    E1, E2 = train(ps, CooccurConfig(dim=8, negatives=1, epochs=20, lr=0.05))
    assert cos(E1["a"], E2["x"]) > cos(E1["a"], E2["y"])
    assert cos(E1["b"], E2["y"]) > cos(E1["b"], E2["x"])


def test_train_single_pair_stays_finite():
    E1, E2, trace = train(PairStream.from_records([("a", "x")] * 20), CooccurConfig(dim=1, negatives=1, epochs=5),
                          return_trace=True)
    assert np.all(np.isfinite(E1.values)) and np.all(np.isfinite(E2.values))
    assert all(t <= 0 and math.isfinite(t) for t in trace)


def test_train_symmetric_contexts():
    rng = np.random.default_rng(4)
    ctx = [f"c{i}" for i in range(5)]
    draws = [ctx[int(rng.integers(5))] for _ in range(100)]
    recs = [(lk, c) for c in draws for lk in ("a", "b")]
    E1, _ = train(PairStream.from_records(recs))
    assert cos(E1["a"], E1["b"]) >= 0.9


def test_train_deterministic_single_worker():
    ps = PairStream.from_records([("a", "x"), ("b", "y"), ("a", "y")] * 10)
    cfg = CooccurConfig(dim=4, epochs=3, seed=9)
    a, _ = train(ps, cfg)
    b, _ = train(ps, cfg)
    np.testing.assert_array_equal(a.values, b.values)


def test_train_min_count_and_empty():
    ps = PairStream.from_records([("a", "x")] * 3 + [("b", "y")])
    E1, E2 = train(ps, CooccurConfig(dim=2, epochs=1, min_count=2))
    assert E1.vocab.keys == ("a",) and E2.vocab.keys == ("x",)
    with pytest.raises(EmptyVocabularyError):
        train(ps, CooccurConfig(dim=2, epochs=1, min_count=10))


def test_config_validation():
    for bad in (dict(dim=0), dict(lr=0.0), dict(exponent=1.5), dict(window=0)):
        with pytest.raises(ValueError):
            CooccurConfig(**bad)


def test_skipgram_examples():
    assert set(skipgram_pairs([["a", "b", "c"]], 1).key_pairs()) == {("a", "b"), ("b", "a"), ("b", "c"), ("c", "b")}
    got = Counter(skipgram_pairs([["a", "b", "c"]], 2).key_pairs())
    assert got == Counter([("a", "b"), ("b", "a"), ("b", "c"), ("c", "b"), ("a", "c"), ("c", "a")])
    assert skipgram_pairs([["a", "b", "c"]], 1).shared_vocab


def brute_skipgram(seq, w):
    out = Counter()
    for t in range(len(seq)):
        for u in range(len(seq)):
            if t != u and abs(t - u) <= w:
                out[(seq[t], seq[u])] += 1
    return out


def test_skipgram_brute_force(rng):
    seq = [f"w{i}" for i in rng.integers(0, 8, size=50)]
    assert Counter(skipgram_pairs([seq], 3).key_pairs()) == brute_skipgram(seq, 3)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.sampled_from("abcdef"), max_size=12), max_size=4), st.integers(1, 5))
def test_skipgram_property(seqs, w):
    want = Counter()
    for s in seqs:
        want += brute_skipgram(s, w)
    assert Counter(skipgram_pairs(seqs, w).key_pairs()) == want


def test_skipgram_min_count():
    # rare tokens are removed before windowing, so the two a's become adjacent
    ps = skipgram_pairs([["a", "b", "a", "c"]], 1, min_count=2)
    assert ps.key_pairs() == [("a", "a"), ("a", "a")]
    ps = skipgram_pairs([["z", "b"], ["a", "z", "a"]], 1, min_count=3)
    assert len(ps) == 0


def test_detect_phrases():
    seqs = [["new", "york", "city"], ["new", "york"], ["old", "york"]]
    assert detect_phrases(seqs, 1) == [["new_york", "city"], ["new_york"], ["old", "york"]]
    assert detect_phrases(seqs, 2) == seqs


def test_bag_of_features():
    emb = EmbeddingMatrix(EntityVocab(["f", "g", "h"]), np.array([[1.0, 0.0], [0.0, 2.0], [3.0, 3.0]]))
    np.testing.assert_array_equal(bag_of_features_embed(emb, [("f", 1)]), [1.0, 0.0])
    np.testing.assert_allclose(bag_of_features_embed(emb, [("f", 1), ("g", 1)]), [0.5, 1.0])
    want = (1 * emb["f"] + 2 * emb["g"] + 3 * emb["h"]) / 6
    np.testing.assert_allclose(bag_of_features_embed(emb, [("f", 1), ("g", 2), ("h", 3)]), want, rtol=1e-15)
    with pytest.raises(KeyError):
        bag_of_features_embed(emb, [("zz", 1), ("f", 1)])
    np.testing.assert_array_equal(bag_of_features_embed(emb, [("zz", 1), ("f", 1)], on_unknown="skip"), emb["f"])
    with pytest.raises(KeyError):
        bag_of_features_embed(emb, [("zz", 1)], on_unknown="skip")
