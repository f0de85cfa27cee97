import numpy as np
import pytest

import oracles
from circret.curriculum import (
    BadEpochIndex,
    ClusterAssignment,
    DatasetTooSmall,
    TooFewSamples,
    caption_vector,
    cluster_captions,
    default_phases,
    hard_negative_ratio,
    kmeans,
    n_hard,
    sample_batch,
)
from circret.objective import ALL_DIRECTIONS, CODE_DIRECTIONS


def test_alpha_endpoints_and_midpoint():
    assert hard_negative_ratio(1, 12) == oracles.ALPHA0 == 0.05
    assert hard_negative_ratio(12, 12) == oracles.ALPHA_MAX == 0.30
    assert abs(hard_negative_ratio(7, 12) - float(oracles.alpha_exact(7, 12))) < 1e-9
    v, tol = oracles.QUOTED["alpha_7_12"]
    assert abs(hard_negative_ratio(7, 12) - v) < tol


@pytest.mark.parametrize("total", [2, 3, 5, 12, 40])
def test_alpha_monotone_and_bounded(total):
    seq = [hard_negative_ratio(m, total) for m in range(1, total + 1)]
    assert all(a <= b for a, b in zip(seq, seq[1:]))
    assert all(0.05 <= a <= 0.3 for a in seq)
    for m, a in enumerate(seq, start=1):
        assert abs(a - float(oracles.alpha_exact(m, total))) < 1e-12


def test_alpha_errors():
    for m, total in ((0, 12), (13, 12), (1, 1)):
        with pytest.raises(BadEpochIndex):
            hard_negative_ratio(m, total)


def test_n_hard():
    assert n_hard(0.3, 256) == 77
    for a in (0.0, 0.05, 0.1, 0.18636, 0.25, 0.3, 0.5):
        for b in (8, 64, 100, 256):
            assert n_hard(a, b) == oracles.n_hard_exact(a, b)


def _clusters(sizes):
    ids, labels = [], []
    for c, n in enumerate(sizes):
        ids += [f"c{c}_{i:03d}" for i in range(n)]
        labels += [c] * n
    return ids, ClusterAssignment(ids, np.array(labels), np.zeros((len(sizes), 1)), 0.0)


def test_batch_hard_count():
    ids, ca = _clusters([100, 100, 100, 100])
    rng = np.random.default_rng(0)
    for _ in range(20):
        batch = sample_batch(ids, 256, 0.3, ca, rng)
        assert len(batch) == 256 and len(set(batch)) == 256
        counts = np.bincount([ca.cluster_of(i) for i in batch], minlength=4)
        # 77 hard ids from the anchor; the 179 others come from outside it
        assert counts.max() == 77 and sorted(counts)[-2] < 77


def test_batch_cap_rule():
    ids, ca = _clusters([5, 300])
    rng = np.random.default_rng(1)
    seen_small = False
    for _ in range(40):
        batch = sample_batch(ids, 256, 0.3, ca, rng)
        small = [i for i in batch if i.startswith("c0_")]
        if len(small) == 5 and batch[:5] == small:
            seen_small = True
            assert len(set(batch)) == 256
    assert seen_small


def test_alpha_zero_uniform():
    ids, ca = _clusters([50, 50])
    b1 = sample_batch(ids, 32, 0.0, ca, np.random.default_rng(3))
    b2 = sample_batch(ids, 32, 0.0, None, np.random.default_rng(3))
    assert b1 == b2
    with pytest.raises(DatasetTooSmall):
        sample_batch(ids[:10], 32, 0.0, ca, np.random.default_rng(0))


def test_kmeans_blobs():
    x, y = oracles.blobs(30, [(0, 0), (20, 20)], 0.5, seed=0)
    labels, cents, inertia, _ = kmeans(x, 2, seed=4)
    assert (labels == y).all() or (labels == 1 - y).all()
    again = kmeans(x, 2, seed=4)
    assert np.array_equal(again[0], labels) and again[2] == inertia


def test_kmeans_k_equals_n():
    x = np.random.default_rng(0).standard_normal((12, 3))
    labels, _, inertia, _ = kmeans(x, 12, seed=0)
    assert len(set(labels.tolist())) == 12 and inertia == 0.0
    with pytest.raises(TooFewSamples):
        kmeans(x, 13)


def test_cluster_captions(small_corpus):
    recs = small_corpus.records
    ca = cluster_captions([r.id for r in recs], [r.caption for r in recs], 8, seed=0)
    assert len(ca.labels) == len(recs) and sum(len(v) for v in ca.members.values()) == len(recs)
    cb = cluster_captions([r.id for r in recs], [r.caption for r in recs], 8, seed=0)
    assert np.array_equal(ca.labels, cb.labels)
    v = caption_vector("an rc low-pass filter")
    assert abs(np.linalg.norm(v) - 1) < 1e-12


def test_default_phases():
    p1, p2, p3 = default_phases()
    assert p1.epochs == (1, 6) and p1.trainable == ("graph",) and p1.directions == CODE_DIRECTIONS
    assert p1.sampling == "random" and not p1.rebuild_optimizer
    assert p2.epochs == (7, 8) and p2.trainable == ("*",) and p2.directions == ALL_DIRECTIONS
    assert p2.rebuild_optimizer and p2.sampling == "random"
    assert p3.epochs == (9, 20) and p3.sampling == "curriculum"
