import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fontclust.errors import LengthMismatch, ShapeMismatch, TooFewModels
from fontclust.metrics import (
    ContingencyTable,
    MarkovStats,
    adjusted_rand_index,
    empirical_markov_stats,
    masked_ari,
    match_clusters,
    transition_divergence,
    weight_alignment,
)

from oracles import ari_pairs, markov_counts, pearson, set_partitions

labels = st.lists(st.integers(1, 4), min_size=2, max_size=30)


def test_ari_examples():
    assert adjusted_rand_index([1, 1, 2, 2], [1, 1, 2, 2]) == 1.0
    assert adjusted_rand_index([1, 1, 2, 2], [2, 2, 1, 1]) == 1.0
    assert adjusted_rand_index([1, 1, 2, 2], [1, 2, 1, 2]) == -0.5
    assert adjusted_rand_index([1, 1, 2, 2], [1, 2, 1, 2], exact=True) == Fraction(-1, 2)


def test_ari_degenerate_conventions():
    assert adjusted_rand_index([1, 1, 1], [2, 2, 2]) == 1.0
    assert adjusted_rand_index([1, 1, 1, 1], [1, 1, 2, 2]) == 0.0
    assert adjusted_rand_index([1, 2, 3], [3, 1, 2]) == 1.0
    assert adjusted_rand_index([1, 1, 1], [1, 2, 3]) == 0.0


def test_ari_errors():
    with pytest.raises(LengthMismatch):
        adjusted_rand_index([1, 2], [1, 2, 3])
    with pytest.raises(LengthMismatch):
        adjusted_rand_index([1], [1])


def test_ari_matches_pair_counting_small_exhaustive():
    for n in range(2, 6):
        parts = list(set_partitions(n, 3))
        for a in parts:
            for b in parts:
                assert adjusted_rand_index(a, b, exact=True) == ari_pairs(a, b)


@given(labels, st.data())
def test_ari_matches_pair_counting_random(a, data):
    b = data.draw(st.lists(st.integers(1, 3), min_size=len(a), max_size=len(a)))
    ref = ari_pairs(a, b)
    assert adjusted_rand_index(a, b, exact=True) == ref
    assert abs(adjusted_rand_index(a, b) - float(ref)) <= 1e-12


@given(labels, st.data())
def test_ari_symmetric_and_relabel_invariant(a, data):
    b = data.draw(st.lists(st.integers(1, 4), min_size=len(a), max_size=len(a)))
    perm = data.draw(st.permutations([1, 2, 3, 4]))
    relabeled = [perm[x - 1] for x in b]
    assert adjusted_rand_index(a, b, exact=True) == adjusted_rand_index(b, a, exact=True)
    assert adjusted_rand_index(a, b, exact=True) == adjusted_rand_index(a, relabeled, exact=True)
    if len(set(a)) > 1:
        assert adjusted_rand_index(a, a) == 1.0


def test_ari_near_zero_for_independent_partitions(rng):
    vals = [adjusted_rand_index(rng.integers(1, 4, 300), rng.integers(1, 4, 300)) for _ in range(200)]
    assert abs(np.mean(vals)) < 0.01


def test_contingency_marginals(rng):
    a, b = rng.integers(0, 3, 50), rng.integers(5, 9, 50)
    ct = ContingencyTable.from_labels(a, b)
    assert ct.counts.sum() == ct.n == 50
    assert np.array_equal(ct.counts.sum(axis=1), ct.row_sums)
    assert np.array_equal(ct.counts.sum(axis=0), ct.col_sums)


def test_masked_ari_excludes_outliers():
    pred = [1, 1, 2, 2, 1]
    truth = [1, 1, 2, 2, 0]
    assert masked_ari(pred, truth, np.array([True] * 4 + [False])) == 1.0


# --- weight alignment ------------------------------------------------------------


def test_alignment_examples():
    ari = np.array([0.1, 0.4, 0.5, 0.9])
    assert math.isclose(weight_alignment(2 * ari + 1, ari).value, 1.0)
    assert math.isclose(weight_alignment(-3 * ari + 5, ari).value, -1.0)


def test_alignment_matches_two_pass(rng):
    w, a = rng.uniform(size=10), rng.uniform(size=10)
    assert math.isclose(weight_alignment(w, a).value, pearson(list(w), list(a)), rel_tol=1e-12)


def test_alignment_constant_and_small():
    res = weight_alignment([0.5, 0.5, 0.5], [0.1, 0.2, 0.3])
    assert not res.defined and math.isnan(res.value)
    with pytest.raises(TooFewModels):
        weight_alignment([0.1, 0.2], [0.3, 0.4])


# --- Markov diagnostics --------------------------------------------------------------


def test_empirical_stats_example():
    st_ = empirical_markov_stats([[1, 1, 2]], [1], 1, 2)
    assert np.allclose(st_.initial[0], [1, 0])
    assert np.allclose(st_.transitions[0, 0], [0.5, 0.5])
    assert (1, 2) in st_.uniform_rows


def test_empirical_stats_cycle_is_permutation():
    seqs = [[1, 2, 3, 1, 2, 3], [2, 3, 1, 2]]
    st_ = empirical_markov_stats(seqs, [1, 1], 1, 3)
    assert np.array_equal(st_.transitions[0], [[0, 1, 0], [0, 0, 1], [1, 0, 0]])


def test_empirical_stats_match_counting_oracle(rng):
    K, S = 3, 4
    seqs = [list(rng.integers(1, S + 1, size=int(rng.integers(2, 10)))) for _ in range(60)]
    labs = rng.integers(1, K + 1, size=60)
    U, T = markov_counts(seqs, labs, K, S)
    st_ = empirical_markov_stats(seqs, labs, K, S)
    assert np.allclose(st_.initial, U) and np.allclose(st_.transitions, T)


def test_empirical_stats_flags_empty_cluster():
    st_ = empirical_markov_stats([[1, 2]], [1], 2, 2)
    assert st_.empty_clusters == [2]


def test_divergence_examples():
    K, S = 2, 3
    T = np.stack([np.eye(S)] * K)
    u = np.full((K, S), 1 / S)
    a = MarkovStats(u, T, [], [])
    assert transition_divergence(a, a) == (0.0, 0.0)
    T2 = T.copy()
    T2[0, [0, 1]] = T2[0, [1, 0]]
    d_T, d_u = transition_divergence(a, MarkovStats(u, T2, [], []))
    assert math.isclose(d_T, 2 / K) and d_u == 0.0


def test_divergence_matches_direct(rng):
    K, S = 3, 4
    mk = lambda: MarkovStats(rng.dirichlet(np.ones(S), size=K), rng.dirichlet(np.ones(S), size=(K, S)), [], [])
    a, b = mk(), mk()
    dT = np.mean([math.sqrt(sum((a.transitions[k, i, j] - b.transitions[k, i, j]) ** 2
                               for i in range(S) for j in range(S))) for k in range(K)])
    du = np.mean([math.sqrt(sum((a.initial[k, i] - b.initial[k, i]) ** 2 for i in range(S))) for k in range(K)])
    got = transition_divergence(a, b)
    assert math.isclose(got[0], dT, rel_tol=1e-12) and math.isclose(got[1], du, rel_tol=1e-12)


def test_divergence_shape_mismatch():
    a = MarkovStats(np.ones((2, 2)) / 2, np.ones((2, 2, 2)) / 2, [], [])
    b = MarkovStats(np.ones((3, 2)) / 2, np.ones((3, 2, 2)) / 2, [], [])
    with pytest.raises(ShapeMismatch):
        transition_divergence(a, b)


def test_match_clusters_recovers_permutation():
    a = np.array([1, 1, 2, 2, 3, 3])
    b = np.array([3, 3, 1, 1, 2, 2])
    perm = match_clusters(a, b, 3)
    assert np.array_equal(perm[b - 1], a)
