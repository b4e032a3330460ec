"""Evaluation metrics: adjusted Rand index, weight alignment, Markov diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import LengthMismatch, ShapeMismatch, TooFewModels
from .models import sequence_stats


@dataclass
class ContingencyTable:
    counts: np.ndarray
    row_sums: np.ndarray
    col_sums: np.ndarray
    n: int

    @classmethod
    def from_labels(cls, a, b) -> "ContingencyTable":
        a = np.asarray(a)
        b = np.asarray(b)
        if a.shape != b.shape or a.ndim != 1:
            raise LengthMismatch(f"label vectors have shapes {a.shape} and {b.shape}")
        _, ia = np.unique(a, return_inverse=True)
        _, ib = np.unique(b, return_inverse=True)
        counts = np.zeros((ia.max() + 1, ib.max() + 1), dtype=np.int64)
        np.add.at(counts, (ia, ib), 1)
        return cls(counts, counts.sum(axis=1), counts.sum(axis=0), int(len(a)))


def _pair_sums(ct: ContingencyTable):
    def c2(x):
        x = np.asarray(x, dtype=np.int64)
        return int(np.sum(x * (x - 1) // 2))

    return c2(ct.counts), c2(ct.row_sums), c2(ct.col_sums), ct.n * (ct.n - 1) // 2


def adjusted_rand_index(a, b, exact: bool = False):
    """Adjusted Rand index (Hubert and Arabie) from the contingency table.

    With ``exact=True`` the result is a :class:`fractions.Fraction`. When both
    partitions are trivial in the same way (both one cluster, or both all
    singletons) the formula is 0/0 and the partitions coincide, so 1 is
    returned. One single-cluster partition against any other gives 0.
    """
    ct = ContingencyTable.from_labels(a, b)
    if ct.n < 2:
        raise LengthMismatch("need at least two labels")
    index, sa, sb, total = _pair_sums(ct)
    if exact:
        expected = Fraction(sa * sb, total)
        max_index = Fraction(sa + sb, 2)
        if max_index == expected:
            return Fraction(1)
        return (index - expected) / (max_index - expected)
    # both terms scaled by 2 * total so they stay integers; one rounding at the end
    num = 2 * (index * total - sa * sb)
    den = (sa + sb) * total - 2 * sa * sb
    if den == 0:
        return 1.0
    return num / den


def masked_ari(pred, truth, mask=None) -> float:
    """ARI restricted to subjects where ``mask`` is True (e.g. non-outliers)."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if mask is not None:
        pred, truth = pred[mask], truth[mask]
    return adjusted_rand_index(pred, truth)


@dataclass
class Alignment:
    value: float
    defined: bool


def weight_alignment(weights, per_model_ari) -> Alignment:
    """Pearson correlation between model weights and model accuracies.

    A constant input makes the correlation undefined; the result is then NaN
    with ``defined=False``.
    """
    w = np.asarray(weights, dtype=float)
    a = np.asarray(per_model_ari, dtype=float)
    if w.shape != a.shape:
        raise LengthMismatch("weights and accuracies differ in length")
    if len(w) < 3:
        raise TooFewModels("correlation needs at least three models")
    wc = w - w.mean()
    ac = a - a.mean()
    denom = math.sqrt(float(wc @ wc) * float(ac @ ac))
    if denom == 0:
        return Alignment(float("nan"), False)
    return Alignment(float(wc @ ac) / denom, True)


@dataclass
class MarkovStats:
    initial: np.ndarray  # (K, S)
    transitions: np.ndarray  # (K, S, S)
    empty_clusters: list
    uniform_rows: list  # (cluster, state) pairs filled with a uniform row


def empirical_markov_stats(sequences, labels, K: int, S: int) -> MarkovStats:
    """Per-cluster empirical initial distribution and transition matrix.

    Rows without any observed transition are set to uniform and reported.
    """
    seqs = sequences.sequences if hasattr(sequences, "sequences") else list(sequences)
    labels = np.asarray(labels, dtype=int)
    if len(labels) != len(seqs):
        raise LengthMismatch("one label per sequence required")
    first, counts = sequence_stats(seqs, S)
    u = np.zeros((K, S))
    T = np.zeros((K, S, S))
    for k in range(K):
        sel = labels == k + 1
        u[k] = first[sel].sum(axis=0)
        T[k] = counts[sel].sum(axis=0)
    empty = [k + 1 for k in range(K) if u[k].sum() == 0]
    uniform_rows = []
    for k in range(K):
        tot = u[k].sum()
        u[k] = u[k] / tot if tot > 0 else np.full(S, 1.0 / S)
        for s in range(S):
            rs = T[k, s].sum()
            if rs > 0:
                T[k, s] /= rs
            else:
                T[k, s] = 1.0 / S
                uniform_rows.append((k + 1, s + 1))
    return MarkovStats(u, T, empty, uniform_rows)


def transition_divergence(a: MarkovStats, b: MarkovStats):
    """Mean over clusters of ||T_a - T_b||_F and ||u_a - u_b||_2."""
    if a.transitions.shape != b.transitions.shape or a.initial.shape != b.initial.shape:
        raise ShapeMismatch("statistics must share K and S")
    dT = np.sqrt(((a.transitions - b.transitions) ** 2).sum(axis=(1, 2)))
    du = np.sqrt(((a.initial - b.initial) ** 2).sum(axis=1))
    return float(dT.mean()), float(du.mean())


def match_clusters(a, b, K: int) -> np.ndarray:
    """Permutation ``perm`` maximizing overlap: cluster ``k`` of ``b`` ↔ ``perm[k]`` of ``a``.

    Returned as a 1-based relabeling map for ``b``: ``new_b = perm[b - 1]``.
    """
    a = np.asarray(a, dtype=int)
    b = np.asarray(b, dtype=int)
    C = np.zeros((K, K))
    np.add.at(C, (b - 1, a - 1), 1.0)
    rows, cols = linear_sum_assignment(-C)
    perm = np.empty(K, dtype=int)
    perm[rows] = cols + 1
    return perm
