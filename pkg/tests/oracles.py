"""Slow, independent reference implementations used only by the tests.

None of these import the package's numerical code; they recompute each
quantity from its definition.
"""
from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np


def ari_pairs(a, b, exact=True):
    """ARI by enumerating all C(N, 2) pairs."""
    n = len(a)
    n11 = n10 = n01 = n00 = 0
    for i, j in itertools.combinations(range(n), 2):
        sa = a[i] == a[j]
        sb = b[i] == b[j]
        if sa and sb:
            n11 += 1
        elif sa:
            n10 += 1
        elif sb:
            n01 += 1
        else:
            n00 += 1
    total = n11 + n10 + n01 + n00
    same_a = n11 + n10
    same_b = n11 + n01
    expected = Fraction(same_a * same_b, total)
    max_index = Fraction(same_a + same_b, 2)
    if max_index == expected:
        return Fraction(1) if exact else 1.0
    val = (n11 - expected) / (max_index - expected)
    return val if exact else float(val)


def set_partitions(n, max_blocks):
    """Restricted growth strings of length n with at most max_blocks blocks (1-based)."""
    def rec(prefix, k):
        if len(prefix) == n:
            yield tuple(prefix)
            return
        for v in range(1, min(k + 1, max_blocks) + 1):
            yield from rec(prefix + [v], max(k, v))
    yield from rec([1], 1)


def jacobi_eigh(A, tol=1e-14, max_sweeps=100):
    """Cyclic Jacobi eigen-decomposition of a symmetric matrix; eigenvalues descending."""
    A = np.array(A, dtype=float)
    n = A.shape[0]
    V = np.eye(n)
    for _ in range(max_sweeps):
        off = float(np.linalg.norm(A - np.diag(np.diag(A))))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(A[p, q]) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2 * A[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1))
                c = 1 / math.sqrt(t * t + 1)
                s = t * c
                J = np.eye(n)
                J[p, p] = J[q, q] = c
                J[p, q] = s
                J[q, p] = -s
                A = J.T @ A @ J
                V = V @ J
    vals = np.diag(A).copy()
    order = np.argsort(vals)[::-1]
    return vals[order], V[:, order]


def dense_distance(betas, labels):
    """N x N matrix with entry (i, j) = ||beta_{y_i} - beta_{y_j}||, by explicit loops."""
    n = len(labels)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            diff = np.asarray(betas[labels[i] - 1], float) - np.asarray(betas[labels[j] - 1], float)
            D[i, j] = math.sqrt(sum(d * d for d in diff))
    return D


def nearest_center_scan(x, centers):
    best, best_k = math.inf, None
    for k, c in enumerate(centers):
        d = sum((xi - ci) ** 2 for xi, ci in zip(x, c))
        if d < best:
            best, best_k = d, k + 1
    return best_k


def markov_log_posterior(seq, initial, transitions, mixing):
    """Unnormalized log posterior of each component, straight from the product formula."""
    out = []
    for k in range(len(mixing)):
        lp = math.log(mixing[k]) + math.log(initial[k][seq[0] - 1])
        for a, b in zip(seq[:-1], seq[1:]):
            lp += math.log(transitions[k][a - 1][b - 1])
        out.append(lp)
    return out


def markov_counts(seqs, labels, K, S):
    """Per-cluster empirical (u, T) by plain counting; empty rows left as None."""
    u = [[0] * S for _ in range(K)]
    T = [[[0] * S for _ in range(S)] for _ in range(K)]
    for seq, y in zip(seqs, labels):
        u[y - 1][seq[0] - 1] += 1
        for a, b in zip(seq[:-1], seq[1:]):
            T[y - 1][a - 1][b - 1] += 1
    U = np.full((K, S), 1.0 / S)
    TT = np.full((K, S, S), 1.0 / S)
    for k in range(K):
        if sum(u[k]):
            U[k] = np.array(u[k]) / sum(u[k])
        for s in range(S):
            if sum(T[k][s]):
                TT[k, s] = np.array(T[k][s]) / sum(T[k][s])
    return U, TT


def pearson(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def connectivity(labels_matrix):
    """Average co-membership matrix (1/M) sum_m [y_i^m == y_j^m]."""
    L = np.asarray(labels_matrix)
    N, M = L.shape
    S = np.zeros((N, N))
    for m in range(L.shape[1]):
        S += (L[:, m][:, None] == L[:, m][None, :]).astype(float)
    return S / M
