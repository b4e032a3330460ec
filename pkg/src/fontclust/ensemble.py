"""Spectral ensemble of label-switching-invariant distance matrices.

Each local model m induces an N x N subject distance matrix
``D_m[i, j] = d(beta_{y_i}, beta_{y_j})`` which only depends on the labels
through the K x K inter-cluster table, so it is stored compressed as
``(labels, table)``. Inner products between the vectorized matrices reduce to
contingency tables, and the weighted consensus is stored over the distinct
label profiles (rows of the N x M label matrix).
"""
from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import (
    AllDegenerate,
    ConfigInvalid,
    DegenerateRep,
    EigenFailure,
    SubjectCountMismatch,
)
from .models import ClusterModelParams, FitConfig, weighted_kmeans

Metric = Callable[[np.ndarray, np.ndarray], float]

POWER_TOL = 1e-12
POWER_MAX_ITER = 10_000


def euclidean(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(np.sum((np.asarray(a) - np.asarray(b)) ** 2)))


@dataclass
class DistanceRep:
    """Compressed distance matrix of one model: labels plus K x K table."""

    labels: np.ndarray
    table: np.ndarray
    model_id: object = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)
        self.table = np.asarray(self.table, dtype=float)
        K = self.table.shape[0]
        if self.table.shape != (K, K):
            raise ConfigInvalid("table must be square")
        if self.labels.size and (self.labels.min() < 1 or self.labels.max() > K):
            raise ConfigInvalid(f"labels must lie in 1..{K}")

    @property
    def N(self) -> int:
        return len(self.labels)

    @property
    def K(self) -> int:
        return self.table.shape[0]

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels - 1, minlength=self.K).astype(float)

    @property
    def frob_norm(self) -> float:
        n = self.counts()
        return math.sqrt(float(n @ (self.table**2) @ n))

    @property
    def degenerate(self) -> bool:
        return self.frob_norm == 0.0

    def dense(self) -> np.ndarray:
        idx = self.labels - 1
        return self.table[np.ix_(idx, idx)]

    def vector(self) -> np.ndarray:
        """Column-stacked vectorization of the dense matrix."""
        return self.dense().reshape(-1, order="F")

    def permuted(self, perm: Sequence[int]) -> "DistanceRep":
        """Relabel: new cluster k is old cluster perm[k] (0-based)."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return DistanceRep(inv[self.labels - 1] + 1, self.table[np.ix_(perm, perm)], self.model_id)

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "labels": self.labels.tolist(),
            "table": self.table.tolist(),
            "frob_norm": self.frob_norm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DistanceRep":
        return cls(np.asarray(d["labels"]), np.asarray(d["table"]), d.get("model_id"))


def distance_table(betas: np.ndarray, metric: Metric | None = None) -> np.ndarray:
    betas = np.atleast_2d(np.asarray(betas, dtype=float))
    K = betas.shape[0]
    if metric is None:
        diff = betas[:, None, :] - betas[None, :, :]
        return np.sqrt(np.einsum("klp,klp->kl", diff, diff))
    table = np.zeros((K, K))
    for k in range(K):
        for l in range(k + 1, K):
            table[k, l] = table[l, k] = metric(betas[k], betas[l])
    return table


def build_distance_rep(params, labels, metric: Metric | None = None, model_id=None) -> DistanceRep:
    """Distance representation of a model's predicted labels.

    ``params`` may be a :class:`ClusterModelParams` or a raw ``(K, d)`` beta
    array (the latter is how the oracle matrix is built from true means).
    A rep with zero Frobenius norm is returned with a :class:`DegenerateRep`
    warning; the ensemble gives it zero weight.
    """
    betas = params.betas if isinstance(params, ClusterModelParams) else params
    rep = DistanceRep(labels, distance_table(betas, metric), model_id)
    if rep.degenerate:
        warnings.warn(DegenerateRep(f"model {model_id!r}: all subjects share one cluster"), stacklevel=2)
    return rep


def oracle_rep(true_betas, true_labels, metric: Metric | None = None) -> DistanceRep:
    """The oracle distance matrix from true labels and true cluster parameters."""
    return build_distance_rep(np.asarray(true_betas), true_labels, metric, model_id="oracle")


def contingency(a: np.ndarray, b: np.ndarray, Ka: int, Kb: int) -> np.ndarray:
    C = np.zeros((Ka, Kb))
    np.add.at(C, (np.asarray(a) - 1, np.asarray(b) - 1), 1.0)
    return C


def rep_inner(r: DistanceRep, s: DistanceRep) -> float:
    """<vec D_r, vec D_s> without forming N x N matrices."""
    if r.N != s.N:
        raise SubjectCountMismatch(f"reps cover {r.N} and {s.N} subjects")
    C = contingency(r.labels, s.labels, r.K, s.K)
    return float(np.sum(r.table * (C @ s.table @ C.T)))


def agreement_matrix(reps: Sequence[DistanceRep]) -> np.ndarray:
    """M x M cosine similarities between the vectorized distance matrices."""
    M = len(reps)
    if M and any(r.N != reps[0].N for r in reps):
        raise SubjectCountMismatch("all reps must cover the same subjects")
    norms = np.array([r.frob_norm for r in reps])
    if np.any(norms == 0):
        raise AllDegenerate("degenerate reps must be filtered before computing agreement")
    G = np.empty((M, M))
    for t in range(M):
        for s in range(t, M):
            G[t, s] = G[s, t] = rep_inner(reps[t], reps[s]) / (norms[t] * norms[s])
    return G


def agreement_matrix_dense(reps: Sequence[DistanceRep]) -> np.ndarray:
    """Reference computation on explicit N^2 vectors (test oracle, O(M N^2) memory)."""
    F = np.stack([r.vector() for r in reps])
    F = F / np.linalg.norm(F, axis=1, keepdims=True)
    return F @ F.T


@dataclass
class AgreementWeights:
    G: np.ndarray
    leading_eigvec: np.ndarray
    weights: np.ndarray
    eigenvalue: float
    method: str = "power"

    def to_dict(self) -> dict:
        return {
            "G": self.G.tolist(),
            "leading_eigvec": self.leading_eigvec.tolist(),
            "weights": self.weights.tolist(),
            "eigenvalue": self.eigenvalue,
            "method": self.method,
        }


def leading_eigenpair(G: np.ndarray, tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER):
    """Largest eigenpair of a symmetric matrix.

    Power iteration from the uniform vector; falls back to a full symmetric
    decomposition when the residual does not reach ``tol`` in ``max_iter`` steps.
    """
    G = np.asarray(G, dtype=float)
    M = G.shape[0]
    v = np.full(M, 1.0 / math.sqrt(M))
    lam = float(v @ G @ v)
    for _ in range(max_iter):
        Gv = G @ v
        lam = float(v @ Gv)
        if np.linalg.norm(Gv - lam * v) <= tol * max(1.0, abs(lam)) and lam >= 0:
            return lam, v, "power"
        nrm = np.linalg.norm(Gv)
        if nrm == 0:
            break
        v = Gv / nrm
    try:
        vals, vecs = np.linalg.eigh(G)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from exc
    return float(vals[-1]), vecs[:, -1], "eigh"


def spectral_weights(G: np.ndarray) -> AgreementWeights:
    G = np.asarray(G, dtype=float)
    if G.ndim != 2 or G.shape[0] != G.shape[1] or G.shape[0] < 2:
        raise ConfigInvalid("G must be a square matrix with M >= 2")
    if not np.allclose(G, G.T, rtol=0, atol=1e-12):
        raise ConfigInvalid("G must be symmetric")
    if np.any(G <= 0):
        warnings.warn("agreement matrix is not entrywise positive; eigenvector signs may be mixed", stacklevel=2)
    lam, v, method = leading_eigenpair(G)
    v = v / np.linalg.norm(v)
    if v.sum() < 0:
        v = -v
    return AgreementWeights(G, v, np.abs(v), lam, method)


@dataclass
class ConsensusDistance:
    """Weighted consensus distance over distinct label profiles."""

    profiles: np.ndarray  # (P, M) label profiles
    multiplicity: np.ndarray  # (P,)
    rows: np.ndarray  # (P, P)
    subject_index: np.ndarray  # (N,) profile of each subject

    @property
    def N(self) -> int:
        return len(self.subject_index)

    def dense(self) -> np.ndarray:
        return self.rows[np.ix_(self.subject_index, self.subject_index)]


def effective_weights(reps: Sequence[DistanceRep], weights) -> np.ndarray:
    """Zero the weights of degenerate reps and renormalize to unit length."""
    w = np.asarray(weights, dtype=float).copy()
    if len(w) != len(reps):
        raise ConfigInvalid("one weight per rep required")
    for m, r in enumerate(reps):
        if r.degenerate:
            w[m] = 0.0
    nrm = np.linalg.norm(w)
    if nrm == 0:
        raise AllDegenerate("no non-degenerate rep with positive weight")
    return w / nrm


def label_matrix(reps: Sequence[DistanceRep]) -> np.ndarray:
    return np.column_stack([r.labels for r in reps])


def label_profiles(L: np.ndarray):
    """Distinct rows of ``L`` in order of first appearance, with inverse map and counts.

    First-appearance order depends only on which subjects share a profile, not
    on the label values, so relabelling any model leaves the order unchanged.
    """
    profiles, first, inverse, mult = np.unique(L, axis=0, return_index=True, return_inverse=True,
                                               return_counts=True)
    inverse = np.asarray(inverse).reshape(-1)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return profiles[order], rank[inverse], mult[order]


def ensemble_distance(reps: Sequence[DistanceRep], weights) -> ConsensusDistance:
    """Sum of weight_m * D_m / ||D_m||_F, stored over distinct profiles."""
    if not reps:
        raise AllDegenerate("no reps")
    if any(r.N != reps[0].N for r in reps):
        raise SubjectCountMismatch("all reps must cover the same subjects")
    w = effective_weights(reps, weights)
    L = label_matrix(reps)
    profiles, inverse, mult = label_profiles(L)
    P = len(profiles)
    rows = np.zeros((P, P))
    for m, r in enumerate(reps):
        if w[m] == 0:
            continue
        idx = profiles[:, m] - 1
        rows += (w[m] / r.frob_norm) * r.table[np.ix_(idx, idx)]
    return ConsensusDistance(profiles, mult, rows, inverse)


def ensemble_distance_dense(reps: Sequence[DistanceRep], weights) -> np.ndarray:
    """Reference dense consensus (test oracle)."""
    w = effective_weights(reps, weights)
    out = np.zeros((reps[0].N, reps[0].N))
    for m, r in enumerate(reps):
        if w[m] > 0:
            out += w[m] * r.dense() / np.linalg.norm(r.dense())
    return out


def final_cluster(cd: ConsensusDistance, K: int, cfg: FitConfig = FitConfig()) -> np.ndarray:
    """K-means on the rows of the consensus distance, one point per subject.

    Distinct profiles are clustered with multiplicity weights; columns are
    scaled by sqrt(multiplicity) so Euclidean geometry matches the dense rows.
    """
    if K < 2:
        raise ConfigInvalid("final clustering needs K >= 2")
    mult = cd.multiplicity.astype(float)
    Z = cd.rows * np.sqrt(mult)[None, :]
    run = weighted_kmeans(Z, K, cfg, weights=mult, stream_key=("final",))
    return run.labels[cd.subject_index] + 1


def select_k_majority(local_ks: Sequence[int]) -> int:
    """Most frequent K; ties go to the smallest value."""
    if not local_ks:
        raise ConfigInvalid("need at least one local K")
    counts = Counter(int(k) for k in local_ks)
    top = max(counts.values())
    return min(k for k, c in counts.items() if c == top)


@dataclass
class FontFit:
    labels: np.ndarray
    weights: np.ndarray  # aligned with the input reps; degenerate reps get 0
    agreement: AgreementWeights | None
    consensus: ConsensusDistance
    used: np.ndarray  # indices of non-degenerate reps


def font_consensus(reps: Sequence[DistanceRep], K: int, cfg: FitConfig = FitConfig()) -> FontFit:
    """Weights, consensus distance and final labels from a list of reps."""
    used = np.array([m for m, r in enumerate(reps) if not r.degenerate], dtype=int)
    if used.size == 0:
        raise AllDegenerate("every local model predicted a single cluster")
    weights = np.zeros(len(reps))
    agreement = None
    if used.size == 1:
        weights[used] = 1.0
    else:
        agreement = spectral_weights(agreement_matrix([reps[m] for m in used]))
        weights[used] = agreement.weights
    cd = ensemble_distance(reps, weights)
    return FontFit(final_cluster(cd, K, cfg), weights, agreement, cd, used)
