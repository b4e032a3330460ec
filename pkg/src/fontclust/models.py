"""Local clustering backends.

Two model kinds are supported:

* ``kmeans`` for real-valued feature vectors, and
* ``markov_mixture`` for categorical sequences (a finite mixture of first-order
  Markov chains fitted by EM).

Both reduce a fitted model to ``K`` cluster-specific parameter vectors
(``betas``) that are enough to assign any new observation to a cluster. Labels
are 1-based everywhere in the public API.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from . import _rng
from .errors import (
    ConfigInvalid,
    DegenerateComponent,
    DimensionMismatch,
    EmptyClusterHandled,
    InvalidState,
    NonFinite,
    TooFewPoints,
    TooFewSequences,
)

KINDS = ("kmeans", "markov_mixture")
PROB_TOL = 1e-9
_LOG_FLOOR = 1e-300
_CHUNK = 1 << 22


@dataclass(frozen=True)
class FitConfig:
    restarts: int = 10
    max_iter: int = 300
    tol: float = 1e-6
    smoothing: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1 or self.max_iter < 1:
            raise ConfigInvalid("restarts and max_iter must be >= 1")
        if self.tol < 0 or self.smoothing < 0:
            raise ConfigInvalid("tol and smoothing must be nonnegative")

    def replace(self, **kw) -> "FitConfig":
        d = dict(self.__dict__)
        d.update(kw)
        return FitConfig(**d)


@dataclass(frozen=True)
class ClusterModelParams:
    """Parameters of one fitted local model.

    ``betas`` is a ``(K, d)`` array. For ``kmeans`` each row is a center in
    R^p. For ``markov_mixture`` each row is the initial-state vector ``u``
    followed by the row-major flattened transition matrix ``T``
    (``d = S + S*S``), and ``mixing`` holds the class proportions.
    """

    kind: str
    betas: np.ndarray
    mixing: np.ndarray | None = None
    S: int | None = None

    def __post_init__(self):
        betas = np.atleast_2d(np.asarray(self.betas, dtype=float))
        object.__setattr__(self, "betas", betas)
        if self.mixing is not None:
            object.__setattr__(self, "mixing", np.asarray(self.mixing, dtype=float))
        if self.kind not in KINDS:
            raise ConfigInvalid(f"unknown model kind {self.kind!r}")
        if self.kind == "markov_mixture":
            if self.S is None or self.mixing is None:
                raise ConfigInvalid("markov_mixture params need S and mixing")
            if betas.shape[1] != self.S + self.S * self.S:
                raise DimensionMismatch("beta length must be S + S^2")
            if self.mixing.shape != (betas.shape[0],):
                raise DimensionMismatch("mixing must have K entries")

    @property
    def K(self) -> int:
        return self.betas.shape[0]

    @property
    def initial(self) -> np.ndarray:
        return self.betas[:, : self.S]

    @property
    def transitions(self) -> np.ndarray:
        return self.betas[:, self.S :].reshape(self.K, self.S, self.S)

    def check(self, atol: float = PROB_TOL) -> None:
        """Raise ``ValueError`` if the probability invariants do not hold."""
        if not np.all(np.isfinite(self.betas)):
            raise NonFinite("non-finite parameters")
        if self.kind != "markov_mixture":
            return
        if np.any(self.betas < 0) or np.any(self.mixing < 0):
            raise ValueError("negative probability")
        if not np.allclose(self.initial.sum(axis=1), 1.0, rtol=0, atol=atol):
            raise ValueError("initial-state vectors must sum to 1")
        if not np.allclose(self.transitions.sum(axis=2), 1.0, rtol=0, atol=atol):
            raise ValueError("transition rows must sum to 1")
        if abs(self.mixing.sum() - 1.0) > atol:
            raise ValueError("mixing proportions must sum to 1")

    def permuted(self, perm: Sequence[int]) -> "ClusterModelParams":
        """New params whose component ``k`` is the old component ``perm[k]`` (0-based)."""
        perm = np.asarray(perm)
        mixing = None if self.mixing is None else self.mixing[perm]
        return ClusterModelParams(self.kind, self.betas[perm], mixing, self.S)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "K": self.K, "betas": self.betas.tolist()}
        if self.kind == "markov_mixture":
            d["mixing"] = self.mixing.tolist()
            d["S"] = int(self.S)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterModelParams":
        params = cls(d["kind"], np.asarray(d["betas"], dtype=float), d.get("mixing"), d.get("S"))
        if params.K != d["K"]:
            raise DimensionMismatch("K does not match number of betas")
        return params

    @classmethod
    def from_markov(cls, initial, transitions, mixing) -> "ClusterModelParams":
        initial = np.atleast_2d(np.asarray(initial, dtype=float))
        transitions = np.asarray(transitions, dtype=float)
        if transitions.ndim == 2:
            transitions = transitions[None]
        K, S = initial.shape
        betas = np.hstack([initial, transitions.reshape(K, S * S)])
        return cls("markov_mixture", betas, np.asarray(mixing, dtype=float), S)


@dataclass
class VectorDataset:
    rows: np.ndarray
    site_id: int = 0
    true_labels: np.ndarray | None = None
    outlier_mask: np.ndarray | None = None
    parent_site: int | None = None
    replica: int | None = None
    source_index: np.ndarray | None = None

    def __post_init__(self):
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        if not np.all(np.isfinite(self.rows)):
            raise NonFinite("feature rows contain non-finite values")
        if self.true_labels is not None:
            self.true_labels = np.asarray(self.true_labels, dtype=int)
        if self.outlier_mask is None:
            self.outlier_mask = np.zeros(len(self.rows), dtype=bool)
        else:
            self.outlier_mask = np.asarray(self.outlier_mask, dtype=bool)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def p(self) -> int:
        return self.rows.shape[1]


@dataclass
class SequenceDataset:
    sequences: list
    site_id: int = 0
    true_labels: np.ndarray | None = None
    S: int | None = None
    parent_site: int | None = None
    replica: int | None = None
    outlier_mask: np.ndarray | None = field(default=None)
    source_index: np.ndarray | None = None

    def __post_init__(self):
        self.sequences = [np.asarray(s, dtype=int) for s in self.sequences]
        for i, seq in enumerate(self.sequences):
            if seq.ndim != 1 or len(seq) < 2:
                raise InvalidState(f"sequence {i} must have length >= 2")
            if seq.min() < 1 or (self.S is not None and seq.max() > self.S):
                raise InvalidState(f"sequence {i} has a symbol outside 1..{self.S}")
        if self.true_labels is not None:
            self.true_labels = np.asarray(self.true_labels, dtype=int)
        if self.outlier_mask is None:
            self.outlier_mask = np.zeros(len(self.sequences), dtype=bool)
        else:
            self.outlier_mask = np.asarray(self.outlier_mask, dtype=bool)

    def __len__(self) -> int:
        return len(self.sequences)


# ---------------------------------------------------------------------------
# K-means


def squared_distances(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Exact ``(n, K)`` squared Euclidean distances by explicit differences.

    Computed row-wise so a point gets bit-identical distances whether it is
    evaluated alone or inside a batch.
    """
    n, p = X.shape
    out = np.empty((n, C.shape[0]))
    step = max(1, _CHUNK // max(1, C.shape[0] * p))
    for lo in range(0, n, step):
        diff = X[lo : lo + step, None, :] - C[None, :, :]
        out[lo : lo + step] = np.einsum("ikp,ikp->ik", diff, diff)
    return out


def kmeans_plusplus(X: np.ndarray, K: int, rng: np.random.Generator, weights=None) -> np.ndarray:
    n = X.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    base = w / w.sum()
    centers = np.empty((K, X.shape[1]))
    centers[0] = X[rng.choice(n, p=base)]
    d2 = squared_distances(X, centers[:1])[:, 0]
    for k in range(1, K):
        mass = w * d2
        total = mass.sum()
        # every point already sits on a center
        idx = rng.choice(n, p=base) if total <= 0 else rng.choice(n, p=mass / total)
        centers[k] = X[idx]
        d2 = np.minimum(d2, squared_distances(X, centers[k : k + 1])[:, 0])
    return centers


@dataclass
class LloydRun:
    centers: np.ndarray
    labels: np.ndarray  # 0-based
    objective: float
    history: list
    n_iter: int
    converged: bool
    empty_refills: int = 0
    unfilled_empty: bool = False


def _assign(X, centers, w):
    d2 = squared_distances(X, centers)
    labels = np.argmin(d2, axis=1)
    mins = d2[np.arange(len(X)), labels]
    return labels, mins, float(np.dot(w, mins))


def _update_centers(X, w, labels, centers):
    K = centers.shape[0]
    mass = np.bincount(labels, weights=w, minlength=K)
    sums = np.zeros_like(centers)
    np.add.at(sums, labels, X * w[:, None])
    new = centers.copy()
    filled = mass > 0
    new[filled] = sums[filled] / mass[filled, None]
    return new, ~filled


def lloyd(X, K, rng, weights=None, max_iter=300, tol=1e-6, init=None) -> LloydRun:
    """One weighted Lloyd run from a k-means++ (or given) start.

    ``history`` holds the objective after each assignment step; it is
    non-increasing. An empty cluster is refilled with the point farthest from
    its own center, which becomes a singleton center.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    centers = kmeans_plusplus(X, K, rng, w) if init is None else np.array(init, dtype=float)
    history = []
    refills = 0
    unfilled = False
    converged = False
    prev = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        labels, mins, obj = _assign(X, centers, w)
        history.append(obj)
        if obj == 0.0 or (it > 1 and prev - obj <= tol * abs(prev)):
            converged = True
            break
        prev = obj
        centers, empty = _update_centers(X, w, labels, centers)
        if empty.any():
            d2 = squared_distances(X, centers)[np.arange(n), labels]
            for k in np.flatnonzero(empty):
                cand = w * d2 > 0
                if not cand.any():
                    unfilled = True
                    break
                far = int(np.argmax(np.where(cand, d2, -1.0)))
                centers[k] = X[far]
                labels[far] = k
                d2[far] = 0.0
                refills += 1
    else:
        labels, mins, obj = _assign(X, centers, w)
        history.append(obj)
    if np.bincount(labels, minlength=K).min() == 0:
        unfilled = True
    return LloydRun(centers, labels, obj, history, it, converged, refills, unfilled)


def weighted_kmeans(X, K, cfg: FitConfig, weights=None, stream_key=()) -> LloydRun:
    """Best of ``cfg.restarts`` Lloyd runs; restart ``r`` uses stream (seed, *key, r)."""
    best = None
    for r in range(cfg.restarts):
        rng = _rng.stream(cfg.seed, *stream_key, r)
        run = lloyd(X, K, rng, weights, cfg.max_iter, cfg.tol)
        if best is None or run.objective < best.objective:
            best = run
    if best.unfilled_empty:
        warnings.warn(EmptyClusterHandled("fewer distinct points than clusters"), stacklevel=2)
    return best


def _rows(data) -> np.ndarray:
    X = data.rows if isinstance(data, VectorDataset) else np.atleast_2d(np.asarray(data, dtype=float))
    if not np.all(np.isfinite(X)):
        raise NonFinite("data contains non-finite values")
    return X


def kmeans_fit(data, K: int, cfg: FitConfig = FitConfig(), stream_key=()):
    """Fit K-means; returns ``(params, labels)`` with 1-based labels."""
    X = _rows(data)
    if X.shape[0] < K:
        raise TooFewPoints(f"need at least K={K} points, got {X.shape[0]}")
    run = weighted_kmeans(X, K, cfg, stream_key=stream_key)
    params = ClusterModelParams("kmeans", run.centers)
    return params, run.labels + 1


def kmeans_assign_many(params: ClusterModelParams, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if params.kind != "kmeans":
        raise ConfigInvalid("kmeans_assign needs kmeans params")
    if X.shape[1] != params.betas.shape[1]:
        raise DimensionMismatch(f"point has {X.shape[1]} features, centers have {params.betas.shape[1]}")
    return np.argmin(squared_distances(X, params.betas), axis=1) + 1


def kmeans_assign(params: ClusterModelParams, x) -> int:
    """Index (1-based) of the nearest center; ties go to the smallest index."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatch("expected a single point")
    return int(kmeans_assign_many(params, x[None, :])[0])


def kmeans_objective(params: ClusterModelParams, X) -> float:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return float(squared_distances(X, params.betas).min(axis=1).sum())


# ---------------------------------------------------------------------------
# Mixture of Markov chains


def sequence_stats(sequences, S: int):
    """First-state indicators ``(N, S)`` and transition counts ``(N, S, S)``."""
    N = len(sequences)
    first = np.zeros((N, S))
    counts = np.zeros((N, S, S))
    for i, seq in enumerate(sequences):
        seq = np.asarray(seq, dtype=int)
        if seq.ndim != 1 or len(seq) < 2:
            raise InvalidState(f"sequence {i} must have length >= 2")
        if seq.min() < 1 or seq.max() > S:
            raise InvalidState(f"sequence {i} has a symbol outside 1..{S}")
        first[i, seq[0] - 1] = 1.0
        np.add.at(counts[i], (seq[:-1] - 1, seq[1:] - 1), 1.0)
    return first, counts


def _safe_log(a):
    return np.log(np.maximum(a, _LOG_FLOOR))


def _component_loglik(first, counts, initial, transitions):
    """``(N, K)`` log P(x_i | class k), evaluated row by row."""
    N, S = first.shape
    K = initial.shape[0]
    lu = _safe_log(initial)
    lt = _safe_log(transitions).reshape(K, S * S)
    cf = counts.reshape(N, S * S)
    return (first[:, None, :] * lu[None]).sum(-1) + (cf[:, None, :] * lt[None]).sum(-1)


def _joint_loglik(params: ClusterModelParams, first, counts):
    return _safe_log(params.mixing)[None, :] + _component_loglik(
        first, counts, params.initial, params.transitions
    )


def markov_loglik(params: ClusterModelParams, sequences) -> float:
    """Observed-data log-likelihood of the mixture."""
    first, counts = sequence_stats(_seqs(sequences), params.S)
    return float(logsumexp(_joint_loglik(params, first, counts), axis=1).sum())


@dataclass
class EMRun:
    params: ClusterModelParams  # unsmoothed MLE
    loglik: float
    history: list
    n_iter: int
    converged: bool
    resp: np.ndarray


def _m_step(R, first, counts):
    S = first.shape[1]
    Nk = R.sum(axis=0)
    mixing = Nk / Nk.sum()
    u = R.T @ first
    tc = np.einsum("ik,iab->kab", R, counts)
    with np.errstate(invalid="ignore", divide="ignore"):
        usum = u.sum(axis=1, keepdims=True)
        u = np.where(usum > 0, u / usum, 1.0 / S)
        rsum = tc.sum(axis=2, keepdims=True)
        T = np.where(rsum > 0, tc / rsum, 1.0 / S)
    return ClusterModelParams.from_markov(u, T, mixing)


def markov_em(first, counts, K, rng, max_iter=300, tol=1e-6) -> EMRun:
    """One EM run from Dirichlet(1) random responsibilities."""
    N = first.shape[0]
    R = rng.dirichlet(np.ones(K), size=N)
    history = []
    prev = -math.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        params = _m_step(R, first, counts)
        joint = _joint_loglik(params, first, counts)
        lse = logsumexp(joint, axis=1)
        ll = float(lse.sum())
        history.append(ll)
        R = np.exp(joint - lse[:, None])
        if ll - prev <= tol * abs(ll):
            converged = True
            break
        prev = ll
    return EMRun(params, ll, history, it, converged, R)


def smooth(params: ClusterModelParams, eps: float) -> ClusterModelParams:
    """Floor every probability at ``eps`` and renormalize."""
    if eps <= 0:
        return params

    def _norm(a):
        a = np.maximum(a, eps)
        return a / a.sum(axis=-1, keepdims=True)

    return ClusterModelParams.from_markov(
        _norm(params.initial), _norm(params.transitions), _norm(params.mixing)
    )


def _seqs(data):
    return data.sequences if isinstance(data, SequenceDataset) else list(data)


def markov_mixture_fit(data, K: int, S: int, cfg: FitConfig = FitConfig(), stream_key=()):
    """Fit a K-component Markov-chain mixture by EM; returns ``(params, labels)``.

    The best of ``cfg.restarts`` runs (by log-likelihood) is kept, smoothed,
    and used to label the sequences by posterior argmax.
    """
    seqs = _seqs(data)
    if len(seqs) < K:
        raise TooFewSequences(f"need at least K={K} sequences, got {len(seqs)}")
    first, counts = sequence_stats(seqs, S)
    best = None
    for r in range(cfg.restarts):
        run = markov_em(first, counts, K, _rng.stream(cfg.seed, *stream_key, r), cfg.max_iter, cfg.tol)
        if best is None or run.loglik > best.loglik:
            best = run
    mass = best.resp.sum(axis=0)
    if np.any(mass < 1.0 / len(seqs)):
        warnings.warn(
            DegenerateComponent(f"component posterior mass {mass.min():.3g} < 1/N"), stacklevel=2
        )
    params = smooth(best.params, cfg.smoothing)
    labels = np.argmax(_joint_loglik(params, first, counts), axis=1) + 1
    return params, labels


def markov_assign_many(params: ClusterModelParams, sequences) -> np.ndarray:
    if params.kind != "markov_mixture":
        raise ConfigInvalid("markov_assign needs markov_mixture params")
    first, counts = sequence_stats(_seqs(sequences), params.S)
    return np.argmax(_joint_loglik(params, first, counts), axis=1) + 1


def markov_assign(params: ClusterModelParams, seq) -> int:
    """Posterior-argmax class of one sequence (log space, ties to smallest k)."""
    return int(markov_assign_many(params, [seq])[0])


# ---------------------------------------------------------------------------
# Generic dispatch and model selection


def fit_local(data, kind: str, K: int, cfg: FitConfig = FitConfig(), S: int | None = None, stream_key=()):
    if kind == "kmeans":
        return kmeans_fit(data, K, cfg, stream_key)
    if kind == "markov_mixture":
        S = S if S is not None else data.S
        return markov_mixture_fit(data, K, S, cfg, stream_key)
    raise ConfigInvalid(f"unknown model kind {kind!r}")


def assign_many(params: ClusterModelParams, data) -> np.ndarray:
    """Apply a model's assignment rule to every observation of a dataset."""
    if params.kind == "kmeans":
        return kmeans_assign_many(params, data.rows if isinstance(data, VectorDataset) else data)
    return markov_assign_many(params, data)


def n_free_params(kind: str, K: int, p: int | None = None, S: int | None = None) -> int:
    if kind == "markov_mixture":
        return K * (S - 1) + K * S * (S - 1) + (K - 1)
    return K * p + 1 + (K - 1)


def information_criterion(kind, data, params, labels, criterion="bic") -> float:
    if kind == "kmeans":
        X = _rows(data)
        N, p = X.shape
        sse = float(squared_distances(X, params.betas)[np.arange(N), labels - 1].sum())
        var = max(sse / (N * p), 1e-12)
        nk = np.bincount(labels - 1, minlength=params.K)
        nk = nk[nk > 0]
        ll = float(np.sum(nk * np.log(nk / N))) - 0.5 * N * p * (math.log(2 * math.pi * var) + 1.0)
        k = n_free_params(kind, params.K, p=p)
    else:
        seqs = _seqs(data)
        N = len(seqs)
        ll = markov_loglik(params, seqs)
        k = n_free_params(kind, params.K, S=params.S)
    if criterion == "bic":
        return -2.0 * ll + k * math.log(N)
    if criterion == "aic":
        return -2.0 * ll + 2.0 * k
    raise ConfigInvalid(f"unknown criterion {criterion!r}")


def select_k_local(data, kind: str, k_range, criterion: str = "bic", cfg: FitConfig = FitConfig(), S=None,
                   stream_key=()) -> int:
    """Fit each K in ``k_range`` and return the one minimizing the criterion."""
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise ConfigInvalid("k_range is empty")
    if criterion not in ("bic", "aic"):
        raise ConfigInvalid(f"unknown criterion {criterion!r}")
    if len(ks) == 1:
        return ks[0]
    scores = []
    for K in ks:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateComponent)
            params, labels = fit_local(data, kind, K, cfg, S=S, stream_key=("select", *stream_key, K))
        scores.append(information_criterion(kind, data, params, labels, criterion))
    return ks[int(np.argmin(scores))]
