"""Comparator methods: local, consensus (average connectivity), K-fed, pooled, best local.

``pooled`` and ``best_local`` need information a federated deployment does not
have (raw data from all sites, true labels) and are flagged as oracles.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .ensemble import label_profiles
from .errors import ConfigInvalid, EigenFailure, TooFewPoints, TruthRequired
from .metrics import masked_ari
from .models import (
    ClusterModelParams,
    FitConfig,
    VectorDataset,
    assign_many,
    fit_local,
    kmeans_assign_many,
    kmeans_fit,
    weighted_kmeans,
)

METHODS = ("font", "local", "consensus", "kfed", "pooled", "best_local")
ORACLE_METHODS = frozenset({"pooled", "best_local"})


@dataclass
class BenchmarkResult:
    method: str
    labels: object  # N-vector, or a list of per-site vectors for "local"
    ari: float | None
    wall_time: float
    oracle: bool = False
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"method": self.method, "ari": self.ari, "wall_time": self.wall_time,
                "oracle": self.oracle, "extra": self.extra}


def _sites(ds):
    return ds.sites if hasattr(ds, "sites") else list(ds)


def _site_S(site):
    return getattr(site, "S", None)


def local_fits(ds, K: int, cfg: FitConfig, kind: str = "kmeans"):
    """Per-site ``(params, labels)``; site m uses stream key ("fit", m)."""
    return [fit_local(s, kind, K, cfg, S=_site_S(s), stream_key=("fit", m)) for m, s in enumerate(_sites(ds))]


def global_label_matrix(ds, fits) -> np.ndarray:
    """N x M labels: every site model applied to every subject (sites concatenated)."""
    sites = _sites(ds)
    cols = [np.concatenate([assign_many(params, s) for s in sites]) for params, _ in fits]
    return np.column_stack(cols)


def _truth(ds):
    sites = _sites(ds)
    if any(s.true_labels is None for s in sites):
        return None, None
    truth = np.concatenate([s.true_labels for s in sites])
    mask = ~np.concatenate([s.outlier_mask for s in sites])
    return truth, mask


def run_local(ds, K: int, cfg: FitConfig = FitConfig(), kind: str = "kmeans", fits=None) -> BenchmarkResult:
    """Each site clusters itself; ARI is the unweighted mean of per-site ARIs."""
    t0 = time.perf_counter()
    fits = fits if fits is not None else local_fits(ds, K, cfg, kind)
    labels = [lab for _, lab in fits]
    per_site = []
    for s, lab in zip(_sites(ds), labels):
        if s.true_labels is not None:
            per_site.append(masked_ari(lab, s.true_labels, ~s.outlier_mask))
    ari = float(np.mean(per_site)) if per_site else None
    return BenchmarkResult("local", labels, ari, time.perf_counter() - t0,
                           extra={"per_site_ari": per_site, "aggregation": "unweighted mean over sites"})


def connectivity_embedding(label_matrix: np.ndarray, K: int):
    """Rows of U with U U^T the best rank-K approximation of the average connectivity.

    The average connectivity is H H^T / M with H the one-hot label blocks, so
    its top eigenpairs come from the small matrix H^T H / M. Returned per
    distinct label profile together with the profile index of every subject.
    """
    L = np.asarray(label_matrix, dtype=int)
    N, M = L.shape
    profiles, inverse, mult = label_profiles(L)
    blocks = []
    for m in range(M):
        Km = int(L[:, m].max())
        blocks.append(np.eye(Km)[profiles[:, m] - 1])
    Hp = np.hstack(blocks)  # (P, sum K_m)
    gram = (Hp.T * mult) @ Hp / M
    try:
        vals, vecs = np.linalg.eigh(gram)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from exc
    order = np.argsort(vals)[::-1][:K]
    vals, vecs = vals[order], vecs[:, order]
    vecs[:, vals <= 0] = 0.0
    U = Hp @ vecs / np.sqrt(M)
    if U.shape[1] < K:
        U = np.hstack([U, np.zeros((U.shape[0], K - U.shape[1]))])
    return U, mult, inverse, np.maximum(vals, 0.0)


def run_consensus(label_matrix, K: int, cfg: FitConfig = FitConfig(), truth=None, mask=None) -> BenchmarkResult:
    """Equal-weight consensus: K-means on the spectral factor of the mean connectivity."""
    t0 = time.perf_counter()
    if np.ndim(label_matrix) != 2 or np.shape(label_matrix)[1] < 2:
        raise ConfigInvalid("consensus needs an N x M label matrix with M >= 2")
    U, mult, inverse, _ = connectivity_embedding(label_matrix, K)
    run = weighted_kmeans(U, K, cfg, weights=mult.astype(float), stream_key=("consensus",))
    labels = run.labels[inverse] + 1
    ari = masked_ari(labels, truth, mask) if truth is not None else None
    return BenchmarkResult("consensus", labels, ari, time.perf_counter() - t0)


def run_kfed(ds, K: int, k_local: int | None = None, cfg: FitConfig = FitConfig(), fits=None) -> BenchmarkResult:
    """K-means over the pooled local centers, then nearest-global-center assignment."""
    t0 = time.perf_counter()
    sites = _sites(ds)
    k_local = K if k_local is None else k_local
    if fits is None or k_local != K:
        fits = [kmeans_fit(s, k_local, cfg, stream_key=("fit", m)) for m, s in enumerate(sites)]
    pool = np.vstack([params.betas for params, _ in fits])
    if len(pool) < K:
        raise TooFewPoints(f"only {len(pool)} local centers for K={K}")
    run = weighted_kmeans(pool, K, cfg, stream_key=("kfed",))
    centers = ClusterModelParams("kmeans", run.centers)
    labels = np.concatenate([kmeans_assign_many(centers, s.rows) for s in sites])
    truth, mask = _truth(ds)
    ari = masked_ari(labels, truth, mask) if truth is not None else None
    return BenchmarkResult("kfed", labels, ari, time.perf_counter() - t0, extra={"k_local": k_local})


def run_pooled(ds, K: int, cfg: FitConfig = FitConfig()) -> BenchmarkResult:
    """K-means on all rows pooled together (not feasible under data-sharing limits)."""
    t0 = time.perf_counter()
    sites = _sites(ds)
    X = np.vstack([s.rows for s in sites])
    _, labels = kmeans_fit(VectorDataset(X), K, cfg, stream_key=("pooled",))
    truth, mask = _truth(ds)
    ari = masked_ari(labels, truth, mask) if truth is not None else None
    return BenchmarkResult("pooled", labels, ari, time.perf_counter() - t0, oracle=True)


def run_best_local(ds, K: int, truth=None, cfg: FitConfig = FitConfig(), kind: str = "kmeans",
                   fits=None, label_matrix=None) -> BenchmarkResult:
    """The single site model whose global labels score best against the truth."""
    t0 = time.perf_counter()
    if truth is None:
        truth, mask = _truth(ds)
    else:
        _, mask = _truth(ds)
    if truth is None:
        raise TruthRequired("best_local needs ground-truth labels")
    if mask is None:
        mask = np.ones(len(truth), dtype=bool)
    if label_matrix is None:
        fits = fits if fits is not None else local_fits(ds, K, cfg, kind)
        label_matrix = global_label_matrix(ds, fits)
    scores = [masked_ari(label_matrix[:, m], truth, mask) for m in range(label_matrix.shape[1])]
    best = int(np.argmax(scores))
    return BenchmarkResult("best_local", label_matrix[:, best], float(scores[best]), time.perf_counter() - t0,
                           oracle=True, extra={"site": best, "per_model_ari": scores})
