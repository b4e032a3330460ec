import math

import numpy as np
import pytest

from fontclust.benchmarks import (
    ORACLE_METHODS,
    connectivity_embedding,
    global_label_matrix,
    local_fits,
    run_best_local,
    run_consensus,
    run_kfed,
    run_local,
    run_pooled,
)
from fontclust.errors import ConfigInvalid, TruthRequired
from fontclust.metrics import adjusted_rand_index
from fontclust.models import FitConfig, VectorDataset
from fontclust.simdata import MultiSiteDataset, SimulationConfig, gen_gaussian_sites

from oracles import connectivity, jacobi_eigh

CFG = FitConfig(restarts=3, seed=4)


def _covers(labels, N, K):
    labels = np.asarray(labels)
    return labels.shape == (N,) and labels.min() >= 1 and labels.max() <= K


def _single_site(ds, m=0):
    return MultiSiteDataset([ds.sites[m]], ds.kind, ds.K)


def test_local_single_site_equals_pooled(separable_ds):
    one = _single_site(separable_ds)
    loc = run_local(one, 3, CFG)
    pooled = run_pooled(one, 3, CFG)
    assert adjusted_rand_index(loc.labels[0], pooled.labels) == 1.0
    assert loc.ari == pooled.ari


def test_local_separable_perfect(separable_ds):
    res = run_local(separable_ds, 3, CFG)
    assert res.ari == 1.0 and res.extra["aggregation"].startswith("unweighted")


def test_local_site_missing_clusters():
    r = np.random.default_rng(3)
    mus = r.choice([-1.0, 1.0], size=(5, 10))
    y = np.repeat([0, 1], 30)
    X = mus[y] + 0.1 * r.standard_normal((60, 10))
    ds = MultiSiteDataset([VectorDataset(X, 0, y + 1)], "kmeans", 5)
    res = run_local(ds, 5, CFG)
    assert res.ari < 1.0
    assert len(np.unique(res.labels[0])) == 5


def test_consensus_identical_labelings():
    lab = np.array([1, 1, 2, 2, 3, 3, 3])
    res = run_consensus(np.column_stack([lab] * 4), 3, CFG, truth=lab)
    assert res.ari == 1.0


def test_consensus_hand_example():
    L = np.array([[1, 1], [1, 2], [2, 1], [2, 2]])
    S = connectivity(L)
    assert np.array_equal(S, [[1, .5, .5, 0], [.5, 1, 0, .5], [.5, 0, 1, .5], [0, .5, .5, 1]])
    vals, vecs = jacobi_eigh(S)
    assert np.allclose(vals, [2, 1, 1, 0], atol=1e-12)
    U, mult, inverse, ev = connectivity_embedding(L, 2)
    # the second eigenvalue is repeated; any rank-2 factor attains the same residual
    approx = (U @ U.T)[np.ix_(inverse, inverse)]
    assert math.isclose(np.sum((S - approx) ** 2), vals[2:] @ vals[2:], abs_tol=1e-10)
    res = run_consensus(L, 4, CFG)
    assert len(np.unique(res.labels)) == 4


def test_consensus_embedding_is_best_rank_k(rng):
    for _ in range(5):
        L = rng.integers(1, 4, size=(30, 5))
        K = 3
        S = connectivity(L)
        U, mult, inverse, _ = connectivity_embedding(L, K)
        approx = (U @ U.T)[np.ix_(inverse, inverse)]
        vals, _ = jacobi_eigh(S)
        best = float(np.sum(vals[K:] ** 2))
        assert np.sum((S - approx) ** 2) <= best + 1e-10


def test_consensus_needs_two_models():
    with pytest.raises(ConfigInvalid):
        run_consensus(np.ones((5, 1), dtype=int), 2, CFG)


def test_kfed_single_site_equals_pooled(separable_ds):
    one = _single_site(separable_ds)
    assert adjusted_rand_index(run_kfed(one, 3, cfg=CFG).labels, run_pooled(one, 3, CFG).labels) == 1.0


def test_kfed_identical_sites_recovers_means():
    base = gen_gaussian_sites(SimulationConfig(M=1, K=3, p=4, sigma2=0.01, n_range=(90, 90), seed=2))
    site = base.sites[0]
    sites = [VectorDataset(site.rows, m, site.true_labels) for m in range(3)]
    ds = MultiSiteDataset(sites, "kmeans", 3, true_mus=base.true_mus)
    res = run_kfed(ds, 3, cfg=CFG)
    assert res.ari == 1.0


def test_kfed_covers_all_subjects_with_missing_cluster():
    ds = gen_gaussian_sites(SimulationConfig(M=3, K=3, p=4, sigma2=0.05, n_range=(40, 60), seed=3))
    site = ds.sites[0]
    keep = site.true_labels != 1
    ds.sites[0] = VectorDataset(site.rows[keep], 0, site.true_labels[keep])
    res = run_kfed(ds, 3, cfg=CFG)
    assert _covers(res.labels, ds.N, 3)


def test_pooled_separable_and_imbalanced():
    ds = gen_gaussian_sites(SimulationConfig(M=5, sigma2=0.05, regime="imbalanced", seed=11))
    res = run_pooled(ds, 5, CFG)
    assert res.oracle and res.ari == 1.0
    assert len(np.unique(res.labels)) == 5
    assert len(np.unique(ds.truth())) == 5


def test_best_local_picks_accurate_site():
    r = np.random.default_rng(5)
    mus = r.choice([-1.0, 1.0], size=(3, 6))
    sites = []
    for m, sd in enumerate([1.5, 0.05, 1.5]):
        y = np.repeat(np.arange(3), 30)
        sites.append(VectorDataset(mus[y] + sd * r.standard_normal((90, 6)), m, y + 1))
    ds = MultiSiteDataset(sites, "kmeans", 3)
    res = run_best_local(ds, 3, cfg=CFG)
    assert res.extra["site"] == 1 and res.oracle


def test_best_local_ties_and_single(separable_ds):
    site = separable_ds.sites[0]
    same = MultiSiteDataset([VectorDataset(site.rows, m, site.true_labels) for m in range(3)], "kmeans", 3)
    assert run_best_local(same, 3, cfg=CFG).extra["site"] == 0
    assert run_best_local(_single_site(separable_ds), 3, cfg=CFG).extra["site"] == 0


def test_best_local_requires_truth(separable_ds):
    sites = [VectorDataset(s.rows, s.site_id) for s in separable_ds.sites]
    with pytest.raises(TruthRequired):
        run_best_local(MultiSiteDataset(sites, "kmeans", 3), 3, cfg=CFG)


def test_all_results_cover_subjects(separable_ds):
    fits = local_fits(separable_ds, 3, CFG)
    L = global_label_matrix(separable_ds, fits)
    N = separable_ds.N
    for res in (run_consensus(L, 3, CFG), run_kfed(separable_ds, 3, cfg=CFG, fits=fits),
                run_pooled(separable_ds, 3, CFG), run_best_local(separable_ds, 3, cfg=CFG, label_matrix=L)):
        assert _covers(res.labels, N, 3)
    assert ORACLE_METHODS == {"pooled", "best_local"}


def test_label_matrix_column_restricted_to_site_matches_local_fit(separable_ds):
    fits = local_fits(separable_ds, 3, CFG)
    L = global_label_matrix(separable_ds, fits)
    off = separable_ds.offsets()
    for m, (_, labels) in enumerate(fits):
        assert np.array_equal(L[off[m]:off[m + 1], m], labels)
