"""Federated one-shot ensemble clustering."""
from ._version import __version__
from .ensemble import (
    AgreementWeights,
    ConsensusDistance,
    DistanceRep,
    agreement_matrix,
    build_distance_rep,
    ensemble_distance,
    final_cluster,
    font_consensus,
    select_k_majority,
    spectral_weights,
)
from .federation import RunReport, SuiteConfig, make_pseudo_sites, run_benchmark_suite, run_font
from .metrics import adjusted_rand_index, empirical_markov_stats, transition_divergence, weight_alignment
from .models import (
    ClusterModelParams,
    FitConfig,
    SequenceDataset,
    VectorDataset,
    kmeans_assign,
    kmeans_fit,
    markov_assign,
    markov_mixture_fit,
    select_k_local,
)
from .simdata import MultiSiteDataset, SimulationConfig, gen_gaussian_sites, gen_markov_sites

__all__ = [
    "__version__",
    "AgreementWeights",
    "ClusterModelParams",
    "ConsensusDistance",
    "DistanceRep",
    "FitConfig",
    "MultiSiteDataset",
    "RunReport",
    "SequenceDataset",
    "SimulationConfig",
    "SuiteConfig",
    "VectorDataset",
    "adjusted_rand_index",
    "agreement_matrix",
    "build_distance_rep",
    "empirical_markov_stats",
    "ensemble_distance",
    "final_cluster",
    "font_consensus",
    "gen_gaussian_sites",
    "gen_markov_sites",
    "kmeans_assign",
    "kmeans_fit",
    "make_pseudo_sites",
    "markov_assign",
    "markov_mixture_fit",
    "run_benchmark_suite",
    "run_font",
    "select_k_local",
    "select_k_majority",
    "spectral_weights",
    "transition_divergence",
    "weight_alignment",
]
