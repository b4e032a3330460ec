"""Synthetic multi-site data.

Gaussian sites share one set of cluster means; only the cluster proportions
(and, in the contaminated regime, a block of unlabelled outliers) differ by
site. Markov sites share K chains and differ only in mixture proportions.

Every random quantity comes from its own keyed stream, so the contaminated
regime reproduces the imbalanced regime's inliers exactly at the same seed.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _rng
from ._version import __version__
from .errors import ConfigInvalid
from .models import ClusterModelParams, SequenceDataset, VectorDataset

REGIMES = ("homogeneous", "imbalanced", "contaminated")


@dataclass
class SimulationConfig:
    M: int = 10
    K: int = 5
    p: int = 10
    sigma2: float = 0.05
    n_range: tuple = (50, 500)
    regime: str = "homogeneous"
    dirichlet_alpha: float = 1.0
    outlier_site_frac: float = 0.20
    outlier_data_frac: float = 0.20
    outlier_mean_range: tuple = (-5.0, 5.0)
    mu_values: tuple = (-1.0, 1.0)
    mu_mode: str = "discrete"  # "discrete" draws from mu_values, "interval" uniformly between them
    seed: int = 0

    def validate(self) -> None:
        if self.regime not in REGIMES:
            raise ConfigInvalid(f"regime must be one of {REGIMES}")
        if self.M < 1 or self.K < 1 or self.p < 1:
            raise ConfigInvalid("M, K, p must be positive")
        if self.sigma2 <= 0:
            raise ConfigInvalid("sigma2 must be positive")
        lo, hi = self.n_range
        if lo < self.K or hi < lo:
            raise ConfigInvalid("n_range must satisfy K <= min <= max")
        for name in ("outlier_site_frac", "outlier_data_frac"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigInvalid(f"{name} must lie in [0, 1]")
        if self.dirichlet_alpha <= 0:
            raise ConfigInvalid("dirichlet_alpha must be positive")
        if self.mu_mode not in ("discrete", "interval"):
            raise ConfigInvalid("mu_mode must be 'discrete' or 'interval'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_range"] = list(self.n_range)
        d["outlier_mean_range"] = list(self.outlier_mean_range)
        d["mu_values"] = list(self.mu_values)
        return d


@dataclass
class MultiSiteDataset:
    sites: list
    kind: str  # "kmeans" (vector data) or "markov_mixture" (sequences)
    K: int
    true_mus: np.ndarray | None = None
    true_params: ClusterModelParams | None = None
    contaminated_sites: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return len(self.sites)

    @property
    def N(self) -> int:
        return sum(len(s) for s in self.sites)

    @property
    def sizes(self) -> list:
        return [len(s) for s in self.sites]

    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)])

    def truth(self) -> np.ndarray | None:
        if any(s.true_labels is None for s in self.sites):
            return None
        return np.concatenate([s.true_labels for s in self.sites])

    def outlier_mask(self) -> np.ndarray:
        return np.concatenate([s.outlier_mask for s in self.sites])

    def true_betas(self) -> np.ndarray | None:
        if self.true_mus is not None:
            return self.true_mus
        if self.true_params is not None:
            return self.true_params.betas
        return None


def _ceil(x: float) -> int:
    return int(math.ceil(x - 1e-9))


def gen_gaussian_sites(cfg: SimulationConfig) -> MultiSiteDataset:
    cfg.validate()
    seed = cfg.seed
    rng = _rng.stream(seed, "mu")
    lo_mu, hi_mu = min(cfg.mu_values), max(cfg.mu_values)
    if cfg.mu_mode == "discrete":
        mus = rng.choice(np.asarray(cfg.mu_values, dtype=float), size=(cfg.K, cfg.p))
    else:
        mus = rng.uniform(lo_mu, hi_mu, size=(cfg.K, cfg.p))
    lo, hi = cfg.n_range
    sizes = _rng.stream(seed, "sizes").integers(lo, hi + 1, size=cfg.M)
    sd = math.sqrt(cfg.sigma2)

    sites = []
    for m in range(cfg.M):
        if cfg.regime == "homogeneous":
            props = np.full(cfg.K, 1.0 / cfg.K)
        else:
            props = _rng.stream(seed, "props", m).dirichlet(np.full(cfg.K, cfg.dirichlet_alpha))
        r = _rng.stream(seed, "site", m)
        y = r.choice(cfg.K, size=sizes[m], p=props)
        X = mus[y] + sd * r.standard_normal((sizes[m], cfg.p))
        sites.append(VectorDataset(X, site_id=m, true_labels=y + 1))

    contaminated = []
    if cfg.regime == "contaminated":
        n_bad = _ceil(cfg.outlier_site_frac * cfg.M)
        contaminated = sorted(
            int(i) for i in _rng.stream(seed, "outlier_sites").choice(cfg.M, size=n_bad, replace=False)
        )
        omin, omax = cfg.outlier_mean_range
        for m in contaminated:
            r = _rng.stream(seed, "outliers", m)
            site = sites[m]
            n_out = _ceil(cfg.outlier_data_frac * len(site))
            center = r.uniform(omin, omax, size=cfg.p)
            Xo = center + sd * r.standard_normal((n_out, cfg.p))
            sites[m] = VectorDataset(
                np.vstack([site.rows, Xo]),
                site_id=m,
                true_labels=np.concatenate([site.true_labels, np.zeros(n_out, dtype=int)]),
                outlier_mask=np.concatenate([np.zeros(len(site), bool), np.ones(n_out, bool)]),
            )
    return MultiSiteDataset(sites, "kmeans", cfg.K, true_mus=mus, contaminated_sites=contaminated,
                            config=cfg.to_dict())


def markov_chains(K: int, S: int, separation: float) -> ClusterModelParams:
    """K chains: component k starts near state k and is drawn toward state k.

    With ``separation=1`` the chains are deterministic (start at k, jump to k,
    stay there); smaller values blend each row with the uniform distribution.
    """
    if not 0 < separation <= 1:
        raise ConfigInvalid("separation must lie in (0, 1]")
    if K > S:
        raise ConfigInvalid("need K <= S for distinct chains")
    base = (1.0 - separation) / S
    u = np.full((K, S), base)
    T = np.full((K, S, S), base)
    for k in range(K):
        u[k, k] += separation
        T[k, :, k] += separation
    return ClusterModelParams.from_markov(u, T, np.full(K, 1.0 / K))


def sample_chain(rng, initial, transitions, length: int) -> np.ndarray:
    S = len(initial)
    seq = np.empty(length, dtype=int)
    seq[0] = rng.choice(S, p=initial)
    for t in range(1, length):
        seq[t] = rng.choice(S, p=transitions[seq[t - 1]])
    return seq + 1


def gen_markov_sites(M: int, K: int, S: int, lengths=(8, 16), separation: float = 0.5, seed: int = 0,
                     n_range=(100, 300), chains: ClusterModelParams | None = None,
                     dirichlet_alpha: float = 1.0) -> MultiSiteDataset:
    """Sequence sites sharing K chains with Dirichlet mixture proportions per site."""
    if M < 1 or K < 1:
        raise ConfigInvalid("M and K must be positive")
    lengths = (lengths, lengths) if np.isscalar(lengths) else tuple(lengths)
    if lengths[0] < 2 or lengths[1] < lengths[0]:
        raise ConfigInvalid("sequence lengths must be >= 2")
    chains = chains if chains is not None else markov_chains(K, S, separation)
    lo, hi = n_range
    sizes = _rng.stream(seed, "sizes").integers(lo, hi + 1, size=M)
    u, T = chains.initial, chains.transitions
    sites = []
    for m in range(M):
        props = _rng.stream(seed, "props", m).dirichlet(np.full(K, dirichlet_alpha)) if K > 1 else np.ones(1)
        r = _rng.stream(seed, "site", m)
        y = r.choice(K, size=sizes[m], p=props)
        lens = r.integers(lengths[0], lengths[1] + 1, size=sizes[m])
        seqs = [sample_chain(r, u[k], T[k], h) for k, h in zip(y, lens)]
        sites.append(SequenceDataset(seqs, site_id=m, true_labels=y + 1, S=S))
    config = {"M": M, "K": K, "S": S, "lengths": list(lengths), "separation": separation,
              "seed": seed, "n_range": list(n_range), "dirichlet_alpha": dirichlet_alpha}
    return MultiSiteDataset(sites, "markov_mixture", K, true_params=chains, config=config)


# ---------------------------------------------------------------------------
# On-disk format: one CSV per site plus manifest.json


def _fmt(x: float) -> str:
    return repr(float(x))


def _header_lines(config: dict, seed) -> list:
    return [
        f"# fontclust {__version__}",
        "# config: " + json.dumps(config, sort_keys=True),
        f"# seed: {seed}",
    ]


def write_dataset(ds: MultiSiteDataset, outdir) -> Path:
    """Write ``site_<id>.csv`` files and ``manifest.json`` into ``outdir``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    seed = ds.config.get("seed")
    entries = []
    for site in ds.sites:
        name = f"site_{site.site_id}.csv"
        lines = _header_lines(ds.config, seed)
        truth = site.true_labels if site.true_labels is not None else np.zeros(len(site), dtype=int)
        if ds.kind == "kmeans":
            p = site.rows.shape[1]
            lines.append(",".join([f"x{j + 1}" for j in range(p)] + ["true_label", "is_outlier"]))
            for row, y, o in zip(site.rows, truth, site.outlier_mask):
                lines.append(",".join([_fmt(v) for v in row] + [str(int(y)), str(int(o))]))
        else:
            lines.append("seq,true_label,is_outlier")
            for seq, y, o in zip(site.sequences, truth, site.outlier_mask):
                lines.append(" ".join(str(int(s)) for s in seq) + f",{int(y)},{int(o)}")
        data = ("\n".join(lines) + "\n").encode()
        (outdir / name).write_bytes(data)
        entries.append({
            "site_id": site.site_id,
            "file": name,
            "sha256": hashlib.sha256(data).hexdigest(),
            "n": len(site),
            "n_outliers": int(np.sum(site.outlier_mask)),
        })
    manifest = {
        "tool": "fontclust",
        "version": __version__,
        "kind": ds.kind,
        "K": ds.K,
        "seed": seed,
        "config": ds.config,
        "sites": entries,
        "contaminated_sites": ds.contaminated_sites,
        "truth": {
            "mus": None if ds.true_mus is None else ds.true_mus.tolist(),
            "params": None if ds.true_params is None else ds.true_params.to_dict(),
        },
        "notes": {"outlier_covariance": "sigma2 * I_p (assumed default)"},
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return outdir


def _data_lines(path: Path):
    with path.open(newline="") as fh:
        yield from csv.reader(line for line in fh if not line.startswith("#"))


def read_dataset(indir) -> MultiSiteDataset:
    indir = Path(indir)
    manifest_path = indir / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json in {indir}")
    manifest = json.loads(manifest_path.read_text())
    kind = manifest["kind"]
    S = (manifest["config"] or {}).get("S")
    sites = []
    for entry in manifest["sites"]:
        rows = list(_data_lines(indir / entry["file"]))
        body = rows[1:]
        truth = np.array([int(r[-2]) for r in body], dtype=int)
        mask = np.array([r[-1] == "1" for r in body], dtype=bool)
        if kind == "kmeans":
            X = np.array([[float(v) for v in r[:-2]] for r in body])
            sites.append(VectorDataset(X, entry["site_id"], truth, mask))
        else:
            seqs = [np.array(r[0].split(), dtype=int) for r in body]
            sites.append(SequenceDataset(seqs, entry["site_id"], truth, S=S, outlier_mask=mask))
    truth = manifest.get("truth") or {}
    mus = None if truth.get("mus") is None else np.asarray(truth["mus"])
    params = None if truth.get("params") is None else ClusterModelParams.from_dict(truth["params"])
    return MultiSiteDataset(sites, kind, manifest["K"], mus, params, manifest.get("contaminated_sites", []),
                            manifest.get("config", {}))
