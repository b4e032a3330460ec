"""One-shot federated protocol and experiment orchestration.

A run exchanges exactly two messages per (pseudo-)site:

1. ``Round1``: the site's fitted model parameters, broadcast to every site and
   to the analysis center.
2. ``Round2``: the site's subjects labelled by every broadcast model, keyed by
   opaque pseudo-ids, uploaded to the center.

The center never sees feature rows or sequences. Transport is simulated
in-process; with ``json_roundtrip=True`` every message is serialized to JSON
and parsed back before delivery.
"""
from __future__ import annotations

import json
import math
import statistics
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _rng
from ._version import __version__
from .benchmarks import (
    METHODS,
    ORACLE_METHODS,
    BenchmarkResult,
    global_label_matrix,
    local_fits,
    run_best_local,
    run_consensus,
    run_kfed,
    run_local,
    run_pooled,
)
from .ensemble import Metric, build_distance_rep, font_consensus, select_k_majority
from .errors import ConfigInvalid, DegenerateRep, OracleNotAllowed, ProtocolViolation
from .metrics import masked_ari, weight_alignment
from .models import (
    ClusterModelParams,
    FitConfig,
    SequenceDataset,
    VectorDataset,
    assign_many,
    fit_local,
    select_k_local,
)
from .simdata import MultiSiteDataset, SimulationConfig, gen_gaussian_sites

PROTOCOL_VERSION = 1
ROUND1_KEYS = {"v", "site_id", "kind", "K", "betas", "n_local"}
ROUND1_OPTIONAL = {"mixing", "S"}
ROUND2_KEYS = {"v", "site_id", "labels", "pseudo_ids"}


# ---------------------------------------------------------------------------
# Messages


@dataclass
class SiteMessageRound1:
    site_id: int
    params: ClusterModelParams
    fitted_k: int
    n_local: int

    def to_json(self) -> dict:
        d = {"v": PROTOCOL_VERSION, "site_id": int(self.site_id), "kind": self.params.kind,
             "K": int(self.fitted_k), "betas": self.params.betas.tolist(), "n_local": int(self.n_local)}
        if self.params.kind == "markov_mixture":
            d["mixing"] = self.params.mixing.tolist()
            d["S"] = int(self.params.S)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "SiteMessageRound1":
        check_round1(d)
        params = ClusterModelParams(d["kind"], np.asarray(d["betas"], dtype=float), d.get("mixing"), d.get("S"))
        return cls(d["site_id"], params, d["K"], d["n_local"])


@dataclass
class SiteMessageRound2:
    site_id: int
    labels_by_model: dict
    pseudo_ids: np.ndarray

    def to_json(self) -> dict:
        return {"v": PROTOCOL_VERSION, "site_id": int(self.site_id),
                "labels": {str(k): np.asarray(v).astype(int).tolist() for k, v in self.labels_by_model.items()},
                "pseudo_ids": np.asarray(self.pseudo_ids).astype(int).tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "SiteMessageRound2":
        check_round2(d)
        labels = {int(k): np.asarray(v, dtype=int) for k, v in d["labels"].items()}
        return cls(d["site_id"], labels, np.asarray(d["pseudo_ids"], dtype=int))


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def check_round1(d: dict) -> None:
    """Schema check: parameters only, K vectors of one length, nothing per-subject."""
    if not isinstance(d, dict):
        raise ProtocolViolation("message must be a JSON object")
    keys = set(d)
    if not ROUND1_KEYS <= keys or keys - ROUND1_KEYS - ROUND1_OPTIONAL:
        raise ProtocolViolation(f"round-1 fields {sorted(keys)} do not match the schema")
    if d["v"] != PROTOCOL_VERSION:
        raise ProtocolViolation(f"unsupported protocol version {d['v']!r}")
    if not (_is_int(d["site_id"]) and _is_int(d["K"]) and _is_int(d["n_local"])):
        raise ProtocolViolation("site_id, K, n_local must be integers")
    betas = d["betas"]
    if not isinstance(betas, list) or len(betas) != d["K"] or d["K"] < 1:
        raise ProtocolViolation("betas must hold exactly K vectors")
    width = len(betas[0]) if isinstance(betas[0], list) else -1
    if any(not isinstance(b, list) or len(b) != width or not all(_is_num(v) for v in b) for b in betas):
        raise ProtocolViolation("betas must be K equal-length numeric vectors")
    if d["K"] > d["n_local"]:
        raise ProtocolViolation("more cluster parameters than local subjects")
    if d["kind"] == "markov_mixture":
        S = d.get("S")
        if not _is_int(S) or width != S + S * S:
            raise ProtocolViolation("markov betas must have length S + S^2")
        mixing = d.get("mixing")
        if not isinstance(mixing, list) or len(mixing) != d["K"] or not all(_is_num(v) for v in mixing):
            raise ProtocolViolation("mixing must be K numbers")
    elif d["kind"] == "kmeans":
        if keys & ROUND1_OPTIONAL:
            raise ProtocolViolation("kmeans messages carry no mixing/S")
    else:
        raise ProtocolViolation(f"unknown model kind {d['kind']!r}")


def check_round2(d: dict) -> None:
    """Schema check: integer labels keyed by model id and opaque integer pseudo-ids only."""
    if not isinstance(d, dict):
        raise ProtocolViolation("message must be a JSON object")
    keys = set(d)
    if keys != ROUND2_KEYS:
        raise ProtocolViolation(f"round-2 fields {sorted(keys)} do not match the schema")
    if d["v"] != PROTOCOL_VERSION or not _is_int(d["site_id"]):
        raise ProtocolViolation("bad version or site_id")
    ids = d["pseudo_ids"]
    if not isinstance(ids, list) or not all(_is_int(i) for i in ids) or len(set(ids)) != len(ids):
        raise ProtocolViolation("pseudo_ids must be distinct integers")
    if not isinstance(d["labels"], dict):
        raise ProtocolViolation("labels must map model id to a label vector")
    for mid, labs in d["labels"].items():
        if not str(mid).lstrip("-").isdigit():
            raise ProtocolViolation("model ids must be integers")
        if not isinstance(labs, list) or len(labs) != len(ids):
            raise ProtocolViolation("one label per pseudo-id required")
        if not all(_is_int(v) and v >= 1 for v in labs):
            raise ProtocolViolation("labels must be positive integers")


class MessageBus:
    """In-process transport that validates and records every inter-site message."""

    def __init__(self, json_roundtrip: bool = False):
        self.json_roundtrip = json_roundtrip
        self.log: list = []

    def send(self, msg):
        wire = msg.to_json()
        if isinstance(msg, SiteMessageRound1):
            check_round1(wire)
        else:
            check_round2(wire)
        text = json.dumps(wire)
        self.log.append((type(msg).__name__, text))
        if not self.json_roundtrip:
            return msg
        return type(msg).from_json(json.loads(text))

    @property
    def count(self) -> int:
        return len(self.log)

    def payload_bytes(self) -> int:
        return sum(len(text) for _, text in self.log)

    def payloads(self) -> list:
        """Every message exactly as it crossed the boundary (parsed JSON)."""
        return [json.loads(text) for _, text in self.log]


# ---------------------------------------------------------------------------
# Sites


def _subset(data, idx):
    idx = np.asarray(idx, dtype=int)
    truth = None if data.true_labels is None else data.true_labels[idx]
    if isinstance(data, VectorDataset):
        return VectorDataset(data.rows[idx], data.site_id, truth, data.outlier_mask[idx])
    return SequenceDataset([data.sequences[i] for i in idx], data.site_id, truth, S=data.S,
                           outlier_mask=data.outlier_mask[idx])


def make_pseudo_sites(site, B: int, frac: float = 0.8, seed: int = 0, replace: bool = True) -> list:
    """``B`` resampled replicas of ``site``, each of size ceil(frac * n).

    Without replacement the drawn indices are kept in original order, so
    ``frac=1, replace=False`` returns an exact copy.
    """
    if B < 1 or not 0 < frac <= 1:
        raise ConfigInvalid("need B >= 1 and frac in (0, 1]")
    n = len(site)
    size = int(math.ceil(frac * n - 1e-9))
    out = []
    for b in range(B):
        rng = _rng.stream(seed, "pseudo", site.site_id, b)
        if replace:
            idx = rng.choice(n, size=size, replace=True)
        else:
            idx = np.sort(rng.choice(n, size=size, replace=False))
        ds = _subset(site, idx)
        ds.site_id = site.site_id * B + b
        ds.parent_site = site.site_id
        ds.replica = b
        ds.source_index = idx
        out.append(ds)
    return out


class Site:
    """A data holder. Fits on ``fit_data``; labels ``targets`` (original subjects)."""

    def __init__(self, model_id, fit_data, targets, pseudo_ids, kind, K, cfg, S=None):
        self.model_id = int(model_id)
        self.fit_data = fit_data
        self.targets = targets
        self.pseudo_ids = np.asarray(pseudo_ids, dtype=int)
        self.kind = kind
        self.K = K
        self.cfg = cfg
        self.S = S
        self.local_labels = None

    def round1(self) -> SiteMessageRound1:
        params, labels = fit_local(self.fit_data, self.kind, self.K, self.cfg, S=self.S,
                                   stream_key=("fit", self.model_id))
        self.local_labels = labels
        return SiteMessageRound1(self.model_id, params, params.K, len(self.fit_data))

    def round2(self, broadcasts) -> SiteMessageRound2:
        labels = {}
        for msg in broadcasts:
            labels[msg.site_id] = assign_many(msg.params, self.targets) if len(self.targets) else np.zeros(0, int)
        return SiteMessageRound2(self.model_id, labels, self.pseudo_ids)


# ---------------------------------------------------------------------------
# FONT run


@dataclass
class RunReport:
    config: dict
    model_ids: list = field(default_factory=list)
    weights: list = field(default_factory=list)
    agreement: list | None = None
    K: int | None = None
    local_ks: list = field(default_factory=list)
    aris: dict = field(default_factory=dict)
    weight_corr: float | None = None
    timings: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    messages: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    summary: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "artifacts"}
        d["tool"] = "fontclust"
        d["version"] = __version__
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, default=_json_default, **kw)


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


def _as_dataset(sites, kind):
    if isinstance(sites, MultiSiteDataset):
        return sites
    sites = list(sites)
    if kind is None:
        kind = "kmeans" if isinstance(sites[0], VectorDataset) else "markov_mixture"
    return MultiSiteDataset(sites, kind, K=0)


def run_font(sites, model_kind: str | None = None, K="auto", cfg: FitConfig = FitConfig(), *,
             pseudo_replicas: int | None = None, pseudo_frac: float = 0.8, k_range=range(2, 9),
             criterion: str = "bic", metric: Metric | None = None, json_roundtrip: bool = False,
             S: int | None = None):
    """Run the full one-shot protocol; returns ``(labels, RunReport)``.

    With ``pseudo_replicas=B`` every site is replaced by B resampled replicas
    for fitting, while the original subjects are split among the replicas for
    labelling, so each original subject is labelled once by every model.
    """
    t_start = time.perf_counter()
    ds = _as_dataset(sites, model_kind)
    kind = model_kind or ds.kind
    if S is None and kind == "markov_mixture":
        S = ds.sites[0].S
    offsets = ds.offsets()

    site_objs = []
    auto = isinstance(K, str)
    if auto and K != "auto":
        raise ConfigInvalid("K must be an integer or 'auto'")
    for s_idx, site in enumerate(ds.sites):
        ids = np.arange(offsets[s_idx], offsets[s_idx + 1])
        if pseudo_replicas:
            replicas = make_pseudo_sites(site, pseudo_replicas, pseudo_frac, cfg.seed)
            chunks = np.array_split(np.arange(len(site)), pseudo_replicas)
            for b, (rep, chunk) in enumerate(zip(replicas, chunks)):
                site_objs.append(((s_idx, b), rep, _subset(site, chunk), ids[chunk]))
        else:
            site_objs.append(((s_idx, 0), site, site, ids))
    M_eff = len(site_objs)
    if M_eff < 2:
        raise ConfigInvalid("FONT needs at least two local models; use pseudo-sites for a single site")

    t0 = time.perf_counter()
    local_ks = []
    if auto:
        for m, (_, fit_data, _, _) in enumerate(site_objs):
            local_ks.append(select_k_local(fit_data, kind, k_range, criterion, cfg, S=S, stream_key=(m,)))
        K_final = select_k_majority(local_ks)
    else:
        K_final = int(K)
        local_ks = [K_final] * M_eff
    t_select = time.perf_counter() - t0

    site_nodes = [Site(m, fit_data, targets, ids, kind, local_ks[m], cfg, S)
                  for m, (_, fit_data, targets, ids) in enumerate(site_objs)]
    bus = MessageBus(json_roundtrip)

    t0 = time.perf_counter()
    round1 = [bus.send(node.round1()) for node in site_nodes]
    t_fit = time.perf_counter() - t0
    t0 = time.perf_counter()
    round2 = [bus.send(node.round2(round1)) for node in site_nodes]
    t_label = time.perf_counter() - t0
    if bus.count != 2 * M_eff:
        raise ProtocolViolation(f"expected {2 * M_eff} messages, saw {bus.count}")

    # Analysis center: only Round1/Round2 content is used from here on.
    t0 = time.perf_counter()
    model_ids, L, params = assemble_label_matrix(round1, round2, ds.N)
    flags = []
    reps = []
    for m, mid in enumerate(model_ids):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", DegenerateRep)
            reps.append(build_distance_rep(params[m], L[:, m], metric, model_id=mid))
        if caught:
            flags.append(f"degenerate_rep:{mid}")
    fit = font_consensus(reps, K_final, cfg)
    t_center = time.perf_counter() - t0

    report = RunReport(
        config={"kind": kind, "K": K, "fit": cfg.__dict__, "pseudo_replicas": pseudo_replicas,
                "pseudo_frac": pseudo_frac, "criterion": criterion, "json_roundtrip": json_roundtrip,
                "dataset": ds.config},
        model_ids=model_ids,
        weights=fit.weights.tolist(),
        agreement=None if fit.agreement is None else fit.agreement.G.tolist(),
        K=K_final,
        local_ks=local_ks,
        seeds={"master": cfg.seed},
        messages={"round1": len(round1), "round2": len(round2), "total": bus.count,
                  "payload_bytes": bus.payload_bytes()},
        flags=flags,
        timings={"select_k": t_select, "local_fit": t_fit, "labelling": t_label, "center": t_center,
                 "total": time.perf_counter() - t_start},
        artifacts={"label_matrix": L, "reps": reps, "fit": fit, "params": params,
                   "site_labels": [node.local_labels for node in site_nodes],
                   "round1": round1, "round2": round2, "bus": bus},
    )
    truth = ds.truth()
    if truth is not None:
        mask = ~ds.outlier_mask()
        report.aris["font"] = masked_ari(fit.labels, truth, mask)
        per_model = [masked_ari(L[:, m], truth, mask) for m in range(M_eff)]
        report.artifacts["per_model_ari"] = per_model
        if M_eff >= 3:
            al = weight_alignment(fit.weights, per_model)
            report.weight_corr = al.value if al.defined else None
    return fit.labels, report


def assemble_label_matrix(round1, round2, N: int):
    """Center-side reduction of both message rounds into an N x M label matrix."""
    round1 = sorted(round1, key=lambda m: m.site_id)
    model_ids = [m.site_id for m in round1]
    if len(set(model_ids)) != len(model_ids):
        raise ProtocolViolation("duplicate model ids in round 1")
    Ks = {m.site_id: m.params.K for m in round1}
    L = np.zeros((N, len(model_ids)), dtype=int)
    seen = np.zeros(N, dtype=bool)
    for msg in sorted(round2, key=lambda m: m.site_id):
        ids = np.asarray(msg.pseudo_ids, dtype=int)
        if ids.size and (ids.min() < 0 or ids.max() >= N or seen[ids].any()):
            raise ProtocolViolation("pseudo-ids out of range or repeated across sites")
        seen[ids] = True
        if set(msg.labels_by_model) != set(model_ids):
            raise ProtocolViolation(f"site {msg.site_id} did not label with every model")
        for j, mid in enumerate(model_ids):
            labs = np.asarray(msg.labels_by_model[mid], dtype=int)
            if labs.size and labs.max() > Ks[mid]:
                raise ProtocolViolation(f"labels from model {mid} exceed its K")
            L[ids, j] = labs
    if not seen.all():
        raise ProtocolViolation("some subjects were never labelled")
    return model_ids, L, [m.params for m in round1]


# ---------------------------------------------------------------------------
# Benchmark suite


@dataclass
class SuiteConfig:
    regimes: tuple = ("homogeneous",)
    Ms: tuple = (10,)
    sigma2s: tuple = (0.05,)
    replicates: int = 1
    methods: tuple = ("font",)
    K: int = 5
    p: int = 10
    n_range: tuple = (50, 500)
    seed: int = 0
    fit: FitConfig = field(default_factory=FitConfig)
    allow_oracle: bool = False
    threads: int = 1

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["fit"] = self.fit.__dict__
        for k in ("regimes", "Ms", "sigma2s", "methods", "n_range"):
            d[k] = list(d[k])
        return d


def check_methods(methods, allow_oracle: bool) -> tuple:
    methods = tuple(methods)
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ConfigInvalid(f"unknown methods {sorted(unknown)}")
    oracle = set(methods) & ORACLE_METHODS
    if oracle and not allow_oracle:
        raise OracleNotAllowed(f"oracle methods {sorted(oracle)} need allow_oracle")
    return methods


def data_seed(master: int, M: int, sigma2: float, replicate: int) -> int:
    """Per-cell data seed, shared across regimes so regimes compare at matched seeds."""
    return int(_rng.stream(master, "data", M, repr(float(sigma2)), replicate).integers(2**62))


def run_methods(ds: MultiSiteDataset, methods, K: int, cfg: FitConfig):
    """Run the requested methods on one dataset; returns ``{method: BenchmarkResult}``."""
    truth = ds.truth()
    mask = ~ds.outlier_mask()
    out = {}
    fits = None
    L = None
    if "font" in methods:
        t0 = time.perf_counter()
        labels, report = run_font(ds, ds.kind, K, cfg)
        L = report.artifacts["label_matrix"]
        fits = list(zip(report.artifacts["params"], report.artifacts["site_labels"]))
        out["font"] = BenchmarkResult("font", labels, report.aris.get("font"), time.perf_counter() - t0,
                                      extra={"weights": report.weights, "weight_corr": report.weight_corr})
    if any(m in methods for m in ("consensus", "best_local", "local")) and fits is None:
        fits = local_fits(ds, K, cfg, ds.kind)
    if L is None and any(m in methods for m in ("consensus", "best_local")):
        L = global_label_matrix(ds, fits)
    for method in methods:
        if method == "font":
            continue
        if method == "local":
            out[method] = run_local(ds, K, cfg, ds.kind, fits=fits)
        elif method == "consensus":
            out[method] = run_consensus(L, K, cfg, truth, mask)
        elif method == "kfed":
            out[method] = run_kfed(ds, K, cfg=cfg, fits=fits)
        elif method == "pooled":
            out[method] = run_pooled(ds, K, cfg)
        elif method == "best_local":
            out[method] = run_best_local(ds, K, truth, cfg, ds.kind, label_matrix=L)
    return out


def _rows_for(results, base: dict) -> list:
    rows = []
    for method, res in results.items():
        row = dict(base)
        row.update(method=method, ari=res.ari, seconds=res.wall_time,
                   weight_corr=res.extra.get("weight_corr") if method == "font" else None,
                   weights=res.extra.get("weights") if method == "font" else None,
                   status="ok", error=None)
        rows.append(row)
    return rows


def summarize(rows) -> list:
    """Mean and sd of ARI (and mean weight correlation) per (regime, M, sigma2, method)."""
    cells = {}
    for r in rows:
        if r.get("status", "ok") != "ok" or r.get("ari") is None:
            continue
        s2 = None if r.get("sigma2") in (None, "") else float(r["sigma2"])
        key = (r["regime"], int(r["M"]), s2, r["method"])
        cells.setdefault(key, []).append(r)
    out = []
    for key in sorted(cells, key=lambda k: (k[0], k[1], -math.inf if k[2] is None else k[2], k[3])):
        rs = cells[key]
        aris = [float(r["ari"]) for r in rs]
        corrs = [float(r["weight_corr"]) for r in rs
                 if r.get("weight_corr") not in (None, "") and not math.isnan(float(r["weight_corr"]))]
        out.append({"regime": key[0], "M": key[1], "sigma2": key[2], "method": key[3],
                    "n": len(aris), "mean_ari": statistics.fmean(aris),
                    "sd_ari": statistics.stdev(aris) if len(aris) > 1 else 0.0,
                    "mean_weight_corr": statistics.fmean(corrs) if corrs else None})
    return out


def run_benchmark_suite(cfg: SuiteConfig, methods=None, replicates: int | None = None) -> RunReport:
    """Simulate every (regime, M, sigma2, replicate) cell and run the methods on it.

    A failing replicate is recorded with ``status="failed"`` and does not stop
    the suite.
    """
    methods = check_methods(methods if methods is not None else cfg.methods, cfg.allow_oracle)
    replicates = replicates if replicates is not None else cfg.replicates
    tasks = [(regime, M, s2, rep) for regime in cfg.regimes for M in cfg.Ms for s2 in cfg.sigma2s
             for rep in range(replicates)]

    def work(task):
        regime, M, s2, rep = task
        dseed = data_seed(cfg.seed, M, s2, rep)
        fseed = int(_rng.stream(cfg.seed, "fit", rep).integers(2**62))
        base = {"regime": regime, "M": M, "sigma2": s2, "n_range": f"{cfg.n_range[0]}-{cfg.n_range[1]}",
                "replicate": rep, "data_seed": dseed, "fit_seed": fseed}
        try:
            ds = gen_gaussian_sites(SimulationConfig(M=M, K=cfg.K, p=cfg.p, sigma2=s2, n_range=tuple(cfg.n_range),
                                                     regime=regime, seed=dseed))
            return _rows_for(run_methods(ds, methods, cfg.K, cfg.fit.replace(seed=fseed)), base)
        except Exception as exc:  # recorded, not fatal
            return [dict(base, method=m, ari=None, seconds=None, weight_corr=None, weights=None,
                         status="failed", error=f"{type(exc).__name__}: {exc}") for m in methods]

    t0 = time.perf_counter()
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            chunks = list(pool.map(work, tasks))
    else:
        chunks = [work(t) for t in tasks]
    rows = [r for chunk in chunks for r in chunk]
    return RunReport(config=cfg.to_dict(), rows=rows, summary=summarize(rows), seeds={"master": cfg.seed},
                     timings={"total": time.perf_counter() - t0},
                     flags=[f"failed_rows:{sum(r['status'] != 'ok' for r in rows)}"])


def run_on_dataset(ds: MultiSiteDataset, methods, replicates: int, K: int, fit: FitConfig,
                   allow_oracle: bool = False, threads: int = 1) -> RunReport:
    """Run methods on a fixed dataset; replicates differ only in the fitting seed."""
    methods = check_methods(methods, allow_oracle)
    regime = ds.config.get("regime", "unknown")
    n_range = ds.config.get("n_range")
    base0 = {"regime": regime, "M": ds.M, "sigma2": ds.config.get("sigma2"),
             "n_range": f"{n_range[0]}-{n_range[1]}" if n_range else ""}

    def work(rep):
        fseed = int(_rng.stream(fit.seed, "fit", rep).integers(2**62))
        base = dict(base0, replicate=rep, data_seed=ds.config.get("seed"), fit_seed=fseed)
        try:
            return _rows_for(run_methods(ds, methods, K, fit.replace(seed=fseed)), base)
        except Exception as exc:
            return [dict(base, method=m, ari=None, seconds=None, weight_corr=None, weights=None,
                         status="failed", error=f"{type(exc).__name__}: {exc}") for m in methods]

    t0 = time.perf_counter()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(work, range(replicates)))
    else:
        chunks = [work(r) for r in range(replicates)]
    rows = [r for chunk in chunks for r in chunk]
    config = {"methods": list(methods), "replicates": replicates, "K": K, "fit": fit.__dict__,
              "dataset": ds.config, "allow_oracle": allow_oracle}
    first_font = next((r for r in rows if r["method"] == "font" and r["status"] == "ok"), None)
    return RunReport(config=config, rows=rows, summary=summarize(rows), seeds={"master": fit.seed},
                     weights=first_font["weights"] if first_font else [],
                     weight_corr=first_font["weight_corr"] if first_font else None,
                     timings={"total": time.perf_counter() - t0},
                     flags=[f"failed_rows:{sum(r['status'] != 'ok' for r in rows)}"])
