"""Command-line front end: ``fontclust simulate | run | report``.

Settings come from flags, then an optional TOML/JSON config file, then
built-in defaults. The seed additionally falls back to ``FONT_SEED``. Every
output file carries the tool version, the effective config and the seed.

Exit codes: 0 ok, 1 usage or input error, 2 some replicates failed,
3 oracle method requested without ``--allow-oracle``.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import logging
import math
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import _rng
from ._version import __version__
from .errors import ConfigInvalid, FontError, OracleNotAllowed
from .federation import SuiteConfig, run_benchmark_suite, run_font, run_on_dataset, summarize
from .models import FitConfig
from .simdata import (
    REGIMES,
    SimulationConfig,
    _header_lines,
    gen_gaussian_sites,
    gen_markov_sites,
    read_dataset,
    write_dataset,
)

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

log = logging.getLogger("fontclust")

EXIT_OK, EXIT_USAGE, EXIT_PARTIAL, EXIT_ORACLE = 0, 1, 2, 3
MAX_DENSE_EXPORT = 10_000

SIMULATE_DEFAULTS = {
    "kind": "gaussian", "regime": "homogeneous", "m": 10, "k": 5, "p": 10, "sigma2": 0.05,
    "n_range": [50, 500], "states": 5, "separation": 0.4, "lengths": [8, 16], "out": "data",
}
RUN_DEFAULTS = {
    "data": None, "regimes": ["homogeneous"], "m": [10], "sigma2": [0.05], "k": 5, "p": 10,
    "n_range": [50, 500], "methods": ["font"], "replicates": 1, "restarts": 10, "max_iter": 300,
    "tol": 1e-6, "threads": None, "allow_oracle": False, "out": "results", "export_distance": False,
    "no_timings": False,
}
REPORT_DEFAULTS = {"out": "summary.csv"}
RESULT_COLUMNS = ["regime", "M", "sigma2", "n_range", "replicate", "method", "ari", "weight_corr", "seconds",
                  "status", "data_seed", "fit_seed"]
SUMMARY_COLUMNS = ["regime", "M", "sigma2", "method", "n", "mean_ari", "sd_ari", "mean_weight_corr"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv_list(cast):
    def parse(text):
        try:
            return [cast(x) for x in text.split(",") if x.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc
    return parse


def _pair(text):
    vals = _csv_list(int)(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError("expected two comma-separated integers")
    return vals


def build_parser() -> argparse.ArgumentParser:
    # Defaults are None so that "not given" is distinguishable from "given".
    parser = _Parser(prog="fontclust", description="Federated one-shot ensemble clustering.")
    parser.add_argument("--version", action="version", version=f"fontclust {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="generate a multi-site dataset")
    sim.add_argument("--config", type=Path, help="TOML or JSON file with option values")
    sim.add_argument("--kind", choices=["gaussian", "markov"])
    sim.add_argument("--regime", choices=REGIMES)
    sim.add_argument("--m", type=int, help="number of sites")
    sim.add_argument("--k", type=int, help="number of clusters")
    sim.add_argument("--p", type=int, help="feature dimension (gaussian)")
    sim.add_argument("--sigma2", type=float, help="within-cluster variance (gaussian)")
    sim.add_argument("--n-range", type=_pair, dest="n_range", help="site size range, e.g. 50,500")
    sim.add_argument("--states", type=int, help="number of Markov states")
    sim.add_argument("--separation", type=float, help="chain separation in [0, 1] (markov)")
    sim.add_argument("--lengths", type=_pair, help="sequence length range (markov)")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--out", type=Path, help="output directory")

    run = sub.add_parser("run", help="run FONT and comparator methods")
    run.add_argument("--config", type=Path)
    run.add_argument("--data", type=Path, help="dataset directory written by 'simulate'")
    run.add_argument("--regimes", type=_csv_list(str), help="simulated regimes when --data is absent")
    run.add_argument("--m", type=_csv_list(int), help="site counts, comma-separated")
    run.add_argument("--sigma2", type=_csv_list(float), help="noise levels, comma-separated")
    run.add_argument("--k", type=int)
    run.add_argument("--p", type=int)
    run.add_argument("--n-range", type=_pair, dest="n_range")
    run.add_argument("--methods", type=_csv_list(str), help="e.g. font,consensus,kfed,local")
    run.add_argument("--replicates", type=int)
    run.add_argument("--restarts", type=int)
    run.add_argument("--max-iter", type=int, dest="max_iter")
    run.add_argument("--tol", type=float)
    run.add_argument("--seed", type=int)
    run.add_argument("--threads", type=int, help="worker cap (default: available cores)")
    run.add_argument("--allow-oracle", action="store_const", const=True, dest="allow_oracle")
    run.add_argument("--export-distance", action="store_const", const=True, dest="export_distance",
                     help="also write the dense consensus distance matrix (needs --data, N <= 10000)")
    run.add_argument("--no-timings", action="store_const", const=True, dest="no_timings",
                     help="leave the seconds column empty so results.csv is byte-reproducible")
    run.add_argument("--out", type=Path)

    rep = sub.add_parser("report", help="aggregate report files into a tidy CSV")
    rep.add_argument("inputs", nargs="+", type=Path, help="report.json files or directories")
    rep.add_argument("--out", type=Path)
    return parser


def load_config_file(path: Path | None) -> dict:
    if path is None:
        return {}
    raw = Path(path).read_bytes()
    if Path(path).suffix.lower() == ".toml":
        data = tomllib.loads(raw.decode())
    else:
        data = json.loads(raw)
    if not isinstance(data, dict):
        raise UsageError("config file must hold a table/object")
    return {k.replace("-", "_"): v for k, v in data.items()}


def resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge flags > config file > defaults; the seed also falls back to FONT_SEED."""
    file_cfg = load_config_file(getattr(args, "config", None))
    unknown = set(file_cfg) - set(defaults) - {"seed"}
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    eff = dict(defaults)
    eff.update(file_cfg)
    for key in list(defaults) + ["seed"]:
        val = getattr(args, key, None)
        if val is not None:
            eff[key] = val
    if eff.get("seed") is None:
        env = os.environ.get("FONT_SEED")
        try:
            eff["seed"] = int(env) if env not in (None, "") else 0
        except ValueError as exc:
            raise UsageError(f"FONT_SEED must be an integer, got {env!r}") from exc
    for key, val in eff.items():
        if isinstance(val, Path):
            eff[key] = str(val)
    return eff


@contextlib.contextmanager
def atomic_dir(out):
    """Yield a scratch directory whose files land in ``out`` only on success."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if not out.exists():
        os.replace(tmp, out)
        return
    for item in tmp.iterdir():
        os.replace(item, out / item.name)
    tmp.rmdir()


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def render_csv(header: list, columns: list, rows: list) -> bytes:
    buf = io.StringIO()
    for line in header:
        buf.write(line + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue().encode()


# ---------------------------------------------------------------------------
# Subcommands


def cmd_simulate(args) -> int:
    eff = resolve(args, SIMULATE_DEFAULTS)
    if eff["kind"] == "gaussian":
        cfg = SimulationConfig(M=eff["m"], K=eff["k"], p=eff["p"], sigma2=eff["sigma2"],
                               n_range=tuple(eff["n_range"]), regime=eff["regime"], seed=eff["seed"])
        cfg.validate()
        ds = gen_gaussian_sites(cfg)
    else:
        ds = gen_markov_sites(eff["m"], eff["k"], eff["states"], lengths=tuple(eff["lengths"]),
                              separation=eff["separation"], seed=eff["seed"], n_range=tuple(eff["n_range"]))
    with atomic_dir(eff["out"]) as tmp:
        write_dataset(ds, tmp)
    print(f"wrote {ds.M} sites ({ds.N} subjects) to {eff['out']}")
    if ds.contaminated_sites:
        print(f"contaminated sites: {ds.contaminated_sites}")
    return EXIT_OK


def _fit_config(eff) -> FitConfig:
    return FitConfig(restarts=eff["restarts"], max_iter=eff["max_iter"], tol=eff["tol"], seed=eff["seed"])


def cmd_run(args) -> int:
    eff = resolve(args, RUN_DEFAULTS)
    threads = eff["threads"] or os.cpu_count() or 1
    fit = _fit_config(eff)
    methods = tuple(eff["methods"])
    log.info("methods %s, %d replicate(s), %d thread(s)", ",".join(methods), eff["replicates"], threads)
    if eff["data"] is not None:
        ds = read_dataset(eff["data"])
        if ds.kind == "markov_mixture" and {"kfed", "pooled"} & set(methods):
            raise ConfigInvalid("kfed and pooled need vector data")
        report = run_on_dataset(ds, methods, eff["replicates"], eff["k"], fit, eff["allow_oracle"], threads)
    else:
        if eff["export_distance"]:
            raise UsageError("--export-distance needs --data")
        suite = SuiteConfig(regimes=tuple(eff["regimes"]), Ms=tuple(eff["m"]), sigma2s=tuple(eff["sigma2"]),
                            replicates=eff["replicates"], methods=methods, K=eff["k"], p=eff["p"],
                            n_range=tuple(eff["n_range"]), seed=eff["seed"], fit=fit,
                            allow_oracle=eff["allow_oracle"], threads=threads)
        report = run_benchmark_suite(suite)
    report.config["cli"] = eff
    rows = report.rows
    if eff["no_timings"]:
        rows = [dict(r, seconds=None) for r in rows]
    header = _header_lines(eff, eff["seed"])
    with atomic_dir(eff["out"]) as tmp:
        (tmp / "report.json").write_text(report.to_json(indent=2) + "\n")
        (tmp / "results.csv").write_bytes(render_csv(header, RESULT_COLUMNS, rows))
        if eff["export_distance"]:
            _export_distance(ds, eff, fit, tmp / "consensus_distance.csv", header)
    failed = sum(r["status"] != "ok" for r in report.rows)
    for s in report.summary:
        print(f"{s['regime']} M={s['M']} sigma2={s['sigma2']} {s['method']}: mean ARI {s['mean_ari']:.4f}"
              f" (n={s['n']})")
    if failed:
        print(f"{failed} of {len(report.rows)} result rows failed", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _export_distance(ds, eff, fit: FitConfig, path: Path, header: list) -> None:
    if ds.N > MAX_DENSE_EXPORT:
        raise ConfigInvalid(f"dense export limited to N <= {MAX_DENSE_EXPORT}, dataset has {ds.N}")
    seed = int(_rng.stream(fit.seed, "fit", 0).integers(2**62))  # replicate 0
    _, report = run_font(ds, ds.kind, eff["k"], fit.replace(seed=seed))
    D = report.artifacts["fit"].consensus.dense()
    buf = io.StringIO()
    for line in header:
        buf.write(line + "\n")
    np.savetxt(buf, D, delimiter=",", fmt="%.17g")
    path.write_bytes(buf.getvalue().encode())


def _collect_reports(inputs) -> list:
    files = []
    for p in inputs:
        p = Path(p)
        if p.is_dir():
            files.extend(sorted(p.rglob("*.json")))
        elif p.exists():
            files.append(p)
        else:
            raise FileNotFoundError(f"no such file or directory: {p}")
    reports = []
    for f in files:
        data = json.loads(f.read_text())
        if isinstance(data, dict) and "rows" in data:
            reports.append((f, data))
    return reports


def cmd_report(args) -> int:
    eff = resolve(args, REPORT_DEFAULTS)
    reports = _collect_reports(args.inputs)
    if not reports:
        raise UsageError("no report files found in the given inputs")
    rows = [r for _, data in reports for r in data["rows"]]
    summary = summarize(rows)
    if not summary:
        raise UsageError("reports contain no successful result rows")
    seeds = sorted({data.get("seeds", {}).get("master") for _, data in reports}, key=str)
    config = {"inputs": [str(f) for f, _ in reports], "out": eff["out"],
              "report_configs": [data.get("config") for _, data in reports]}
    header = _header_lines(config, seeds[0] if len(seeds) == 1 else seeds)
    _atomic_write(Path(eff["out"]), render_csv(header, SUMMARY_COLUMNS, summary))
    print(f"wrote {len(summary)} rows from {len(reports)} report(s) to {eff['out']}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "run": cmd_run, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except OracleNotAllowed as exc:
        print(f"fontclust: {exc}; pass --allow-oracle to enable them", file=sys.stderr)
        return EXIT_ORACLE
    except (UsageError, FontError, OSError, ValueError, KeyError) as exc:
        print(f"fontclust: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
