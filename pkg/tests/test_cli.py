import csv
import hashlib
import json
import math
import statistics

import pytest

from fontclust.cli import SUMMARY_COLUMNS, main

SMALL = ["--n-range", "50,60", "--restarts", "2"]


def _hashes(d):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(d.iterdir())}


def _table(path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _header(path):
    return [ln for ln in path.read_text().splitlines() if ln.startswith("#")]


@pytest.fixture
def sim_dir(tmp_path):
    out = tmp_path / "data"
    assert main(["simulate", "--regime", "imbalanced", "--m", "4", "--sigma2", "0.05", "--n-range", "50,80",
                 "--seed", "7", "--out", str(out)]) == 0
    return out


def test_simulate_files_and_determinism(tmp_path):
    args = ["simulate", "--regime", "homogeneous", "--m", "5", "--sigma2", "0.05", "--seed", "7"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["manifest.json"] + [f"site_{m}.csv" for m in range(5)]
    assert _hashes(tmp_path / "a") == _hashes(tmp_path / "b")


def test_simulate_contaminated_manifest(tmp_path):
    out = tmp_path / "c"
    assert main(["simulate", "--regime", "contaminated", "--m", "10", "--seed", "1", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["contaminated_sites"]) == 2


def test_simulate_markov(tmp_path):
    out = tmp_path / "mk"
    assert main(["simulate", "--kind", "markov", "--m", "2", "--k", "3", "--states", "4", "--n-range", "30,40",
                 "--out", str(out)]) == 0
    assert json.loads((out / "manifest.json").read_text())["kind"] == "markov_mixture"


def test_run_font_weights_unit_norm(sim_dir, tmp_path):
    out = tmp_path / "res"
    assert main(["run", "--data", str(sim_dir), "--methods", "font", "--k", "5", "--out", str(out)] + SMALL[2:]) == 0
    report = json.loads((out / "report.json").read_text())
    assert math.isclose(sum(w * w for w in report["weights"]), 1.0, abs_tol=1e-9)
    rows = _table(out / "results.csv")
    assert len(rows) == 1 and rows[0]["method"] == "font" and rows[0]["status"] == "ok"


def test_run_oracle_guard(sim_dir, tmp_path):
    out = tmp_path / "res"
    assert main(["run", "--data", str(sim_dir), "--methods", "pooled", "--out", str(out)]) == 3
    assert not out.exists()
    assert main(["run", "--data", str(sim_dir), "--methods", "pooled", "--allow-oracle", "--out", str(out)]
                + SMALL[2:]) == 0


def test_run_row_count_contract(tmp_path):
    out = tmp_path / "res"
    assert main(["run", "--regimes", "homogeneous", "--m", "3", "--methods", "font,consensus,kfed,local",
                 "--replicates", "50", "--out", str(out)] + SMALL) == 0
    rows = _table(out / "results.csv")
    assert len(rows) == 4 * 50
    assert {r["method"] for r in rows} == {"font", "consensus", "kfed", "local"}


def test_run_rejects_markov_with_vector_methods(tmp_path):
    data = tmp_path / "mk"
    main(["simulate", "--kind", "markov", "--m", "2", "--k", "2", "--states", "3", "--n-range", "30,40",
          "--out", str(data)])
    assert main(["run", "--data", str(data), "--methods", "kfed", "--k", "2", "--out", str(tmp_path / "r")]) == 1


def test_run_partial_failure_exit_code(tmp_path):
    out = tmp_path / "res"
    assert main(["run", "--m", "3", "--k", "6", "--n-range", "5,5", "--methods", "font", "--out", str(out)]) == 2
    assert all(r["status"] == "failed" for r in _table(out / "results.csv"))


def test_no_timings_byte_identical(tmp_path):
    args = ["run", "--m", "3", "--methods", "font,local", "--replicates", "2", "--seed", "3", "--no-timings"] + SMALL
    out = tmp_path / "a"
    assert main(args + ["--out", str(out)]) == 0
    first = (out / "results.csv").read_bytes()
    assert main(args + ["--out", str(out)]) == 0
    assert (out / "results.csv").read_bytes() == first
    # the thread count is echoed in the header, but the result rows must not depend on it
    assert main(args + ["--out", str(tmp_path / "b"), "--threads", "2"]) == 0
    assert _table(out / "results.csv") == _table(tmp_path / "b" / "results.csv")


def test_every_output_has_header(sim_dir, tmp_path):
    out = tmp_path / "res"
    assert main(["run", "--data", str(sim_dir), "--methods", "font", "--k", "5", "--seed", "11",
                 "--export-distance", "--out", str(out)] + SMALL[2:]) == 0
    summary = tmp_path / "summary.csv"
    assert main(["report", str(out), "--out", str(summary)]) == 0
    for path in (sim_dir / "site_0.csv", out / "results.csv", out / "consensus_distance.csv", summary):
        head = _header(path)
        assert head[0].startswith("# fontclust ") and head[1].startswith("# config: ")
        assert head[2].startswith("# seed: ")
    assert _header(out / "results.csv")[2] == "# seed: 11"
    report = json.loads((out / "report.json").read_text())
    assert report["version"] and report["config"]["cli"]["seed"] == 11


def test_seed_env_fallback_and_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv("FONT_SEED", "21")
    assert main(["simulate", "--m", "2", "--n-range", "50,50", "--out", str(tmp_path / "env")]) == 0
    assert json.loads((tmp_path / "env" / "manifest.json").read_text())["seed"] == 21
    cfg = tmp_path / "sim.toml"
    cfg.write_text('m = 3\nseed = 5\nregime = "imbalanced"\nn_range = [50, 60]\n')
    assert main(["simulate", "--config", str(cfg), "--m", "2", "--out", str(tmp_path / "cfg")]) == 0
    manifest = json.loads((tmp_path / "cfg" / "manifest.json").read_text())
    assert manifest["seed"] == 5 and len(manifest["sites"]) == 2 and manifest["config"]["regime"] == "imbalanced"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nonsense": 1}))
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "x")]) == 1


def test_usage_errors_exit_one(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--bogus"])
    assert exc.value.code == 1
    assert main(["run", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "r")]) == 1


# --- report --------------------------------------------------------------------------


def test_report_one_row_per_cell_and_method(tmp_path):
    out = tmp_path / "res"
    assert main(["run", "--regimes", "homogeneous,imbalanced", "--m", "3", "--methods", "font,local",
                 "--replicates", "2", "--out", str(out)] + SMALL) == 0
    summary = tmp_path / "summary.csv"
    assert main(["report", str(out / "report.json"), "--out", str(summary)]) == 0
    rows = _table(summary)
    assert list(rows[0]) == SUMMARY_COLUMNS
    assert sorted((r["regime"], r["method"]) for r in rows) == sorted(
        (g, m) for g in ("homogeneous", "imbalanced") for m in ("font", "local"))
    assert all(r["n"] == "2" for r in rows)


def test_report_empty_dir_errors(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    summary = tmp_path / "summary.csv"
    assert main(["report", str(empty), "--out", str(summary)]) == 1
    assert not summary.exists()


def test_report_pools_replicate_files(tmp_path):
    common = ["run", "--m", "3", "--methods", "font", "--no-timings"] + SMALL
    assert main(common + ["--replicates", "2", "--seed", "1", "--out", str(tmp_path / "a")]) == 0
    assert main(common + ["--replicates", "3", "--seed", "2", "--out", str(tmp_path / "b")]) == 0
    parts = [_table(tmp_path / d / "results.csv") for d in ("a", "b")]
    summary = tmp_path / "summary.csv"
    assert main(["report", str(tmp_path / "a"), str(tmp_path / "b"), "--out", str(summary)]) == 0
    (row,) = _table(summary)
    means = [statistics.fmean(float(r["ari"]) for r in p) for p in parts]
    weighted = (len(parts[0]) * means[0] + len(parts[1]) * means[1]) / 5
    assert row["n"] == "5" and math.isclose(float(row["mean_ari"]), weighted, rel_tol=1e-12, abs_tol=1e-12)
