import csv
import json
import re

import numpy as np
import pytest

from retmatch.bench.charts import emit_charts, histogram_chart, line_chart
from retmatch.bench.cli import main, parse_seed_list
from retmatch.bench.config import (
    ExperimentConfig,
    apply_override,
    config_hash,
    load_config,
    load_preset,
    preset_names,
    resolve_realworld,
    with_axis,
)
from retmatch.bench.export import (
    RAW_COLUMNS,
    aggregate_rows,
    export_aggregated,
    export_csv,
    normalized_rows,
    read_csv,
)
from retmatch.bench.lemmas import ConcaveMixtureBound, lemma_check
from retmatch.bench.runner import ResultTable, optimal_compare, run_experiment, run_sweep, small_scale_config
from retmatch.errors import ConfigError


def tiny(**kw) -> ExperimentConfig:
    cfg = ExperimentConfig()
    cfg.world.n_x = cfg.world.n_y = 25
    cfg.protocol.T = 10
    cfg.protocol.record_interval = 4
    cfg.protocol.probe_prob = 0.05
    cfg.model.n_train = 400
    cfg.model.trees = 10
    cfg.model.depth = 3
    cfg.run.seeds = [0, 1]
    cfg.policies = ["max_match", "mret"]
    for k, v in kw.items():
        apply_override(cfg, k, v)
    return cfg


# --- config


def test_presets_load_and_validate():
    names = preset_names()
    assert {"default", "small_optimal", "realworld"} <= set(names)
    for name in names:
        if name == "realworld":
            cfg, run = resolve_realworld(name)
            assert cfg.density == 0.01 and run["seeds"] == [0]
        else:
            load_preset(name).validate()
    d = load_preset("default")
    assert d.world.n_x == 1000 and d.protocol.T == 2000 and d.model.n_train == 5000
    assert len(d.run.seeds) == 10 and d.protocol.weight_family == "inv"


def test_default_preset_matches_builtin_defaults():
    assert config_hash(load_preset("default")) == config_hash(ExperimentConfig())


def test_load_config_file(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('[world]\nkappa = 0.25\n[policies]\nnames = ["uniform"]\nfairco_lambda = 3\n[run]\nseeds = [5]\n')
    cfg = load_config(p)
    assert cfg.world.kappa == 0.25 and cfg.policies == ["uniform"] and cfg.protocol.fairco_lambda == 3.0
    assert cfg.run.seeds == [5]
    p.write_text("[nope]\nx = 1\n")
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text("[world\n")
    with pytest.raises(ConfigError):
        load_config(p)


@pytest.mark.parametrize(
    "key,value",
    [("world.kappa", 2.0), ("protocol.K", 0), ("model.retention_model", "svm"), ("policies", "max_match,bogus"),
     ("world.unknown", 1), ("run.seeds", "-1")],
)
def test_invalid_overrides(key, value):
    cfg = ExperimentConfig()
    with pytest.raises(ConfigError):
        apply_override(cfg, key, value)
        cfg.validate()


def test_hash_ignores_seeds_and_paths():
    a, b = ExperimentConfig(), ExperimentConfig()
    b.run.seeds = [42]
    b.run.output = "elsewhere"
    b.run.workers = 4
    assert config_hash(a) == config_hash(b)
    b.world.kappa = 0.3
    assert config_hash(a) != config_hash(b)


def test_with_axis():
    cfg = ExperimentConfig()
    assert with_axis(cfg, "n_xy", 50).world.n_y == 50
    assert with_axis(cfg, "lambda", 0.1).protocol.fairco_lambda == 0.1
    assert with_axis(cfg, "drift", "on").world.drift is True
    assert cfg.world.n_y == 1000
    with pytest.raises(ConfigError):
        with_axis(cfg, "temperature", 1)
    with pytest.raises(ConfigError):
        with_axis(cfg, "weight_family", "zipf")


def test_seed_list_parsing():
    assert parse_seed_list("1, 2,18446744073709551615") == [1, 2, 2**64 - 1]
    for bad in ("", "a", "-3", str(2**64)):
        with pytest.raises(ConfigError):
            parse_seed_list(bad)


# --- runner and export


@pytest.fixture(scope="module")
def table():
    return run_experiment(tiny())


def test_grid_row_count(table):
    # 2 seeds x 2 policies x (ceil(10/4) + 1) record points
    assert len(table) == 2 * 2 * 4
    assert [r["step"] for r in table.select(policy="mret", seed=1)] == [0, 4, 8, 10]
    assert {(r["policy"], r["seed"]) for r in table.rows} == {(p, s) for p in ("max_match", "mret") for s in (0, 1)}


def test_export_schema_and_round_trip(table, tmp_path):
    path = export_csv(table, tmp_path / "raw.csv")
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == RAW_COLUMNS
    assert len(rows) == len(table) + 1
    back = read_csv(path)
    assert back.rows == table.rows


def test_empty_table_header_only(tmp_path):
    path = export_csv(ResultTable(), tmp_path / "e.csv")
    assert path.read_text() == ",".join(RAW_COLUMNS) + "\n"


def test_aggregates_are_recomputable(table, tmp_path):
    export_aggregated(table, tmp_path / "agg.csv")
    with open(tmp_path / "agg.csv") as fh:
        agg = list(csv.DictReader(fh))
    assert "seed" not in agg[0]
    for row in agg:
        raw = table.select(policy=row["policy"], step=int(row["step"]))
        assert float(row["retention_rate_mean"]) == pytest.approx(np.mean([r["retention_rate"] for r in raw]), abs=0)
        assert float(row["matches_x_std"]) == pytest.approx(np.std([r["matches_x"] for r in raw]), abs=1e-15)


def test_normalized_view():
    t = run_experiment(tiny(policies="uniform,max_match"))
    rows = [r for r in normalized_rows(t) if r["step"] == 10]
    uni = [r for r in rows if r["policy"] == "uniform"][0]
    assert uni["retention_rate_ratio"] == 1.0


def test_byte_identical_across_workers(tmp_path):
    cfg = tiny(policies="max_match,fairco,uniform,mret")
    cfg.run.seeds = [3, 1, 2]
    a = export_csv(run_experiment(cfg, workers=1), tmp_path / "a.csv").read_bytes()
    b = export_csv(run_experiment(cfg, workers=1), tmp_path / "b.csv").read_bytes()
    c = export_csv(run_experiment(cfg, workers=2), tmp_path / "c.csv").read_bytes()
    assert a == b == c


def test_sweep_tags_rows_and_empty_sweep(tmp_path):
    t = run_sweep(tiny(), "kappa", [0.0, 1.0])
    assert {r["axis_value"] for r in t.rows} == {0.0, 1.0}
    assert all(r["axis"] == "kappa" for r in t.rows)
    assert len(run_sweep(tiny(), "kappa", [])) == 0
    path = export_csv(t, tmp_path / "s.csv")
    assert path.read_text().splitlines()[0].startswith("axis,axis_value,config_hash")
    assert read_csv(path).rows == t.rows


def test_optimal_compare_small():
    cfg = small_scale_config()
    cfg.run.seeds = [0, 1]
    rep = optimal_compare(cfg)
    assert rep.delta_retention <= 0.05
    assert set(rep.retention) == {"mret_best", "optimal"}


def test_t_zero_trivially_identical():
    cfg = small_scale_config()
    cfg.protocol.T = 0
    cfg.run.seeds = [0]
    rep = optimal_compare(cfg)
    assert rep.delta_retention == 0 and rep.delta_matches == 0


# --- charts


def test_one_series_per_policy(tmp_path):
    t = run_experiment(tiny(policies="max_match,uniform,mret_best"))
    paths = emit_charts(t, tmp_path)
    names = {p.name for p in paths}
    assert {"results_matches_per_user.svg", "results_retention_rate.svg", "results_deviation_hist.svg"} <= names
    svg = (tmp_path / "results_retention_rate.svg").read_text()
    assert svg.count('class="series"') == 3
    meta = json.loads(re.search(r"<metadata>(.*)</metadata>", svg, re.S).group(1).replace("&quot;", '"'))
    assert set(meta) == {"max_match", "uniform", "mret_best"}


def test_chart_functions_are_deterministic():
    s = {"a": ([0, 1, 2], [0.1, 0.3, 0.2])}
    assert line_chart(s, "t", "x", "y") == line_chart(s, "t", "x", "y")
    h = histogram_chart({"a": [1, 2]}, [-1.0, 0.0, 1.0], "h", "m")
    assert h.startswith("<svg") and "stroke-dasharray" in h


# --- lemma check


def test_lemma_check_small():
    rep = lemma_check(500, seed=3)
    assert rep.ok and rep.trials == 500
    assert set(rep.violations) == {"jensen", "linear", "chain"}


def test_lemma_check_reference_curves_reported_not_counted():
    rep = lemma_check(300, seed=1, reference=True)
    assert rep.ok
    assert set(rep.reference_violations) == {"jensen", "linear", "chain"}


def test_lemma_check_bad_tolerance():
    with pytest.raises(ConfigError):
        lemma_check(10, tolerance=-1)


def test_mixture_curves_are_concave_and_monotone(rng):
    f = ConcaveMixtureBound.sample(200, rng)
    m = np.linspace(0, 20, 401)
    vals = np.array([f(np.full(m.size, u), m) for u in range(200)])
    assert np.all(np.diff(vals, axis=1) >= -1e-12)
    assert np.all(np.diff(vals, 2, axis=1) <= 1e-12)
    assert vals.min() >= 0 and vals.max() <= 1


# --- CLI


def test_cli_simulate_and_plot(tmp_path, capsys):
    out = tmp_path / "sim"
    code = main(["simulate", "--n-xy", "20", "--T", "8", "--seed-list", "0,1", "--n-train", "300",
                 "--policies", "max_match,uniform", "--output", str(out), "--set", "model.trees=5"])
    assert code == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["seeds"] == [0, 1] and set(doc["final_seed_mean"]) == {"max_match", "uniform"}
    raw = out / "simulate_raw.csv"
    assert raw.exists() and (out / "simulate_aggregated.csv").exists() and (out / "simulate_normalized.csv").exists()
    assert main(["plot", "--input", str(raw), "--output", str(tmp_path / "plots")]) == 0
    assert (tmp_path / "plots" / "simulate_raw_retention_rate.svg").exists()


def test_cli_sweep(tmp_path, capsys):
    code = main(["sweep", "--axis", "lambda", "--values", "0,10", "--n-xy", "15", "--T", "5",
                 "--seed-list", "0", "--policies", "fairco", "--output", str(tmp_path), "--no-charts"])
    assert code == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["values"] == [0.0, 10.0]
    assert (tmp_path / "sweep_lambda_raw.csv").exists()


def test_cli_errors_are_machine_readable(capsys, tmp_path):
    assert main(["sweep", "--axis", "nope", "--values", "1"]) == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "ConfigError" and err["exit_code"] == 2
    assert main(["simulate", "--seed-list", "x"]) == 2
    assert main(["lemma-check", "--trials", "5", "--tolerance", "-1"]) == 2
    assert main(["optimal-compare", "--seed-list", "0", "--budget", "10"]) == 4
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "BudgetError"
    blocked = tmp_path / "file"
    blocked.write_text("")
    code = main(["simulate", "--n-xy", "10", "--T", "2", "--seed-list", "0", "--policies", "uniform",
                 "--output", str(blocked / "sub")])
    assert code == 1
    assert json.loads(capsys.readouterr().err.strip())["error"] in ("FileExistsError", "NotADirectoryError")


def test_cli_lemma_and_real_pipeline(capsys, tmp_path):
    assert main(["lemma-check", "--trials", "200"]) == 0
    assert json.loads(capsys.readouterr().out)["ok"] is True
    code = main(["real-pipeline", "--T", "20", "--output", str(tmp_path), "--no-charts",
                 "--set", "realworld.n_x=40", "--set", "realworld.n_y=40", "--set", "realworld.n_records=2000",
                 "--set", "realworld.n_train=2000", "--set", "realworld.density=0.2"])
    assert code == 0
    doc = json.loads(capsys.readouterr().out)
    assert "mret_best" in doc["final_seed_mean"]
