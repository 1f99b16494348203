import csv
import json

import numpy as np
import pytest

from bnflow.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_OK, main
from bnflow.config import DEFAULTS, ConfigError, ExperimentConfig
from bnflow.data_model import load_csv

SMALL_VERIFY = {
    "params": {
        "gradient_configs": 5,
        "metric_trials": 20,
        "ot_trials": 10,
        "regular_trials": 20,
        "norm_dt": 1e-2,
        "norm_t_end": 0.5,
        "equiv_dt": 1e-3,
        "equiv_t_end": 0.1,
    },
    "data": {"n": 100},
}
SMALL_CONV = {"params": {"m_list": [4, 8], "t_grid": [0.0, 0.5], "seeds": [0, 1], "dt": 0.1}, "data": {"n": 200}}


def cfg_file(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def run(tmp_path, experiment, obj=None, out="run", seed="0", extra=()):
    args = [experiment, "--out", str(tmp_path / out), "--seed", seed, *extra]
    if obj is not None:
        args += ["--config", cfg_file(tmp_path, obj)]
    return main(args)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def assert_rectangular(run_dir):
    for f in run_dir.glob("*.csv"):
        rows = read_rows(f)
        assert all(len(r) == len(rows[0]) for r in rows), f.name


# config


def test_defaults_cover_every_experiment():
    for name in DEFAULTS:
        cfg = ExperimentConfig.from_dict(name)
        assert cfg.experiment == name and cfg.seed == 0


def test_documented_figure_defaults():
    assert ExperimentConfig.from_dict("fig1").ensemble["m"] == 100
    assert ExperimentConfig.from_dict("fig1").params["lr"] == 0.05
    assert ExperimentConfig.from_dict("fig2").ensemble["m"] == 50
    assert ExperimentConfig.from_dict("fig3").ensemble["m"] == 20
    assert ExperimentConfig.from_dict("fig3").ensemble["init_scales"] == [1e-3, 1e-2, 1e-1, 1.0]


def test_overrides_merge_deeply():
    cfg = ExperimentConfig.from_dict("fig1", {"params": {"lr": 0.1}}, seed=9)
    assert cfg.params["lr"] == 0.1 and cfg.params["iterations"] == 8000 and cfg.seed == 9


@pytest.mark.parametrize(
    "override",
    [
        {"data": {"sigma": [[1.0, 0.5], [0.0, 1.0]]}},
        {"data": {"sigma": [[1.0, 0.0], [0.0, -1.0]]}},
        {"data": {"sigma": [[1.0]]}},
        {"ensemble": {"act": "swish"}},
        {"ensemble": {"loss": "hinge"}},
        {"ensemble": {"m": 0}},
        {"ensemble": {"init_scales": [1.0, -1.0]}},
        {"integration": {"scheme": "rk45"}},
        {"integration": {"dt": 0.0}},
        {"params": {"lr": -1.0}},
        {"experiment": "fig2"},
    ],
)
def test_validation_errors(override):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict("fig1", override)


def test_round_trip_json(tmp_path):
    cfg = ExperimentConfig.from_dict("fig3", {"params": {"lr": 0.25}}, seed=3)
    back = ExperimentConfig.load(cfg_file(tmp_path, json.loads(cfg.to_json())), "fig3")
    assert back.raw == cfg.raw


# CLI exit codes


def test_cli_config_errors(tmp_path):
    assert run(tmp_path, "fig1", {"data": {"sigma": [[1.0, 0.3], [0.0, 1.0]]}}) == EXIT_CONFIG
    assert main(["fig3", "--out", str(tmp_path / "r"), "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["fig3", "--out", str(tmp_path / "r"), "--config", str(tmp_path / "bad.json")]) == EXIT_CONFIG
    assert not (tmp_path / "run").exists() and not (tmp_path / "r").exists()


def test_cli_rejects_uncentered_csv(tmp_path):
    data = tmp_path / "d.csv"
    data.write_text("x1,x2,y\n2,1,0\n2,-1,0\n0,1,0\n0,-1,0\n")
    assert run(tmp_path, "simulate", {"data": {"csv": str(data), "teacher": {"neurons": []}}}) == EXIT_CONFIG


def test_cli_bad_seed_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["fig3", "--out", str(tmp_path / "r"), "--seed", "-1"])
    assert info.value.code == 2


def test_cli_refuses_foreign_directory(tmp_path):
    (tmp_path / "run").mkdir()
    (tmp_path / "run" / "precious.txt").write_text("x")
    assert run(tmp_path, "generate", {"data": {"n": 20}}) == EXIT_CONFIG
    assert (tmp_path / "run" / "precious.txt").exists()


def test_cli_assertion_failure_exit(tmp_path, capsys):
    obj = {**SMALL_CONV, "params": {**SMALL_CONV["params"], "min_decrease_fraction": 1.0}}
    assert run(tmp_path, "convergence", obj) == EXIT_FAIL
    assert "FAIL convergence.decrease_fraction_above_min" in capsys.readouterr().out


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_cli_abort_is_failure(tmp_path):
    obj = {"ensemble": {"m": 2, "act": "identity", "init_scales": [1e200]},
           "params": {"mode": "vanilla"}, "integration": {"t_end": 1.0, "dt": 0.5}, "data": {"n": 20}}
    assert run(tmp_path, "simulate", obj) == EXIT_FAIL
    assert not (tmp_path / "run").exists()
    assert not list(tmp_path.glob(".run.tmp-*"))


# runs


def test_generate_round_trips(tmp_path):
    assert run(tmp_path, "generate", {"data": {"n": 50}}, seed="5") == EXIT_OK
    first = (tmp_path / "run" / "data.csv").read_bytes()
    dist = load_csv(tmp_path / "run" / "data.csv")
    ref = ExperimentConfig.from_dict("generate", {"data": {"n": 50}}, seed=5).build_data()
    assert np.array_equal(dist.samples, ref.samples) and np.array_equal(dist.targets, ref.targets)
    # rerun replaces the directory in place, byte-identical
    assert run(tmp_path, "generate", {"data": {"n": 50}}, seed="5") == EXIT_OK
    assert (tmp_path / "run" / "data.csv").read_bytes() == first
    assert sorted(p.name for p in tmp_path.iterdir()) == ["cfg.json", "run"]


def test_simulate_writes_trajectory(tmp_path):
    obj = {"ensemble": {"m": 3}, "integration": {"t_end": 0.5, "dt": 0.1}, "data": {"n": 100}}
    assert run(tmp_path, "simulate", obj) == EXIT_OK
    rows = read_rows(tmp_path / "run" / "trajectory.csv")
    assert_rectangular(tmp_path / "run")
    assert rows[0][:3] == ["t", "k", "a"] and len(rows) == 1 + 6 * 3
    summary = json.loads((tmp_path / "run" / "summary.json").read_text())
    assert summary["checks"]["speed_bound_holds"] is True


def test_fig3_run_and_csv_precision(tmp_path):
    assert run(tmp_path, "fig3", {"data": {"n": 500}}) == EXIT_OK
    summary = json.loads((tmp_path / "run" / "summary.json").read_text())
    assert all(summary["checks"].values())
    rows = read_rows(tmp_path / "run" / "first_step.csv")
    assert len(rows) == 21 and all(len(r) == len(rows[0]) for r in rows)
    vals = [float(v) for v in rows[1][1:]]
    assert all(repr(v) == repr(float(f"{v:.17g}")) for v in vals)


def test_fig3_reproducible(tmp_path):
    assert run(tmp_path, "fig3", {"data": {"n": 300}}, out="a", seed="11") == EXIT_OK
    assert run(tmp_path, "fig3", {"data": {"n": 300}}, out="b", seed="11") == EXIT_OK
    assert (tmp_path / "a" / "first_step.csv").read_bytes() == (tmp_path / "b" / "first_step.csv").read_bytes()


def test_fig2_equal_scales_variant(tmp_path):
    obj = {"ensemble": {"m": 10, "init_scales": [1.0, 1.0]}, "data": {"n": 300},
           "params": {"iterations": 200, "snapshot_iterations": [0, 200]}}
    code = run(tmp_path, "fig2", obj)
    summary = json.loads((tmp_path / "run" / "summary.json").read_text())
    assert_rectangular(tmp_path / "run")
    assert "equal_scales_medians_within_20pct" in summary["checks"]
    assert "small_group_first_passage_earlier" not in summary["checks"]
    assert code == (EXIT_OK if all(summary["checks"].values()) else EXIT_FAIL)


def test_fig1_needs_two_dimensions(tmp_path):
    obj = {"data": {"d": 3, "sigma": np.eye(3).tolist(), "teacher": {"neurons": []}}}
    assert run(tmp_path, "fig1", obj) == EXIT_CONFIG


def test_verify_small(tmp_path):
    assert run(tmp_path, "verify", SMALL_VERIFY) == EXIT_OK
    report = json.loads((tmp_path / "run" / "verify.json").read_text())
    assert all(s["passed"] for s in report["suites"])


def test_verify_rejects_asymmetric_sigma(tmp_path):
    bad = {**SMALL_VERIFY, "data": {**SMALL_VERIFY["data"], "sigma": [[4.0, 0.5, 0.0], [0.0, 1.0, 0.2], [0.0, 0.2, 0.5]]}}
    assert run(tmp_path, "verify", bad) == EXIT_CONFIG


def test_convergence_jobs_identical(tmp_path):
    assert run(tmp_path, "convergence", SMALL_CONV, out="serial") in (EXIT_OK, EXIT_FAIL)
    assert run(tmp_path, "convergence", SMALL_CONV, out="par", extra=("--jobs", "2")) in (EXIT_OK, EXIT_FAIL)
    for name in ("convergence.csv", "convergence_summary.json"):
        assert (tmp_path / "serial" / name).read_bytes() == (tmp_path / "par" / name).read_bytes()


def test_convergence_duplicate_zero_at_t0(tmp_path):
    obj = {**SMALL_CONV, "params": {**SMALL_CONV["params"], "init_kind": "duplicate", "base_m": 4}}
    assert run(tmp_path, "convergence", obj) == EXIT_OK
    assert_rectangular(tmp_path / "run")
    rows = read_rows(tmp_path / "run" / "convergence.csv")[1:]
    assert all(float(r[4]) <= 1e-12 for r in rows)
