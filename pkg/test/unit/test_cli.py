import json
import os

import pandas as pd
import pytest

import cli
from cli import COMMANDS, EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, build_parser, main, read_config_file, resolve_config
from errors import ConfigError, NonFiniteValue
from report import read_report_json

TINY = [
    "--m", "4",
    "--iters", "3",
    "--warmstart-iters", "2",
    "--steps", "3",
    "--samples-eval", "2",
    "--eval-every", "1",
]


def _resolve(argv):
    args = build_parser().parse_args(argv)
    return resolve_config(args, COMMANDS[args.command][1])


def _write(path, text):
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    return str(path)


def test_missing_data_file_exits_with_config_error(tmp_path):
    out = tmp_path / "out"
    missing = str(tmp_path / "missing.csv")
    assert main(["train", "--data", missing, "--out", str(out)]) == EXIT_CONFIG
    with open(out / "error.json", encoding="utf-8") as f:
        payload = json.load(f)
    assert payload["error"] == "ConfigError"
    assert payload["path"] == missing


def test_unknown_config_key_exits_with_config_error(tmp_path):
    config_path = _write(tmp_path / "run.yaml", "m: 10\nbogus_key: 1\n")
    assert main(["train", "--config", config_path, "--out", str(tmp_path)]) == EXIT_CONFIG
    with pytest.raises(ConfigError):
        read_config_file(config_path)


def test_invalid_value_exits_with_config_error(tmp_path):
    assert main(["train", "--flow-time", "-1", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_flags_override_config_file_which_overrides_defaults(tmp_path):
    config_path = _write(tmp_path / "run.yaml", "m: 5\niters: 9\nflow-time: 2.5\n")
    cfg = _resolve(["train", "--config", config_path, "--m", "7"])
    assert (cfg.m, cfg.iters, cfg.flow_time) == (7, 9, 2.5)
    assert cfg.lr == 0.01


def test_json_config_files_are_accepted(tmp_path):
    config_path = _write(tmp_path / "run.json", json.dumps({"task": "binary", "t_list": [0, 3]}))
    cfg = _resolve(["sweep-time", "--config", config_path])
    assert cfg.task == "binary" and cfg.t_list == [0.0, 3.0]


def test_step_demo_has_its_own_defaults():
    cfg = _resolve(["step-demo"])
    assert (cfg.data, cfg.m, cfg.flow_time) == ("synthetic:step", 25, 5.0)
    assert _resolve(["step-demo", "--m", "8"]).m == 8


def test_t_list_flag_parses_numbers():
    assert _resolve(["sweep-time", "--t-list", "0,1.5,3"]).t_list == [0.0, 1.5, 3.0]
    with pytest.raises(SystemExit):
        build_parser().parse_args(["sweep-time", "--t-list", "0,x"])


def test_train_writes_report_checkpoint_and_predictions(tmp_path):
    out = tmp_path / "train"
    argv = ["train", "--data", "synthetic:step", "--n-points", "30", "--out", str(out), *TINY]
    assert main(argv) == EXIT_OK
    for name in ("report.json", "metrics.csv", "trace.csv", "checkpoint.json", "predictions.csv"):
        assert os.path.isfile(out / name), name
    report = read_report_json(str(out / "report.json"))
    assert report.command == "train"
    assert {"rmse", "loglik", "train_rmse", "final_elbo"} <= set(report.splits[0].metrics)
    trace = pd.read_csv(out / "trace.csv")
    assert list(trace["phase"]) == ["warmstart", "warmstart", "joint", "joint", "joint"]
    predictions = pd.read_csv(out / "predictions.csv")
    assert len(predictions) == 3
    assert (predictions["pred_var"] > 0).all()


def test_out_of_range_target_column_exits_with_config_error(tmp_path):
    data = _write(tmp_path / "data.csv", "a,b,c\n1,10,30\n2,20,60\n3,30,90\n")
    out = tmp_path / "bad_target"
    assert main(["train", "--data", data, "--target-col", "5", "--out", str(out), *TINY]) == EXIT_CONFIG
    with open(out / "error.json", encoding="utf-8") as f:
        assert json.load(f)["error"] == "ConfigError"


def test_train_from_csv(tmp_path):
    rows = "\n".join(f"{i / 10:.1f},{(i % 3) / 2:.1f},{i / 5:.2f}" for i in range(20))
    data = _write(tmp_path / "data.csv", "a,b,y\n" + rows + "\n")
    out = tmp_path / "csv"
    assert main(["train", "--data", data, "--out", str(out), *TINY]) == EXIT_OK
    report = read_report_json(str(out / "report.json"))
    assert report.extra["input_dim"] == 2
    assert report.extra["dropped_rows"] == 0


def test_step_demo_writes_trajectories_and_curve(tmp_path):
    out = tmp_path / "demo"
    argv = ["step-demo", "--n-points", "20", "--flow-time", "0.5", "--out", str(out), *TINY]
    assert main(argv) == EXIT_OK
    trajectories = pd.read_csv(out / "trajectories.csv")
    assert len(trajectories) == (3 + 1) * 20 * 2
    curve = pd.read_csv(out / "curve.csv")
    assert len(curve) == 200
    assert curve["x"].iloc[0] == -1.0 and curve["x"].iloc[-1] == 1.0
    report = read_report_json(str(out / "report.json"))
    assert "gap_statistic" in report.extra
    assert report.extra["trajectory_rows"] == len(trajectories)


def test_benchmark_with_one_repeat_has_zero_stderr(tmp_path, monkeypatch):
    monkeypatch.delenv("DIFFGP_THREADS", raising=False)
    out = tmp_path / "bench"
    argv = ["benchmark", "--data", "synthetic:moons", "--task", "binary", "--n-points", "80", "--train-fraction", "0.5",
            "--repeats", "1", "--out", str(out), *TINY]
    assert main(argv) == EXIT_OK
    report = read_report_json(str(out / "report.json"))
    assert report.summary["auc"]["n"] == 1
    assert report.summary["auc"]["stderr"] == 0.0
    assert 0.0 <= report.summary["accuracy"]["mean"] <= 1.0


def test_sweep_time_writes_one_row_per_time(tmp_path):
    out = tmp_path / "sweep"
    argv = ["sweep-time", "--n-points", "30", "--t-list", "0,0.5", "--out", str(out), *TINY]
    assert main(argv) == EXIT_OK
    sweep = pd.read_csv(out / "sweep.csv")
    assert list(sweep["T"]) == [0.0, 0.5]
    report = read_report_json(str(out / "report.json"))
    assert report.extra["trend_metric"] == "rmse"


def test_numeric_failure_in_train_exits_one_with_error_record(tmp_path, monkeypatch):
    def diverge(*args, **kwargs):
        raise NonFiniteValue("elbo is nan")

    monkeypatch.setattr(cli, "train_model", diverge)
    out = tmp_path / "diverged"
    argv = ["train", "--data", "synthetic:step", "--n-points", "30", "--out", str(out), *TINY]
    assert main(argv) == EXIT_NUMERIC
    with open(out / "error.json", encoding="utf-8") as f:
        error = json.load(f)
    assert error["error"] == "NonFiniteValue"
    assert error["message"] == "elbo is nan"
    assert error["split"] == 0
    report = read_report_json(str(out / "report.json"))
    assert report.splits[0].status == "failed"
    assert not os.path.exists(out / "checkpoint.json")
