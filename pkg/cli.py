"""
Command-line harness: train, benchmark over repeated splits, sweep the
flow time, run the step-function demo and run the self-checks.

Usage:
    python cli.py train --data data/boston.csv --m 100 --flow-time 1
    python cli.py benchmark --data data/concrete.csv --repeats 20
    python cli.py sweep-time --data synthetic:concrete-like --t-list 0,1,2,5
    python cli.py step-demo
    python cli.py check
"""

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import yaml

import config
from checkpoint_store import CheckpointManager
from data_loader import (
    SYNTHETIC_PREFIX,
    DataLoader,
    Dataset,
    SplitSpec,
    split,
    standardize,
    step_regions,
)
from errors import ConfigError, DataError, DiffGPError, NumericError, TrainingAborted
from invariants import run_checks
from metrics import metrics, region_gap
from model import Prediction, init_model, predict
from report import (
    RunReport,
    SplitResult,
    trend_statistic,
    write_metrics_csv,
    write_predictions_csv,
    write_report_json,
    write_table_csv,
    write_trace_csv,
)
from sdeflow import FlowConfig, write_trajectories_csv
from trainer import FitResult, TrainConfig, TrainTrace, fit, warmstart_sgp

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NUMERIC = 1
EXIT_CONFIG = 2


@dataclass
class RunConfig:
    """Resolved settings of one CLI run; field names double as config-file keys."""

    task: str = "regression"
    data: str = "synthetic:step"
    target_col: int = -1
    header: bool = True
    m: int = config.INDUCING_POINTS
    mt: int = config.TEMPORAL_INDUCING
    temporal: bool = False
    flow_time: float = config.FLOW_TIME
    steps: int = config.EM_STEPS
    samples_train: int = config.TRAIN_SAMPLES
    samples_eval: int = config.EVAL_SAMPLES
    lr: float = config.LEARNING_RATE
    iters: int = config.TRAIN_ITERS
    warmstart_iters: int = config.WARMSTART_ITERS
    minibatch: Optional[int] = None
    eval_every: int = config.EVAL_EVERY
    repeats: int = 1
    seed: int = config.SEED
    train_fraction: float = config.TRAIN_FRACTION
    n_points: Optional[int] = None
    noise: Optional[float] = None
    t_list: List[float] = field(default_factory=lambda: list(config.SWEEP_TIMES))
    out: str = config.OUTPUT_DIR
    log_level: str = config.LOG_LEVEL

    def __post_init__(self):
        if self.task not in ("regression", "binary"):
            raise ConfigError(f"task must be 'regression' or 'binary', got {self.task!r}")
        if self.flow_time < 0:
            raise ConfigError(f"flow_time must be non-negative, got {self.flow_time}")
        for name in ("m", "steps", "samples_train", "samples_eval", "repeats", "eval_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.temporal and self.mt < 1:
            raise ConfigError(f"mt must be at least 1, got {self.mt}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if not self.t_list or any(t < 0 for t in self.t_list):
            raise ConfigError(f"t_list must be a nonempty list of non-negative times, got {self.t_list}")

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(
                learning_rate=self.lr,
                n_iters=self.iters,
                minibatch_size=self.minibatch,
                eval_every=self.eval_every,
                warmstart_iters=self.warmstart_iters,
                seed=self.seed,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def flow_config(self, seed: int, flow_time: float = None) -> FlowConfig:
        return FlowConfig(
            T=self.flow_time if flow_time is None else flow_time,
            n_steps=self.steps,
            n_samples=self.samples_train,
            seed=seed,
        )

    def loader(self) -> DataLoader:
        return DataLoader(
            target_col=self.target_col,
            header=self.header,
            task=self.task,
            n_points=self.n_points,
            noise=self.noise,
            seed=self.seed,
        )


CONFIG_KEYS = {f.name for f in dataclasses.fields(RunConfig)}


def read_config_file(path: str) -> dict:
    """
    Reads a flat JSON or YAML mapping of RunConfig keys (dashes or underscores).

    Raises:
        ConfigError: If the file is missing, unparsable, not a mapping, or
            names an unknown key.
    """
    if not os.path.isfile(path):
        raise ConfigError(f"Config file not found: {path}", path=path)
    try:
        with open(path, encoding="utf-8") as f:
            values = yaml.safe_load(f) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"Could not parse config file {path}: {exc}", path=path) from exc
    if not isinstance(values, dict):
        raise ConfigError(f"Config file {path} must hold a mapping", path=path)
    values = {str(k).replace("-", "_"): v for k, v in values.items()}
    unknown = sorted(set(values) - CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"Unknown config keys in {path}: {', '.join(unknown)}", path=path)
    return values


def resolve_config(args: argparse.Namespace, command_defaults: dict = None) -> RunConfig:
    """Defaults, then per-command defaults, then the config file, then explicit flags."""
    values = dict(command_defaults or {})
    flags = {k: v for k, v in vars(args).items() if k in CONFIG_KEYS}
    config_path = getattr(args, "config", None)
    if config_path:
        values.update(read_config_file(config_path))
    values.update(flags)
    if "t_list" in values:
        values["t_list"] = [float(t) for t in values["t_list"]]
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(f"Invalid configuration: {exc}") from exc


def check_paths(cfg: RunConfig):
    if not cfg.data.startswith(SYNTHETIC_PREFIX) and not os.path.isfile(cfg.data):
        raise ConfigError(f"Data file not found: {cfg.data}", path=cfg.data)


def worker_count() -> int:
    raw = os.environ.get(config.THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise ConfigError(f"{config.THREADS_ENV} must be an integer, got {raw!r}") from exc


# --- Training one split ---

@dataclass
class SplitRun:
    result: SplitResult
    fit: Optional[FitResult] = None
    test: Optional[Dataset] = None
    prediction: Optional[Prediction] = None


def original_targets(data: Dataset) -> np.ndarray:
    if data.record is None or data.task != "regression":
        return data.y
    return data.y * data.record.y_std + data.record.y_mean


def train_model(cfg: RunConfig, train: Dataset, seed: int, flow_time: float = None) -> FitResult:
    """Warm start of the predictor followed by the joint fit."""
    train_cfg = cfg.train_config()
    model = init_model(
        train.X,
        train.task,
        M=cfg.m,
        flow=cfg.flow_config(seed, flow_time),
        n_temporal=cfg.mt if cfg.temporal else None,
        seed=seed,
    )
    trace = TrainTrace()
    predictor = warmstart_sgp(train, model.predictor, train_cfg, trace)
    model = dataclasses.replace(model, predictor=predictor)
    return fit(model, train, train_cfg, trace=trace)


def run_split(cfg: RunConfig, dataset: Dataset, repetition: int, flow_time: float = None) -> SplitRun:
    """
    Trains and scores one random train/test split. Numeric failures are
    recorded on the result rather than raised.
    """
    started = time.perf_counter()
    seed = cfg.seed + repetition
    train, test = split(dataset, SplitSpec(cfg.train_fraction, cfg.seed, repetition))
    try:
        fitted = train_model(cfg, train, seed, flow_time)
        train_prediction = predict(fitted.model, train.X, cfg.samples_eval)
        test_prediction = predict(fitted.model, test.X, cfg.samples_eval)
    except (NumericError, TrainingAborted) as exc:
        logger.error("Split %d failed: %s", repetition, exc)
        trace = getattr(exc, "trace", None)
        return SplitRun(
            SplitResult(
                split=repetition,
                status="failed",
                error=f"{type(exc).__name__}: {exc}",
                trace=trace.as_rows() if trace is not None else [],
                wall_time=time.perf_counter() - started,
            )
        )
    scores = {
        f"train_{k}": v for k, v in metrics(original_targets(train), train_prediction, train.task, train.record).items()
    }
    scores.update(metrics(original_targets(test), test_prediction, test.task, test.record))
    scores["final_elbo"] = fitted.trace.final_elbo
    result = SplitResult(
        split=repetition,
        metrics=scores,
        trace=fitted.trace.as_rows(),
        wall_time=time.perf_counter() - started,
    )
    return SplitRun(result, fitted, test, test_prediction)


def _split_worker(cfg: RunConfig, dataset: Dataset, repetition: int) -> SplitResult:
    return run_split(cfg, dataset, repetition).result


def write_report(report: RunReport, out: str):
    write_report_json(report, os.path.join(out, "report.json"))
    write_metrics_csv(report, os.path.join(out, "metrics.csv"))
    write_trace_csv(report, os.path.join(out, "trace.csv"))


def write_test_predictions(run: SplitRun, out: str):
    test, prediction = run.test, run.prediction
    if test.task == "regression":
        record = test.record
        mean = prediction.mean * record.y_std + record.y_mean
        var = prediction.var * record.y_std ** 2
    else:
        mean, var = prediction.mean, None
    write_predictions_csv(
        os.path.join(out, "predictions.csv"), test.index, original_targets(test), mean, var, test.task
    )


# --- Subcommands ---

def load_dataset(cfg: RunConfig) -> Dataset:
    return cfg.loader().load(cfg.data)


def cmd_train(cfg: RunConfig) -> Tuple[RunReport, int]:
    started = time.perf_counter()
    dataset = load_dataset(cfg)
    run = run_split(cfg, dataset, 0)
    report = RunReport("train", dataclasses.asdict(cfg), [run.result])
    report.extra["input_dim"] = dataset.input_dim
    report.extra["dropped_rows"] = dataset.dropped_rows
    report.wall_time = time.perf_counter() - started
    report.summarize()
    write_report(report, cfg.out)
    if run.fit is None:
        write_split_error(run.result, cfg.out)
        return report, EXIT_NUMERIC
    CheckpointManager(cfg.out).save(run.fit.model, cfg.train_config(), run.fit.iteration, run.fit.optimizer)
    write_test_predictions(run, cfg.out)
    return report, EXIT_OK


def cmd_benchmark(cfg: RunConfig) -> Tuple[RunReport, int]:
    started = time.perf_counter()
    dataset = load_dataset(cfg)
    workers = min(worker_count(), cfg.repeats)
    repetitions = list(range(cfg.repeats))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_split_worker, [cfg] * cfg.repeats, [dataset] * cfg.repeats, repetitions))
    else:
        results = [_split_worker(cfg, dataset, r) for r in repetitions]
    report = RunReport("benchmark", dataclasses.asdict(cfg), results)
    report.extra["input_dim"] = dataset.input_dim
    report.wall_time = time.perf_counter() - started
    report.summarize()
    write_report(report, cfg.out)
    for name, stat in report.summary.items():
        print(f"  {name}: {stat['formatted']}")
    return report, EXIT_NUMERIC if report.failed else EXIT_OK


def cmd_sweep_time(cfg: RunConfig) -> Tuple[RunReport, int]:
    started = time.perf_counter()
    dataset = load_dataset(cfg)
    report = RunReport("sweep-time", dataclasses.asdict(cfg))
    rows = []
    for i, T in enumerate(cfg.t_list):
        result = run_split(cfg, dataset, 0, flow_time=T).result
        result.split = i
        report.splits.append(result)
        rows.append({"T": T, "status": result.status, **result.metrics})
        print(f"  T={T:g}: {result.status}")
    write_table_csv(rows, os.path.join(cfg.out, "sweep.csv"))

    score = "rmse" if cfg.task == "regression" else "auc"
    ok = [r for r in rows if r["status"] == "ok"]
    report.extra["trend_metric"] = score
    report.extra["trend_spearman"] = trend_statistic([r["T"] for r in ok], [r[score] for r in ok])
    report.wall_time = time.perf_counter() - started
    report.summarize()
    write_report(report, cfg.out)
    return report, EXIT_NUMERIC if report.failed else EXIT_OK


def cmd_step_demo(cfg: RunConfig) -> Tuple[RunReport, int]:
    """
    Fits the step-function data set on all points, then writes the flow
    trajectories of the training inputs and a predictive curve over [-1, 1].
    Metrics are on the standardized scale.
    """
    started = time.perf_counter()
    raw = load_dataset(cfg)
    data, record = standardize(raw)
    report = RunReport("step-demo", dataclasses.asdict(cfg))
    try:
        fitted = train_model(cfg, data, cfg.seed)
        prediction = predict(fitted.model, data.X, cfg.samples_eval)
    except (NumericError, TrainingAborted) as exc:
        trace = getattr(exc, "trace", None)
        report.splits.append(
            SplitResult(0, status="failed", error=f"{type(exc).__name__}: {exc}",
                        trace=trace.as_rows() if trace is not None else [])
        )
        write_report(report, cfg.out)
        raise

    scores = {f"train_{k}": v for k, v in metrics(data.y, prediction, data.task).items()}
    scores["final_elbo"] = fitted.trace.final_elbo
    report.splits.append(SplitResult(0, metrics=scores, trace=fitted.trace.as_rows()))

    regions = step_regions(raw.X[:, 0], config.STEP_DEMO_REGIONS)
    warped = prediction.trajectories.X_T.mean(axis=0)[:, 0]
    report.extra["gap_statistic"] = region_gap(warped, regions)
    report.extra["units"] = "standardized"
    report.extra["trajectory_rows"] = write_trajectories_csv(
        prediction.trajectories, os.path.join(cfg.out, "trajectories.csv")
    )

    grid = np.linspace(-1.0, 1.0, config.CURVE_POINTS).reshape(-1, 1)
    curve = predict(fitted.model, (grid - record.x_mean) / record.x_std, cfg.samples_eval)
    write_table_csv(
        [
            {"x": x, "pred_mean": m * record.y_std + record.y_mean, "pred_var": v * record.y_std ** 2}
            for x, m, v in zip(grid[:, 0], curve.mean, curve.var)
        ],
        os.path.join(cfg.out, "curve.csv"),
    )
    write_predictions_csv(
        os.path.join(cfg.out, "predictions.csv"),
        data.index,
        raw.y,
        prediction.mean * record.y_std + record.y_mean,
        prediction.var * record.y_std ** 2,
    )
    report.wall_time = time.perf_counter() - started
    report.summarize()
    write_report(report, cfg.out)
    CheckpointManager(cfg.out).save(fitted.model, cfg.train_config(), fitted.iteration, fitted.optimizer)
    print(f"  train RMSE (standardized): {scores['train_rmse']:.4f}")
    print(f"  inter-region gap: {report.extra['gap_statistic']:.4f}")
    return report, EXIT_OK


def cmd_check(cfg: RunConfig) -> Tuple[None, int]:
    results = run_checks(seed=cfg.seed)
    with open(os.path.join(cfg.out, "check.json"), "w", encoding="utf-8") as f:
        json.dump([dataclasses.asdict(r) for r in results], f, indent=2, default=float)
    for r in results:
        print(f"  {r.name}: {'ok' if r.passed else 'FAILED'}")
    return None, EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


COMMANDS = {
    "train": (cmd_train, {}),
    "benchmark": (cmd_benchmark, {}),
    "sweep-time": (cmd_sweep_time, {}),
    "step-demo": (
        cmd_step_demo,
        {
            "data": "synthetic:step",
            "m": config.STEP_DEMO_INDUCING,
            "flow_time": config.STEP_DEMO_FLOW_TIME,
        },
    ),
    "check": (cmd_check, {}),
}


# --- Argument parsing ---

def _t_list(text: str) -> List[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"--t-list takes comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Differential deep Gaussian process benchmark harness.")
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON or YAML file of run settings.")
    common.add_argument("--data", help="CSV path or synthetic:{step,moons,concrete-like}.")
    common.add_argument("--target-col", dest="target_col", type=int)
    common.add_argument("--no-header", dest="header", action="store_false")
    common.add_argument("--task", choices=["regression", "binary"])
    common.add_argument("--m", type=int, help="Inducing points of each GP.")
    common.add_argument("--mt", type=int, help="Temporal inducing points (with --temporal).")
    common.add_argument("--temporal", action="store_true", help="Time-dependent flow field.")
    common.add_argument("--flow-time", dest="flow_time", type=float)
    common.add_argument("--steps", type=int, help="Euler-Maruyama steps.")
    common.add_argument("--samples-train", dest="samples_train", type=int)
    common.add_argument("--samples-eval", dest="samples_eval", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--iters", type=int)
    common.add_argument("--warmstart-iters", dest="warmstart_iters", type=int)
    common.add_argument("--minibatch", type=int)
    common.add_argument("--eval-every", dest="eval_every", type=int)
    common.add_argument("--repeats", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--train-fraction", dest="train_fraction", type=float)
    common.add_argument("--n-points", dest="n_points", type=int, help="Synthetic data size.")
    common.add_argument("--noise", type=float, help="Synthetic data noise.")
    common.add_argument("--t-list", dest="t_list", type=_t_list, help="Flow times for sweep-time, e.g. 0,1,2,5.")
    common.add_argument("--out", help="Output directory.")
    common.add_argument("--log-level", dest="log_level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def write_error(exc: Exception, out: Optional[str]):
    write_error_payload({"error": type(exc).__name__, "message": str(exc), "path": getattr(exc, "path", None)}, out)


def write_split_error(result: SplitResult, out: str):
    """error.json for a split that failed inside run_split, which records rather than raises."""
    name, _, message = (result.error or "").partition(": ")
    write_error_payload({"error": name, "message": message, "path": None, "split": result.split}, out)


def write_error_payload(payload: dict, out: Optional[str]):
    print(json.dumps(payload), file=sys.stderr)
    if not out:
        return
    try:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "error.json"), "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2)
    except OSError:
        pass


def main(argv: List[str] = None) -> int:
    """
    Parses arguments, resolves the run configuration and dispatches to a
    subcommand.

    Returns:
        0 on success, 1 on a numeric failure, 2 on a configuration error.
    """
    args = build_parser().parse_args(argv)
    command, command_defaults = COMMANDS[args.command]
    out = getattr(args, "out", config.OUTPUT_DIR)
    try:
        cfg = resolve_config(args, command_defaults)
        out = cfg.out
        logging.basicConfig(
            level=cfg.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True
        )
        check_paths(cfg)
        os.makedirs(cfg.out, exist_ok=True)
        print(f"Running {args.command} (outputs in {cfg.out})...")
        _, code = command(cfg)
    except (ConfigError, DataError) as exc:
        write_error(exc, out)
        return EXIT_CONFIG
    except (NumericError, TrainingAborted) as exc:
        write_error(exc, out)
        return EXIT_NUMERIC
    except DiffGPError as exc:
        write_error(exc, out)
        return EXIT_NUMERIC
    if code == EXIT_OK:
        print(f"✅ {args.command} complete.")
    else:
        print(f"{args.command} finished with failures; see {cfg.out}.")
    return code


if __name__ == "__main__":
    sys.exit(main())
