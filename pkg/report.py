"""Run reports: aggregation over splits and the JSON/CSV files a run emits."""

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

import config

# Decimal places when formatting mean(stderr).
DECIMALS = {"rmse": 2, "loglik": 2, "auc": 3, "accuracy": 3}


@dataclass
class SplitResult:
    split: int
    metrics: Dict[str, float] = field(default_factory=dict)
    status: str = "ok"
    error: Optional[str] = None
    trace: List[dict] = field(default_factory=list)
    wall_time: float = 0.0


@dataclass
class RunReport:
    """
    Everything a subcommand reports.

    Attributes:
        command: The subcommand that produced the report.
        config: Echo of the resolved run configuration.
        splits: Per-split metrics, traces and status.
        summary: Per metric {"mean", "stderr", "n", "formatted"} over successful splits.
        extra: Subcommand-specific statistics (gap, trend, ...).
    """

    command: str
    config: dict
    splits: List[SplitResult] = field(default_factory=list)
    summary: Dict[str, dict] = field(default_factory=dict)
    extra: Dict[str, object] = field(default_factory=dict)
    wall_time: float = 0.0
    version: str = config.VERSION

    @property
    def failed(self) -> List[SplitResult]:
        return [s for s in self.splits if s.status != "ok"]

    def summarize(self) -> "RunReport":
        self.summary = aggregate([s.metrics for s in self.splits if s.status == "ok"])
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        data = dict(data)
        data["splits"] = [SplitResult(**s) for s in data.get("splits", [])]
        return cls(**data)


def mean_stderr(values: Sequence[float]):
    """Sample mean and standard error (ddof=1); the error is 0 for a single value."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return float("nan"), float("nan")
    if values.size == 1:
        return float(values[0]), 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


def format_mean_stderr(mean: float, stderr: float, decimals: int = 2) -> str:
    return f"{mean:.{decimals}f}({stderr:.{decimals}f})"


def aggregate(per_split: Sequence[Dict[str, float]]) -> Dict[str, dict]:
    names = sorted({name for metrics in per_split for name in metrics})
    summary = {}
    for name in names:
        values = [m[name] for m in per_split if name in m]
        mean, stderr = mean_stderr(values)
        summary[name] = {
            "mean": mean,
            "stderr": stderr,
            "n": len(values),
            "formatted": format_mean_stderr(mean, stderr, DECIMALS.get(name, 3)),
        }
    return summary


def trend_statistic(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation of y against x; NaN when either is constant."""
    if len(set(x)) < 2 or len(set(y)) < 2:
        return float("nan")
    return float(stats.spearmanr(x, y).correlation)


def _clean(value):
    # NaN is not valid JSON
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_clean(v) for v in value]
    return value


def write_report_json(report: RunReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_clean(report.to_dict()), f, indent=2)


def read_report_json(path: str) -> RunReport:
    with open(path, encoding="utf-8") as f:
        return RunReport.from_dict(json.load(f))


def write_metrics_csv(report: RunReport, path: str) -> None:
    rows = [{"split": s.split, "status": s.status, **s.metrics} for s in report.splits]
    pd.DataFrame(rows).to_csv(path, index=False)


def write_trace_csv(report: RunReport, path: str) -> None:
    rows = [{"split": s.split, **record} for s in report.splits for record in s.trace]
    columns = ["split", "iteration", "elbo", "wall_time", "phase"]
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False)


def write_predictions_csv(path: str, index, y_true, mean, var=None, task: str = "regression") -> None:
    """Columns: index, y_true, then pred_mean and pred_var, or p_class1 for classification."""
    frame = pd.DataFrame({"index": np.asarray(index), "y_true": np.asarray(y_true)})
    if task == "binary":
        frame["p_class1"] = np.asarray(mean)
    else:
        frame["pred_mean"] = np.asarray(mean)
        frame["pred_var"] = np.asarray(var)
    frame.to_csv(path, index=False)


def write_table_csv(rows: List[dict], path: str) -> None:
    pd.DataFrame(rows).to_csv(path, index=False)
