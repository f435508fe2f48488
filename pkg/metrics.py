"""
Test metrics. Predictions carry one row per flow sample; each metric is
computed per sample and then averaged over samples.
"""

import logging
from typing import Dict

import numpy as np
from scipy import stats
from scipy.special import logsumexp

import config

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


def rmse(y_true, y_pred) -> float:
    y_true, y_pred = np.asarray(y_true, dtype=np.float64), np.asarray(y_pred, dtype=np.float64)
    return float(np.sqrt(np.mean((y_true - y_pred) ** 2)))


def auc(labels, scores) -> float:
    """
    Area under the ROC curve as the Mann-Whitney rank statistic, with ties
    sharing their mid-rank.

    Raises:
        ValueError: If only one class is present.
    """
    labels = np.asarray(labels) > 0
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes in y_true")
    ranks = stats.rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def region_gap(positions, regions) -> float:
    """
    Smallest separation between neighbouring regions along a 1-D coordinate:
    min over boundaries b of (min of region b+1) - (max of region b).
    Positive when every region sits strictly above the one before it.
    Empty regions are skipped.
    """
    positions = np.asarray(positions, dtype=np.float64).ravel()
    regions = np.asarray(regions).ravel()
    present = [r for r in np.unique(regions)]
    gaps = [
        positions[regions == upper].min() - positions[regions == lower].max()
        for lower, upper in zip(present[:-1], present[1:])
    ]
    return float(min(gaps)) if gaps else float("nan")


def gaussian_logpdf(y, mean, var) -> np.ndarray:
    return -0.5 * (LOG_2PI + np.log(var) + (y - mean) ** 2 / var)


def _regression(y, mean, var, record, mixture: bool) -> Dict[str, float]:
    y_mean = getattr(record, "y_mean", 0.0) if record is not None else 0.0
    y_std = getattr(record, "y_std", 1.0) if record is not None else 1.0
    mean = mean * y_std + y_mean
    var = np.maximum(var, config.VARIANCE_FLOOR) * y_std ** 2
    logpdf = gaussian_logpdf(y[None, :], mean, var)
    if mixture:
        loglik = float(np.mean(logsumexp(logpdf, axis=0) - np.log(mean.shape[0])))
    else:
        loglik = float(np.mean(logpdf))
    return {
        "rmse": float(np.mean([rmse(y, m) for m in mean])),
        "loglik": loglik,
    }


def _binary(y, p, mixture: bool) -> Dict[str, float]:
    positive = y > 0
    if positive.all() or not positive.any():
        logger.warning("Only one class among %d targets; AUC is undefined", y.size)
        area = float("nan")
    else:
        area = float(np.mean([auc(positive, ps) for ps in p]))
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    if mixture:
        p_bar = p.mean(axis=0)
        loglik = float(np.mean(np.where(positive, np.log(p_bar), np.log1p(-p_bar))))
    else:
        loglik = float(np.mean(np.where(positive[None, :], np.log(p), np.log1p(-p))))
    return {
        "auc": area,
        "accuracy": float(np.mean((p > 0.5) == positive[None, :])),
        "loglik": loglik,
    }


def metrics(y_true, prediction, task: str, record=None, mixture: bool = False) -> Dict[str, float]:
    """
    Scores a prediction against targets in original units.

    Args:
        y_true: [N] targets; regression targets are de-standardized, labels
            are {-1, +1} or {0, 1}.
        prediction: A `model.Prediction` (per-sample [S x N] summaries).
        task: "regression" or "binary".
        record: Standardization record with `y_mean`/`y_std` used to bring
            regression predictions back to original units.
        mixture: Score the log-likelihood of the mixture over samples instead
            of averaging per-sample log-likelihoods.

    Returns:
        {"rmse", "loglik"} for regression, {"auc", "accuracy", "loglik"} for binary.
    """
    y = np.asarray(y_true, dtype=np.float64).ravel()
    y_mean = np.atleast_2d(prediction.y_mean)
    if y_mean.shape[1] != y.shape[0]:
        raise ValueError(f"{y.shape[0]} targets but predictions for {y_mean.shape[1]} points")
    if task == "regression":
        return _regression(y, y_mean, np.atleast_2d(prediction.y_var), record, mixture)
    if task == "binary":
        return _binary(y, y_mean, mixture)
    raise ValueError(f"unknown task {task!r}")
