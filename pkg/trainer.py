"""
Training loops: the flow-free warm start of the predictor and the joint fit
of the whole model, both maximizing their bound with Adam.
"""

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

import config
from errors import NumericError, TrainingAborted
from model import TRAIN_STREAM, DiffGPModel, bind, elbo, parameters, svgp_elbo
from numerics import autodiff as ad
from optimizer import Adam
from svgp import PredictorGP

logger = logging.getLogger(__name__)

# Seed word for minibatch selection, kept apart from the flow noise streams.
BATCH_STREAM = 7


@dataclass
class TrainConfig:
    """
    Attributes:
        learning_rate: Adam step size.
        n_iters: Joint training iterations.
        minibatch_size: Rows per step; None picks the default for the data size.
        eval_every: Trace (and log) every this many iterations.
        warmstart_iters: Flow-free predictor iterations run before the joint fit.
        seed: Root seed for minibatch selection.
    """

    learning_rate: float = config.LEARNING_RATE
    n_iters: int = config.TRAIN_ITERS
    minibatch_size: Optional[int] = None
    eval_every: int = config.EVAL_EVERY
    warmstart_iters: int = config.WARMSTART_ITERS
    seed: int = config.SEED

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.n_iters < 0 or self.warmstart_iters < 0:
            raise ValueError("iteration counts must be non-negative")
        if self.minibatch_size is not None and self.minibatch_size < 1:
            raise ValueError(f"minibatch_size must be at least 1, got {self.minibatch_size}")
        if self.eval_every < 1:
            raise ValueError(f"eval_every must be at least 1, got {self.eval_every}")

    def batch_size(self, n: int) -> int:
        if self.minibatch_size is None:
            size = config.MINIBATCH_SIZE if n > config.FULL_BATCH_LIMIT else n
        else:
            size = self.minibatch_size
        return min(size, n)


@dataclass
class TraceRecord:
    iteration: int
    elbo: float
    wall_time: float
    phase: str = "joint"


@dataclass
class TrainTrace:
    records: List[TraceRecord] = field(default_factory=list)

    def append(self, record: TraceRecord):
        self.records.append(record)

    @property
    def final_elbo(self) -> float:
        return self.records[-1].elbo if self.records else float("nan")

    def as_rows(self) -> List[dict]:
        return [dataclasses.asdict(r) for r in self.records]

    def __len__(self):
        return len(self.records)


@dataclass
class FitResult:
    model: DiffGPModel
    trace: TrainTrace
    optimizer: Adam
    iteration: int


def minibatch_indices(n: int, size: int, seed: int, iteration: int) -> np.ndarray:
    """Row indices for one step; the whole data set, in order, when size >= n."""
    if size >= n:
        return np.arange(n)
    rng = np.random.default_rng([seed, BATCH_STREAM, iteration])
    return np.sort(rng.choice(n, size=size, replace=False))


def _optimize(
    target,
    objective: Callable,
    X: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    n_iters: int,
    optimizer: Adam,
    trace: TrainTrace,
    phase: str,
    start_iteration: int = 0,
):
    """
    Runs `n_iters` Adam steps on -objective(target, X_batch, y_batch, scale, iteration)
    over the trainable arrays of `target`.

    Raises:
        TrainingAborted: On a numeric failure; carries the trace and the last finite target.
    """
    n = X.shape[0]
    size = cfg.batch_size(n)
    scale = n / size
    started = time.perf_counter()
    end = start_iteration + n_iters
    for it in range(start_iteration, end):
        idx = minibatch_indices(n, size, cfg.seed, it)
        leaves = {name: ad.parameter(value, name) for name, value in parameters(target).items()}
        try:
            loss = -objective(bind(target, leaves), X[idx], y[idx], scale, it)
            grads = ad.gradients(loss, leaves)
        except NumericError as exc:
            logger.error("%s training aborted at iteration %d: %s", phase, it, exc)
            raise TrainingAborted(
                f"{phase} training aborted at iteration {it}: {exc}",
                trace=trace,
                model=target,
                cause=exc,
            ) from exc
        values = optimizer.step({name: leaf.value for name, leaf in leaves.items()}, grads)
        target = bind(target, values)

        done = it + 1
        if done % cfg.eval_every == 0 or done == end:
            bound = -float(loss.value)
            trace.append(TraceRecord(done, bound, time.perf_counter() - started, phase))
            logger.info("%s iter %d/%d elbo %.4f", phase, done, end, bound)
    return target


def warmstart_sgp(data, predictor: PredictorGP, cfg: TrainConfig, trace: TrainTrace = None) -> PredictorGP:
    """
    Fits the predictor alone on the untransformed inputs (flow time zero) for
    `cfg.warmstart_iters` steps with a fresh optimizer.

    Args:
        data: Anything with standardized `X` [N x D] and `y` [N].
        trace: Optional trace the warm-start records are appended to.
    """
    if cfg.warmstart_iters == 0:
        return predictor
    trace = trace if trace is not None else TrainTrace()
    logger.info("Warm-starting the predictor for %d iterations", cfg.warmstart_iters)

    def objective(p, Xb, yb, scale, it):
        return svgp_elbo(p, Xb, yb, scale)

    return _optimize(
        predictor,
        objective,
        np.asarray(data.X, dtype=np.float64),
        np.asarray(data.y, dtype=np.float64),
        cfg,
        cfg.warmstart_iters,
        Adam(lr=cfg.learning_rate),
        trace,
        phase="warmstart",
    )


def fit(
    model: DiffGPModel,
    dataset,
    cfg: TrainConfig,
    optimizer: Adam = None,
    start_iteration: int = 0,
    trace: TrainTrace = None,
) -> FitResult:
    """
    Jointly optimizes every trainable array of the model against the ELBO.

    Minibatches and flow noise are derived from (seed, iteration), so a run
    resumed from a checkpoint with its optimizer state continues exactly.

    Args:
        dataset: Anything with standardized `X` [N x D] and `y` [N].
        optimizer: Adam to continue from; a fresh one otherwise.
        start_iteration: Iteration count already completed.

    Raises:
        TrainingAborted: On a non-finite state or gradient.
    """
    optimizer = optimizer or Adam(lr=cfg.learning_rate)
    trace = trace if trace is not None else TrainTrace()

    def objective(m, Xb, yb, scale, it):
        return elbo(m, Xb, yb, scale, stream=(TRAIN_STREAM, it))

    model = _optimize(
        model,
        objective,
        np.asarray(dataset.X, dtype=np.float64),
        np.asarray(dataset.y, dtype=np.float64),
        cfg,
        cfg.n_iters,
        optimizer,
        trace,
        phase="joint",
        start_iteration=start_iteration,
    )
    return FitResult(model=model, trace=trace, optimizer=optimizer, iteration=start_iteration + cfg.n_iters)
