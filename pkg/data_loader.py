import logging
import os
import re
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from sklearn.datasets import make_friedman1, make_moons
from sklearn.model_selection import train_test_split
from sklearn.preprocessing import StandardScaler

import config
from errors import ConfigError, DataError, EmptyDataset, ParseError

logger = logging.getLogger(__name__)

SYNTHETIC_PREFIX = "synthetic:"


@dataclass
class StandardizationRecord:
    """Per-column means and (population) standard deviations; zero spreads are stored as 1."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float = 0.0
    y_std: float = 1.0


@dataclass
class Dataset:
    """
    Attributes:
        X: [N x D] inputs.
        y: [N] targets; continuous, or {-1, +1} labels for the binary task.
        feature_names: One name per input column.
        task: "regression" or "binary".
        record: Standardization applied to X and y, None for raw data.
        dropped_rows: Rows discarded at ingestion for non-numeric values.
        index: Row positions in the source table.
    """

    X: np.ndarray
    y: np.ndarray
    feature_names: List[str]
    task: str = "regression"
    record: Optional[StandardizationRecord] = None
    dropped_rows: int = 0
    index: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.index is None:
            self.index = np.arange(len(self.y))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]


@dataclass
class SplitSpec:
    train_fraction: float = config.TRAIN_FRACTION
    seed: int = config.SEED
    repetition: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")


# --- CSV ---

def _labels_to_signs(y: np.ndarray) -> np.ndarray:
    values = set(np.unique(y).tolist())
    if values <= {0.0, 1.0}:
        return np.where(y > 0, 1.0, -1.0)
    if values <= {-1.0, 1.0}:
        return y.astype(np.float64)
    raise DataError(f"binary labels must be 0/1 or -1/+1, found {sorted(values)[:5]}")


def load_csv(path: str, target_col: int = -1, header: bool = True, task: str = "regression") -> Dataset:
    """
    Reads a numeric CSV table into a Dataset.

    Rows holding non-numeric, NaN or infinite values are dropped and counted.

    Args:
        path: The CSV file.
        target_col: Column holding y; negative values count from the end.
        header: Whether the first line names the columns.
        task: "regression", or "binary" to map 0/1 labels to -1/+1.

    Returns:
        The raw (unstandardized) Dataset.

    Raises:
        ConfigError: If the file does not exist or target_col is out of range.
        ParseError: If the table is ragged or has fewer than 2 columns.
        EmptyDataset: If fewer than 2 usable rows remain.
    """
    if not os.path.isfile(path):
        raise ConfigError(f"Data file not found: {path}", path=path)
    try:
        frame = pd.read_csv(path, header=0 if header else None, float_precision="round_trip")
    except pd.errors.EmptyDataError as exc:
        raise EmptyDataset(f"{path} is empty") from exc
    except pd.errors.ParserError as exc:
        match = re.search(r"line (\d+)", str(exc))
        raise ParseError(str(exc), int(match.group(1)) if match else 0) from exc

    if frame.shape[1] < 2:
        raise ParseError(f"need at least 2 columns, found {frame.shape[1]}", 1)
    ncols = frame.shape[1]
    if not -ncols <= target_col < ncols:
        raise ConfigError(f"target column {target_col} is out of range for {ncols} columns in {path}", path=path)

    numeric = frame.apply(lambda column: pd.to_numeric(column, errors="coerce"))
    values = numeric.to_numpy(dtype=np.float64)
    keep = np.all(np.isfinite(values), axis=1)
    dropped = int((~keep).sum())
    if dropped:
        logger.warning("Dropped %d of %d rows with non-numeric or non-finite values from %s", dropped, len(keep), path)
    values = values[keep]
    if values.shape[0] < 2:
        raise EmptyDataset(f"{path} has {values.shape[0]} usable rows, need at least 2")

    target = target_col % ncols
    names = [str(c) for c in frame.columns] if header else [f"x{j}" for j in range(values.shape[1])]
    y = values[:, target]
    if task == "binary":
        y = _labels_to_signs(y)
    return Dataset(
        X=np.delete(values, target, axis=1),
        y=y,
        feature_names=[n for j, n in enumerate(names) if j != target],
        task=task,
        dropped_rows=dropped,
        index=np.flatnonzero(keep),
    )


def write_csv(dataset: Dataset, path: str, target_name: str = "y") -> None:
    """Writes X then y as columns with a header row."""
    frame = pd.DataFrame(dataset.X, columns=dataset.feature_names)
    frame[target_name] = dataset.y
    frame.to_csv(path, index=False)


# --- Standardization and splitting ---

def _scale(scaler: StandardScaler) -> Tuple[np.ndarray, np.ndarray]:
    return scaler.mean_.copy(), scaler.scale_.copy()


def fit_standardization(dataset: Dataset) -> StandardizationRecord:
    """Column statistics of X, and of y for regression; labels are left alone."""
    x_mean, x_std = _scale(StandardScaler().fit(dataset.X))
    record = StandardizationRecord(x_mean=x_mean, x_std=x_std)
    if dataset.task == "regression":
        y_mean, y_std = _scale(StandardScaler().fit(dataset.y.reshape(-1, 1)))
        record.y_mean, record.y_std = float(y_mean[0]), float(y_std[0])
    return record


def apply_standardization(dataset: Dataset, record: StandardizationRecord) -> Dataset:
    return replace(
        dataset,
        X=(dataset.X - record.x_mean) / record.x_std,
        y=(dataset.y - record.y_mean) / record.y_std,
        record=record,
    )


def standardize(dataset: Dataset) -> Tuple[Dataset, StandardizationRecord]:
    record = fit_standardization(dataset)
    return apply_standardization(dataset, record), record


def destandardize(dataset: Dataset) -> Dataset:
    """Inverts the standardization recorded on `dataset`."""
    record = dataset.record
    if record is None:
        return dataset
    return replace(
        dataset,
        X=dataset.X * record.x_std + record.x_mean,
        y=dataset.y * record.y_std + record.y_mean,
        record=None,
    )


def _subset(dataset: Dataset, rows: np.ndarray) -> Dataset:
    return replace(dataset, X=dataset.X[rows], y=dataset.y[rows], index=dataset.index[rows])


def split(dataset: Dataset, spec: SplitSpec) -> Tuple[Dataset, Dataset]:
    """
    Seeded random train/test split of a raw dataset. Standardization is
    estimated on the training rows only and applied to both parts.
    """
    seed = int(np.random.SeedSequence([spec.seed, spec.repetition]).generate_state(1)[0])
    train_rows, test_rows = train_test_split(
        np.arange(dataset.n), train_size=spec.train_fraction, random_state=seed, shuffle=True
    )
    train, test = _subset(dataset, train_rows), _subset(dataset, test_rows)
    record = fit_standardization(train)
    return apply_standardization(train, record), apply_standardization(test, record)


# --- Synthetic data ---

def step_regions(x: np.ndarray, n_regions: int) -> np.ndarray:
    """Index of the equal-width region of [-1, 1] each x falls in."""
    x = np.asarray(x, dtype=np.float64).ravel()
    return np.clip(np.floor((x + 1.0) / 2.0 * n_regions), 0, n_regions - 1).astype(int)


def make_step_data(
    n: int = config.STEP_DEMO_POINTS,
    noise_sd: float = config.STEP_DEMO_NOISE,
    n_steps_in_signal: int = config.STEP_DEMO_REGIONS,
    seed: int = config.SEED,
) -> Dataset:
    """Piecewise-constant signal alternating 0/1 across equal-width regions of [-1, 1], plus noise."""
    if n < 10:
        raise ValueError(f"step data needs n >= 10, got {n}")
    if n_steps_in_signal < 1:
        raise ValueError("n_steps_in_signal must be at least 1")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(n, 1))
    levels = (step_regions(x, n_steps_in_signal) % 2).astype(np.float64)
    y = levels + noise_sd * rng.standard_normal(n) if noise_sd > 0 else levels
    return Dataset(X=x, y=y, feature_names=["x"], task="regression")


def make_two_moons(n: int = 2000, noise: float = 0.1, seed: int = config.SEED) -> Dataset:
    X, labels = make_moons(n_samples=n, noise=noise, random_state=seed)
    return Dataset(X=X, y=np.where(labels > 0, 1.0, -1.0), feature_names=["x1", "x2"], task="binary")


def make_concrete_like(n: int = 1030, noise: float = 1.0, seed: int = config.SEED) -> Dataset:
    """Eight-feature Friedman regression surrogate, sized like the concrete data set."""
    X, y = make_friedman1(n_samples=n, n_features=8, noise=noise, random_state=seed)
    return Dataset(X=X, y=y, feature_names=[f"x{j + 1}" for j in range(8)], task="regression")


class DataLoader:
    """
    Resolves a data source string to a raw Dataset.

    Sources are CSV paths or `synthetic:<name>` with name one of `step`,
    `moons` or `concrete-like`.

    Attributes:
        dispatch (dict): File extension to loader.
        synthetic (dict): Generator name to generator.
    """

    def __init__(
        self,
        target_col: int = -1,
        header: bool = True,
        task: str = "regression",
        n_points: int = None,
        noise: float = None,
        seed: int = config.SEED,
    ):
        self.target_col = target_col
        self.header = header
        self.task = task
        self.n_points = n_points
        self.noise = noise
        self.seed = seed
        self.dispatch = {".csv": self._load_csv}
        self.synthetic = {
            "step": self._step,
            "moons": self._moons,
            "concrete-like": self._concrete_like,
        }

    def _load_csv(self, path: str) -> Dataset:
        return load_csv(path, self.target_col, self.header, self.task)

    def _kwargs(self, noise_name: str) -> dict:
        kwargs = {"seed": self.seed}
        if self.n_points is not None:
            kwargs["n"] = self.n_points
        if self.noise is not None:
            kwargs[noise_name] = self.noise
        return kwargs

    def _step(self) -> Dataset:
        return make_step_data(**self._kwargs("noise_sd"))

    def _moons(self) -> Dataset:
        return make_two_moons(**self._kwargs("noise"))

    def _concrete_like(self) -> Dataset:
        return make_concrete_like(**self._kwargs("noise"))

    def load(self, source: str) -> Dataset:
        """
        Raises:
            ConfigError: For an unknown generator, an unsupported extension or
                a missing file.
        """
        if source.startswith(SYNTHETIC_PREFIX):
            name = source[len(SYNTHETIC_PREFIX):]
            generator = self.synthetic.get(name)
            if generator is None:
                raise ConfigError(f"Unknown synthetic dataset {name!r}; choose from {sorted(self.synthetic)}")
            dataset = generator()
        else:
            loader = self.dispatch.get(os.path.splitext(source)[1].lower())
            if loader is None:
                raise ConfigError(f"Unsupported data source: {source}", path=source)
            dataset = loader(source)
        logger.info("Loaded %d rows with %d inputs from %s", dataset.n, dataset.input_dim, source)
        return dataset
