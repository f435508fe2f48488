"""Central finite-difference checks for the gradient engine."""

from dataclasses import dataclass, field
from typing import Callable, Dict

import numpy as np

from numerics import autodiff as ad

STEP = 1e-5
RTOL = 1e-4
ATOL = 1e-7


@dataclass
class GradCheckReport:
    """
    Outcome of a finite-difference comparison.

    Attributes:
        max_abs_error: Per-parameter largest |analytic - numeric|.
        failures: Per-parameter count of entries outside tolerance.
        checked: Per-parameter count of entries compared.
    """

    max_abs_error: Dict[str, float] = field(default_factory=dict)
    failures: Dict[str, int] = field(default_factory=dict)
    checked: Dict[str, int] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(count == 0 for count in self.failures.values())


def within_tolerance(analytic: float, numeric: float, rtol: float = RTOL, atol: float = ATOL) -> bool:
    """Relative or absolute agreement, whichever is looser."""
    err = abs(analytic - numeric)
    return err <= max(atol, rtol * max(abs(analytic), abs(numeric)))


def check_gradients(
    fn: Callable[[Dict[str, ad.GradVar]], ad.GradVar],
    params: Dict[str, np.ndarray],
    step: float = STEP,
    rtol: float = RTOL,
    atol: float = ATOL,
    max_entries: int = None,
    seed: int = 0,
) -> GradCheckReport:
    """
    Compares `backward` gradients of a scalar function with central differences.

    Args:
        fn: Maps a dict of GradVar leaves to a scalar GradVar. It must be
            deterministic (freeze any noise it uses).
        params: Values at which to check, by name.
        max_entries: If set, a seeded random subset of entries per parameter.

    Returns:
        A `GradCheckReport`.
    """
    leaves = {name: ad.parameter(value, name=name) for name, value in params.items()}
    analytic = ad.gradients(fn(leaves), leaves)
    rng = np.random.default_rng(seed)
    report = GradCheckReport()

    for name, value in params.items():
        value = np.asarray(value, dtype=np.float64)
        flat_indices = np.arange(value.size)
        if max_entries is not None and value.size > max_entries:
            flat_indices = rng.choice(value.size, size=max_entries, replace=False)

        worst, bad = 0.0, 0
        for flat in flat_indices:
            idx = np.unravel_index(flat, value.shape)
            numeric = _central_difference(fn, params, name, idx, step)
            a = float(analytic[name][idx])
            worst = max(worst, abs(a - numeric))
            if not within_tolerance(a, numeric, rtol, atol):
                bad += 1
        report.max_abs_error[name] = worst
        report.failures[name] = bad
        report.checked[name] = len(flat_indices)
    return report


def _central_difference(fn, params, name, idx, step) -> float:
    def evaluate(delta):
        shifted = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
        shifted[name][idx] += delta
        return float(fn({k: ad.GradVar(v) for k, v in shifted.items()}).value)

    return (evaluate(step) - evaluate(-step)) / (2.0 * step)
