"""
The variational SDE flow.

Drift and diffusion of the flow are the marginal mean and (diagonal) variance
of the flow GP's variational posterior. Input batches are pushed through the
SDE with Euler-Maruyama; every step stays in the gradient graph so the
objective can be differentiated pathwise with the noise held fixed.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

import config
from errors import NonFiniteState, NonFiniteValue
from kernels.field import SpatioTemporalKernel, st_inducing_cholesky, st_kernel_cross
from kernels.rbf import KernelParams, kernel_matrix
from numerics import autodiff as ad
from numerics import linalg
from svgp import VariationalGaussian, conditional_marginals, kl_gaussian

# A field maps (states [N x D], time) to (drift [N x D], diagonal diffusion [N x D]).
VectorField = Callable[["ad.GradVar", float], Tuple["ad.ArrayLike", "ad.ArrayLike"]]


@dataclass
class FlowConfig:
    """
    Attributes:
        T: Flow time; T = 0 means no warping.
        n_steps: Euler-Maruyama steps over [0, T].
        n_samples: Monte Carlo paths per input.
        seed: Root seed of the per-path noise streams.
    """

    T: float = config.FLOW_TIME
    n_steps: int = config.EM_STEPS
    n_samples: int = config.TRAIN_SAMPLES
    seed: int = config.SEED

    def __post_init__(self):
        if self.T < 0:
            raise ValueError(f"flow time must be non-negative, got {self.T}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be at least 1, got {self.n_steps}")
        if self.n_samples < 1:
            raise ValueError(f"n_samples must be at least 1, got {self.n_samples}")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps


@dataclass
class InducingField:
    """
    Sparse GP over the vector field f: R^D -> R^D.

    Attributes:
        Z: [M x D] spatial inducing states.
        q_u: q(U_f); mean has M rows (M*Mt with temporal inducing times) and D
            columns, with one factor per output dimension.
        kernel: Shared kernel of all D outputs.
        Z_t: Optional [Mt x 1] temporal inducing times (not optimized).
    """

    Z: "ad.ArrayLike"
    q_u: VariationalGaussian
    kernel: SpatioTemporalKernel
    Z_t: Optional[np.ndarray] = field(default=None, metadata={"trainable": False})

    def __post_init__(self):
        m, d = ad.value_of(self.Z).shape
        rows = m * (1 if self.Z_t is None else len(self.Z_t))
        mean_shape = ad.value_of(self.q_u.mean).shape
        if mean_shape != (rows, d):
            raise ValueError(f"q(U_f) mean has shape {mean_shape}, expected {(rows, d)}")
        if (self.Z_t is None) == self.kernel.is_temporal:
            raise ValueError("temporal inducing times and a temporal kernel go together")

    @property
    def state_dim(self) -> int:
        return ad.value_of(self.Z).shape[1]

    @classmethod
    def init(
        cls,
        Z: np.ndarray,
        flow: FlowConfig,
        n_temporal: int = None,
        variance: float = config.FIELD_VARIANCE_INIT,
        sqrt_scale: float = config.FIELD_SQRT_SCALE,
    ) -> "InducingField":
        """
        A weak initial field: zero mean and q covariance (sqrt_scale^2) K_ZZ.

        With `n_temporal`, that many inducing times are spread evenly over
        [0, T] and a temporal RBF kernel is added.
        """
        Z = np.asarray(Z, dtype=np.float64)
        m, d = Z.shape
        spatial = KernelParams.init(d, variance=variance)
        K = kernel_matrix(Z, Z, spatial).value
        Z_t, temporal = None, None
        if n_temporal:
            span = flow.T if flow.T > 0 else 1.0
            Z_t = np.linspace(0.0, span, n_temporal).reshape(-1, 1)
            spacing = span / (n_temporal - 1) if n_temporal > 1 else span
            temporal = KernelParams.init(1, lengthscale=spacing, variance=config.TEMPORAL_VARIANCE_INIT)
            K = linalg.kron(K, kernel_matrix(Z_t, Z_t, temporal).value)
        L, _ = linalg.cholesky_psd(K)
        q_u = VariationalGaussian.from_cholesky(
            np.zeros((K.shape[0], d)), np.stack([sqrt_scale * L] * d)
        )
        return cls(Z=Z, q_u=q_u, kernel=SpatioTemporalKernel(spatial, temporal), Z_t=Z_t)


class FieldConditional:
    """
    The flow field with its inducing covariance factorized once.

    Build one per loss evaluation and call it at every Euler-Maruyama step.
    In the temporal case chol(K_s kron K_t) is formed as chol(K_s) kron chol(K_t).
    """

    def __init__(self, inducing_field: InducingField):
        self.field = inducing_field
        kernel = inducing_field.kernel
        if kernel.is_temporal:
            self.chol = st_inducing_cholesky(inducing_field.Z, inducing_field.Z_t, kernel)
        else:
            self.chol = ad.cholesky(kernel_matrix(inducing_field.Z, inducing_field.Z, kernel.spatial))
        self.q_mean = inducing_field.q_u.mean_matrix()
        self.q_factors = inducing_field.q_u.factors()
        self.prior_variance = kernel.prior_variance()

    def __call__(self, x: "ad.ArrayLike", t: float):
        x = ad.lift(x)
        kernel = self.field.kernel
        if kernel.is_temporal:
            Kzx = ad.transpose(st_kernel_cross(x, t, self.field.Z, self.field.Z_t, kernel))
        else:
            Kzx = kernel_matrix(self.field.Z, x, kernel.spatial)
        kxx = ad.broadcast_to(self.prior_variance, (x.shape[0],))
        drift, diffusion = conditional_marginals(Kzx, kxx, self.chol, self.q_mean, self.q_factors)
        return drift, ad.variance_floor(diffusion)

    def kl(self) -> "ad.GradVar":
        """KL[q(U_f) || p(U_f)] summed over the D outputs."""
        return kl_gaussian(self.field.q_u, chol=self.chol)


@dataclass
class TrajectoryBatch:
    """
    Sampled Euler-Maruyama paths.

    Attributes:
        states: [S x (n_steps+1) x N x D] path states; states[:, 0] is the input.
        times: The time grid.
        terminal: Per path, the differentiable terminal states [N x D].
    """

    states: np.ndarray
    times: np.ndarray
    terminal: List["ad.GradVar"]

    @property
    def X_T(self) -> np.ndarray:
        return self.states[:, -1]

    @property
    def n_samples(self) -> int:
        return self.states.shape[0]


def field_posterior(x_batch, t: float, inducing_field: InducingField):
    """Drift [N x D] and floored diagonal diffusion [N x D] of the variational SDE at (x, t)."""
    return FieldConditional(inducing_field)(x_batch, t)


def time_grid(cfg: FlowConfig) -> np.ndarray:
    """Equidistant grid 0..T inclusive; just [0] when T = 0."""
    if cfg.T == 0:
        return np.zeros(1)
    return np.arange(cfg.n_steps + 1) * cfg.dt


def _check_state(values: np.ndarray, step: int, t: float):
    if not np.all(np.isfinite(values)) or np.max(np.abs(values), initial=0.0) > config.STATE_BOUND:
        raise NonFiniteState(
            f"SDE state left the bounded region at step {step} (t={t:.4g}); "
            "the flow field is exploding.",
            step=step,
            time=t,
        )


def em_step(x, t: float, vector_field: VectorField, dt: float, noise: np.ndarray, step: int = -1):
    """
    One Euler-Maruyama step with diagonal diffusion:
    x + drift dt + sqrt(diffusion) sqrt(dt) noise.

    Raises:
        NonFiniteState: If the new state is non-finite or beyond the state bound.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    try:
        drift, diffusion = vector_field(x, t)
        increment = ad.lift(drift) * dt + ad.sqrt(diffusion) * (np.sqrt(dt) * np.asarray(noise))
        x_next = ad.lift(x) + increment
    except NonFiniteValue as exc:
        raise NonFiniteState(f"Non-finite SDE state at step {step} (t={t:.4g}).", step=step, time=t) from exc
    _check_state(x_next.value, step, t)
    return x_next


def draw_path_noise(cfg: FlowConfig, n: int, d: int, stream: Sequence[int] = ()) -> np.ndarray:
    """
    Standard normal increments [S x n_steps x N x D]; path s draws from its own
    stream seeded by (seed, *stream, s).
    """
    return np.stack(
        [
            np.random.default_rng([cfg.seed, *stream, s]).standard_normal((cfg.n_steps, n, d))
            for s in range(cfg.n_samples)
        ]
    )


def integrate(
    x0,
    vector_field: Union[InducingField, VectorField],
    cfg: FlowConfig,
    noise: np.ndarray = None,
    stream: Sequence[int] = (),
) -> TrajectoryBatch:
    """
    Simulates `cfg.n_samples` Euler-Maruyama paths from x0 [N x D].

    Args:
        vector_field: An `InducingField` or any callable (x, t) -> (drift, diffusion).
        noise: Optional fixed draws [S x n_steps x N x D]; drawn from the
            per-path streams when omitted.
        stream: Extra seed words distinguishing independent uses of the flow.

    Raises:
        NonFiniteState: If a path explodes.
    """
    if isinstance(vector_field, InducingField):
        vector_field = FieldConditional(vector_field)
    x0 = ad.lift(x0)
    n, d = x0.shape
    grid = time_grid(cfg)
    S = cfg.n_samples

    if len(grid) == 1:
        states = np.broadcast_to(x0.value, (S, 1, n, d)).copy()
        return TrajectoryBatch(states=states, times=grid, terminal=[x0] * S)

    if noise is None:
        noise = draw_path_noise(cfg, n, d, stream)
    expected = (S, cfg.n_steps, n, d)
    if noise.shape != expected:
        raise ValueError(f"noise has shape {noise.shape}, expected {expected}")

    dt = cfg.dt
    states = np.empty((S, cfg.n_steps + 1, n, d))
    states[:, 0] = x0.value
    terminal = []
    for s in range(S):
        x = x0
        for k in range(cfg.n_steps):
            x = em_step(x, grid[k], vector_field, dt, noise[s, k], step=k)
            states[s, k + 1] = x.value
        terminal.append(x)
    return TrajectoryBatch(states=states, times=grid, terminal=terminal)


def write_trajectories_csv(batch: TrajectoryBatch, path: str) -> int:
    """
    Writes one row per (sample, point, step): s, i, k, t, x_1..x_D.

    Returns:
        The number of rows written.
    """
    S, K, N, D = batch.states.shape
    s_idx, k_idx, i_idx = np.meshgrid(np.arange(S), np.arange(K), np.arange(N), indexing="ij")
    # reorder to (s, i, k) so each path reads top to bottom
    order = np.transpose(np.arange(S * K * N).reshape(S, K, N), (0, 2, 1)).ravel()
    states = batch.states.reshape(S * K * N, D)[order]
    frame = pd.DataFrame(
        {
            "s": s_idx.ravel()[order],
            "i": i_idx.ravel()[order],
            "k": k_idx.ravel()[order],
            "t": batch.times[k_idx.ravel()[order]],
        }
    )
    for j in range(D):
        frame[f"x_{j + 1}"] = states[:, j]
    frame.to_csv(path, index=False)
    return len(frame)
