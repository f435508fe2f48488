"""
Kernels of the flow field: the matrix-valued field kernel and its separable
spatio-temporal extension.

Output dimensions are independent and share one scalar kernel, so the
[MD x MD] inducing block matrix is I_D kron K_ZZ and never needs to be formed.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from kernels.rbf import KernelParams, kernel_matrix
from numerics import autodiff as ad
from numerics import linalg


@dataclass
class SpatioTemporalKernel:
    """
    K((x, t), (x', t')) = K_s(x, x') k_t(t, t'); without a temporal part the
    field is time independent.
    """

    spatial: KernelParams
    temporal: Optional[KernelParams] = None

    @property
    def is_temporal(self) -> bool:
        return self.temporal is not None

    def prior_variance(self) -> "ad.GradVar":
        variance = self.spatial.signal_variance()
        if self.temporal is not None:
            variance = variance * self.temporal.signal_variance()
        return variance


def field_kernel_blocks(X: "ad.ArrayLike", Z: "ad.ArrayLike", p: KernelParams) -> Tuple["ad.GradVar", "ad.GradVar"]:
    """Scalar blocks (K_XZ, K_ZZ) of the independent-output field kernel."""
    return kernel_matrix(X, Z, p), kernel_matrix(Z, Z, p)


def materialize_block_kernel(K: "ad.ArrayLike", output_dim: int) -> "ad.GradVar":
    """The explicit I_D kron K matrix; only used to cross-check block computations."""
    return ad.kron(np.eye(output_dim), K)


def st_kernel_cross(
    X: "ad.ArrayLike",
    t: float,
    Zs: "ad.ArrayLike",
    Zt: "ad.ArrayLike",
    k: SpatioTemporalKernel,
) -> "ad.GradVar":
    """
    Cross covariance C_xZ between states at time t and the spatio-temporal
    inducing grid: row-wise K_xZs kron k_tZt, shape [N x (Ms*Mt)].
    Column index is i*Mt + j for spatial point i and inducing time j.
    """
    if k.temporal is None:
        raise ValueError("st_kernel_cross needs a temporal kernel")
    Kx = kernel_matrix(X, Zs, k.spatial)
    kt = kernel_matrix(np.array([[float(t)]]), Zt, k.temporal)
    n, ms = Kx.shape
    mt = kt.shape[1]
    rows = ad.reshape(Kx, (n, ms, 1)) * ad.reshape(kt, (1, 1, mt))
    return ad.reshape(rows, (n, ms * mt))


def st_inducing_covariance(Zs: "ad.ArrayLike", Zt: "ad.ArrayLike", k: SpatioTemporalKernel) -> "ad.GradVar":
    """
    C_ZZ = (K_s + eps_s I) kron (K_t + eps_t I), where eps_s and eps_t are the
    jitters `cholesky_psd` needs for each factor (zero when both are positive
    definite). st_inducing_cholesky is the exact Cholesky factor of this matrix.
    """
    Ks = kernel_matrix(Zs, Zs, k.spatial)
    Kt = kernel_matrix(Zt, Zt, k.temporal)
    _, eps_s = linalg.cholesky_psd(Ks.value)
    _, eps_t = linalg.cholesky_psd(Kt.value)
    return ad.kron(Ks + eps_s * np.eye(Ks.shape[0]), Kt + eps_t * np.eye(Kt.shape[0]))


def st_inducing_cholesky(Zs: "ad.ArrayLike", Zt: "ad.ArrayLike", k: SpatioTemporalKernel) -> "ad.GradVar":
    """
    chol(K_s kron K_t) = chol(K_s) kron chol(K_t). Jitter goes on each factor,
    so with jitter this is chol of st_inducing_covariance, not of K_s kron K_t + eps I.
    """
    Ls = ad.cholesky(kernel_matrix(Zs, Zs, k.spatial))
    Lt = ad.cholesky(kernel_matrix(Zt, Zt, k.temporal))
    return ad.kron(Ls, Lt)
