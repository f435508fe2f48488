from kernels.field import (
    SpatioTemporalKernel,
    field_kernel_blocks,
    st_inducing_cholesky,
    st_inducing_covariance,
    st_kernel_cross,
)
from kernels.rbf import KernelParams, kernel_diag, kernel_matrix, rbf_ard

__all__ = [
    "KernelParams",
    "SpatioTemporalKernel",
    "field_kernel_blocks",
    "kernel_diag",
    "kernel_matrix",
    "rbf_ard",
    "st_inducing_cholesky",
    "st_inducing_covariance",
    "st_kernel_cross",
]
