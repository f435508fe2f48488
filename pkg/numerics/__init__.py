from numerics.autodiff import GradVar, backward, gradients, parameter
from numerics.linalg import cholesky_psd, kron, solve_triangular

__all__ = [
    "GradVar",
    "backward",
    "gradients",
    "parameter",
    "cholesky_psd",
    "kron",
    "solve_triangular",
]
