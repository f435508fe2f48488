"""
Self-checks of the numerical machinery, run by `cli.py check`.

Each check builds a small seeded problem, compares the library against an
independent oracle and returns a `CheckResult`.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List

import numpy as np
from scipy import stats
from scipy.spatial.distance import pdist

from kernels.field import SpatioTemporalKernel, st_inducing_cholesky, st_inducing_covariance, st_kernel_cross
from kernels.rbf import KernelParams, rbf_ard
from model import bind, elbo, init_model, parameters
from numerics import autodiff as ad
from numerics.gradcheck import check_gradients
from sdeflow import FieldConditional, FlowConfig, InducingField, draw_path_noise, em_step, integrate
from svgp import VariationalGaussian, kl_gaussian

logger = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    passed: bool
    details: Dict[str, object] = field(default_factory=dict)
    seconds: float = 0.0


def _small_regression_model(n: int, d: int, M: int, flow: FlowConfig, seed: int):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    y = np.sin(X.sum(axis=1)) + 0.1 * rng.standard_normal(n)
    model = init_model(X, "regression", M=M, flow=flow, seed=seed)
    values = parameters(model)
    # move the variational means off zero so every gradient path is active
    values["field.q_u.mean"] = 0.3 * rng.standard_normal(values["field.q_u.mean"].shape)
    values["predictor.q_u.mean"] = rng.standard_normal(values["predictor.q_u.mean"].shape)
    values["field.kernel.spatial.log_signal_variance"] = np.array(np.log(0.1))
    return X, y, bind(model, values)


def check_elbo_gradients(seed: int = 0) -> CheckResult:
    """Finite-difference check of every ELBO gradient with frozen path noise (10 points, D=2, M=4)."""
    flow = FlowConfig(T=0.5, n_steps=5, n_samples=1, seed=seed)
    X, y, model = _small_regression_model(10, 2, 4, flow, seed)
    noise = draw_path_noise(flow, X.shape[0], X.shape[1], stream=(0,))
    report = check_gradients(lambda leaves: elbo(bind(model, leaves), X, y, noise=noise), parameters(model))
    return CheckResult(
        "elbo_gradients",
        report.passed,
        {"max_abs_error": report.max_abs_error, "failures": report.failures},
    )


def _rbf(A: np.ndarray, B: np.ndarray, lengthscales: np.ndarray, variance: float) -> np.ndarray:
    sq = (((A[:, None, :] - B[None, :, :]) / lengthscales) ** 2).sum(axis=2)
    return variance * np.exp(-0.5 * sq)


def dense_svgp_elbo(X, y, Z, lengthscales, variance, noise_variance, m, S) -> float:
    """Reference SVGP bound from explicit inverses and log-determinants."""
    Kzz = _rbf(Z, Z, lengthscales, variance)
    Kxz = _rbf(X, Z, lengthscales, variance)
    Kinv = np.linalg.inv(Kzz)
    Q = Kxz @ Kinv
    mean = Q @ m
    var = variance - np.einsum("ij,ij->i", Q, Kxz) + np.einsum("ij,jk,ik->i", Q, S, Q)
    expected = np.sum(
        -0.5 * np.log(2 * np.pi * noise_variance) - 0.5 * ((y - mean) ** 2 + var) / noise_variance
    )
    M = Z.shape[0]
    kl = 0.5 * (
        np.trace(Kinv @ S) + m @ Kinv @ m - M + np.linalg.slogdet(Kzz)[1] - np.linalg.slogdet(S)[1]
    )
    return float(expected - kl)


def check_zero_flow(seed: int = 0, atol: float = 1e-10) -> CheckResult:
    """With T = 0 the bound is the plain SVGP bound minus the flow KL."""
    flow = FlowConfig(T=0.0, seed=seed)
    X, y, model = _small_regression_model(20, 2, 5, flow, seed)
    p = model.predictor
    L = ad.value_of(p.q_u.factors()[0])
    reference = dense_svgp_elbo(
        X,
        y,
        ad.value_of(p.Z),
        np.exp(ad.value_of(p.kernel.log_lengthscales)),
        float(np.exp(ad.value_of(p.kernel.log_signal_variance))),
        float(np.exp(ad.value_of(p.likelihood.log_noise_variance))),
        ad.value_of(p.q_u.mean),
        L @ L.T,
    )
    field_kl = float(FieldConditional(model.field).kl().value)
    value = float(elbo(model, X, y).value)
    diff = abs(value - (reference - field_kl))
    return CheckResult(
        "zero_flow",
        diff <= atol * max(1.0, abs(reference)),
        {"elbo": value, "reference": reference - field_kl, "abs_diff": diff},
    )


def check_em_increments(n_draws: int = 100_000, seed: int = 0, n_se: float = 3.0) -> CheckResult:
    """Euler-Maruyama increments under a constant field are N(mu dt, sigma2 dt)."""
    mu = np.array([0.5, -1.0])
    sigma2 = np.array([0.2, 0.05])
    dt = 0.1
    rng = np.random.default_rng(seed)

    def constant_field(x, t):
        n = x.shape[0]
        return np.broadcast_to(mu, (n, 2)), np.broadcast_to(sigma2, (n, 2))

    x0 = np.zeros((n_draws, 2))
    increments = em_step(x0, 0.0, constant_field, dt, rng.standard_normal((n_draws, 2))).value - x0
    mean_err = np.abs(increments.mean(axis=0) - mu * dt)
    mean_se = np.sqrt(sigma2 * dt / n_draws)
    var_err = np.abs(increments.var(axis=0, ddof=1) - sigma2 * dt)
    var_se = sigma2 * dt * np.sqrt(2.0 / (n_draws - 1))
    passed = bool(np.all(mean_err <= n_se * mean_se) and np.all(var_err <= n_se * var_se))
    return CheckResult(
        "em_increments",
        passed,
        {"mean_error_in_se": (mean_err / mean_se).tolist(), "var_error_in_se": (var_err / var_se).tolist()},
    )


def check_kl_monte_carlo(
    n_instances: int = 5, M: int = 3, n_draws: int = 1_000_000, seed: int = 0, n_se: float = 3.0
) -> CheckResult:
    """Closed-form Gaussian KL against Monte Carlo estimates of E_q[log q - log p]."""
    rng = np.random.default_rng(seed)
    errors = []
    for _ in range(n_instances):
        A = rng.standard_normal((M, M))
        K = A @ A.T + 0.5 * np.eye(M)
        m = rng.standard_normal(M)
        L = np.tril(0.5 * rng.standard_normal((M, M)), k=-1) + np.diag(rng.uniform(0.3, 1.5, M))
        exact = float(kl_gaussian(VariationalGaussian.from_cholesky(m, L), K_zz=K).value)
        u = m + rng.standard_normal((n_draws, M)) @ L.T
        log_ratio = stats.multivariate_normal(m, L @ L.T).logpdf(u) - stats.multivariate_normal(
            np.zeros(M), K
        ).logpdf(u)
        se = log_ratio.std(ddof=1) / np.sqrt(n_draws)
        errors.append(abs(exact - log_ratio.mean()) / se)
    return CheckResult("kl_monte_carlo", bool(max(errors) <= n_se), {"error_in_se": errors})


def check_kronecker(seed: int = 0, atol: float = 1e-10) -> CheckResult:
    """Separable spatio-temporal covariances against explicit products of scalar kernels."""
    rng = np.random.default_rng(seed)
    Ms, Mt, N, D = 3, 2, 4, 2
    spatial = KernelParams(np.log(rng.uniform(0.5, 2.0, D)), np.array(np.log(1.3)))
    temporal = KernelParams(np.array([np.log(0.7)]), np.array(np.log(0.8)))
    k = SpatioTemporalKernel(spatial, temporal)
    Zs, Zt = rng.standard_normal((Ms, D)), np.linspace(0.0, 1.0, Mt).reshape(-1, 1)
    X, t = rng.standard_normal((N, D)), 0.3

    cross = np.array(
        [
            [rbf_ard(x, Zs[i], spatial) * rbf_ard([t], Zt[j], temporal) for i in range(Ms) for j in range(Mt)]
            for x in X
        ]
    )
    inducing = np.array(
        [
            [
                rbf_ard(Zs[i], Zs[i2], spatial) * rbf_ard(Zt[j], Zt[j2], temporal)
                for i2 in range(Ms)
                for j2 in range(Mt)
            ]
            for i in range(Ms)
            for j in range(Mt)
        ]
    )
    L = st_inducing_cholesky(Zs, Zt, k).value
    errors = {
        "cross": float(np.max(np.abs(st_kernel_cross(X, t, Zs, Zt, k).value - cross))),
        "inducing": float(np.max(np.abs(st_inducing_covariance(Zs, Zt, k).value - inducing))),
        "cholesky": float(np.max(np.abs(L @ L.T - inducing))),
    }
    return CheckResult("kronecker", all(e <= atol for e in errors.values()), errors)


def check_rank_preservation(seed: int = 0, max_condition: float = 1e6) -> CheckResult:
    """Distinct inputs stay distinct and the terminal cloud stays full rank under a weak random field."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((50, 2))
    flow = FlowConfig(T=1.0, n_steps=20, n_samples=1, seed=seed)
    inducing_field = InducingField.init(X[:10], flow)
    inducing_field.q_u = VariationalGaussian(
        0.1 * rng.standard_normal((10, 2)), inducing_field.q_u.sqrt_raw
    )
    X_T = integrate(X, inducing_field, flow, stream=(0,)).X_T[0]
    min_distance = float(np.min(pdist(X_T)))
    condition = float(np.linalg.cond(np.cov(X_T.T)))
    return CheckResult(
        "rank_preservation",
        min_distance > 0.0 and condition < max_condition,
        {"min_pairwise_distance": min_distance, "condition_number": condition},
    )


CHECKS: Dict[str, Callable[..., CheckResult]] = {
    "elbo_gradients": check_elbo_gradients,
    "zero_flow": check_zero_flow,
    "em_increments": check_em_increments,
    "kl_monte_carlo": check_kl_monte_carlo,
    "kronecker": check_kronecker,
    "rank_preservation": check_rank_preservation,
}


def run_checks(seed: int = 0, names: List[str] = None) -> List[CheckResult]:
    results = []
    for name in names or list(CHECKS):
        started = time.perf_counter()
        result = CHECKS[name](seed=seed)
        result.seconds = time.perf_counter() - started
        logger.info("check %s: %s (%.1fs)", name, "passed" if result.passed else "FAILED", result.seconds)
        results.append(result)
    return results
