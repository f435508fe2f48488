import json
import os

import numpy as np
import pytest

from data_loader import Dataset, standardize
from kernels.rbf import KernelParams, rbf_ard
from likelihoods import expected_bernoulli_loglik, expected_gaussian_loglik
from metrics import auc, rmse
from numerics.linalg import cholesky_psd
from optimizer import AdamState, adam_step
from sdeflow import FlowConfig, time_grid
from svgp import VariationalGaussian, kl_gaussian

GOLDEN_PATH = os.path.join(os.path.dirname(__file__), "golden_values.json")


def load_golden_values():
    with open(GOLDEN_PATH, "r") as f:
        return json.load(f)


def _cholesky(case):
    L, _ = cholesky_psd(np.array(case["input"]))
    return L


def _rbf(case):
    i = case["input"]
    p = KernelParams(np.log(i["lengthscales"]), np.array(np.log(i["variance"])))
    return rbf_ard(i["x"], i["x2"], p)


def _gaussian_loglik(case):
    i = case["input"]
    return expected_gaussian_loglik(
        np.array([i["y"]]), np.array([i["mean"]]), np.array([i["var"]]), i["noise_variance"]
    ).value[0]


def _bernoulli_loglik(case):
    i = case["input"]
    return expected_bernoulli_loglik(np.array([i["y"]]), np.array([i["mean"]]), np.array([i["var"]])).value[0]


def _adam(case):
    i = case["input"]
    params, _ = adam_step({"p": np.array(i["p"])}, {"p": np.array(i["g"])}, AdamState(), lr=i["lr"])
    return params["p"]


def _kl(case):
    i = case["input"]
    q = VariationalGaussian.from_cholesky(np.array(i["mean"]), np.array(i["L"]))
    return kl_gaussian(q, K_zz=np.array(i["K"])).value


def _standardize(case):
    x = np.array(case["input"]).reshape(-1, 1)
    standardized, _ = standardize(Dataset(X=x, y=np.zeros(len(x)), feature_names=["x"]))
    return standardized.X[:, 0]


def _time_grid(case):
    return time_grid(FlowConfig(T=case["input"]["T"], n_steps=case["input"]["n_steps"]))


EVALUATORS = {
    "cholesky": _cholesky,
    "rbf": _rbf,
    "gaussian_loglik": _gaussian_loglik,
    "bernoulli_loglik": _bernoulli_loglik,
    "adam": _adam,
    "kl": _kl,
    "standardize": _standardize,
    "time_grid": _time_grid,
    "rmse": lambda case: rmse(case["input"]["y"], case["input"]["pred"]),
    "auc": lambda case: auc(case["input"]["labels"], case["input"]["scores"]),
}


# One test run per hand-derived oracle value in golden_values.json.
@pytest.mark.parametrize("case", load_golden_values(), ids=lambda case: case["name"])
def test_golden_value(case):
    actual = EVALUATORS[case["kind"]](case)
    np.testing.assert_allclose(actual, case["expected"], rtol=0.0, atol=case["tol"])
