import dataclasses
import json
import logging
import os
from typing import Dict, Optional, Tuple

import numpy as np

import config
from errors import ConfigError
from kernels.field import SpatioTemporalKernel
from kernels.rbf import KernelParams
from likelihoods import Bernoulli, Gaussian
from model import DiffGPModel, parameters
from optimizer import Adam, AdamState
from sdeflow import FlowConfig, InducingField
from svgp import PredictorGP, VariationalGaussian
from trainer import TrainConfig

logger = logging.getLogger(__name__)


def _encode(array) -> dict:
    array = np.asarray(array, dtype=np.float64)
    return {"shape": list(array.shape), "values": array.ravel().tolist()}


def _decode(entry: dict) -> np.ndarray:
    return np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])


def _kernel(P: Dict[str, np.ndarray], prefix: str) -> KernelParams:
    return KernelParams(P[f"{prefix}.log_lengthscales"], P[f"{prefix}.log_signal_variance"])


def _q(P: Dict[str, np.ndarray], prefix: str) -> VariationalGaussian:
    return VariationalGaussian(P[f"{prefix}.mean"], P[f"{prefix}.sqrt_raw"])


def model_from_parameters(P: Dict[str, np.ndarray], structure: dict, flow: FlowConfig) -> DiffGPModel:
    """Rebuilds a model from its named arrays (frozen ones included)."""
    if structure["likelihood"] == "gaussian":
        likelihood = Gaussian(P["predictor.likelihood.log_noise_variance"])
    else:
        likelihood = Bernoulli(n_quad=structure["n_quad"])
    temporal = _kernel(P, "field.kernel.temporal") if structure["temporal"] else None
    return DiffGPModel(
        field=InducingField(
            Z=P["field.Z"],
            q_u=_q(P, "field.q_u"),
            kernel=SpatioTemporalKernel(_kernel(P, "field.kernel.spatial"), temporal),
            Z_t=P.get("field.Z_t"),
        ),
        predictor=PredictorGP(
            Z=P["predictor.Z"],
            q_u=_q(P, "predictor.q_u"),
            kernel=_kernel(P, "predictor.kernel"),
            likelihood=likelihood,
        ),
        flow=flow,
    )


class CheckpointManager:
    """
    Persists and restores training state as a single JSON document.

    A checkpoint holds every parameter array (shape plus row-major values),
    the model structure, flow and training configuration, the iteration
    count and the Adam state, so a resumed fit continues exactly where the
    saved one stopped.

    Attributes:
        persist_directory (str): Directory the checkpoint file lives in.
        path (str): Full path of the checkpoint file.
    """

    def __init__(self, persist_directory: str = config.OUTPUT_DIR, filename: str = config.CHECKPOINT_FILE):
        self.persist_directory = persist_directory
        self.path = os.path.join(persist_directory, filename)

    def save(
        self,
        model: DiffGPModel,
        train_cfg: TrainConfig,
        iteration: int,
        optimizer: Optional[Adam] = None,
    ) -> str:
        """
        Writes the checkpoint, replacing any previous one.

        Returns:
            The path written.
        """
        os.makedirs(self.persist_directory, exist_ok=True)
        likelihood = model.predictor.likelihood
        document = {
            "version": config.VERSION,
            "iteration": int(iteration),
            "seed": model.flow.seed,
            "structure": {
                "likelihood": "gaussian" if isinstance(likelihood, Gaussian) else "bernoulli",
                "n_quad": getattr(likelihood, "n_quad", config.N_QUAD),
                "temporal": model.field.kernel.is_temporal,
            },
            "flow": dataclasses.asdict(model.flow),
            "train": dataclasses.asdict(train_cfg),
            "parameters": {
                name: _encode(value) for name, value in parameters(model, include_frozen=True).items()
            },
        }
        if optimizer is not None:
            document["optimizer"] = {
                "lr": optimizer.lr,
                "beta1": optimizer.beta1,
                "beta2": optimizer.beta2,
                "epsilon": optimizer.epsilon,
                "step": optimizer.state.step,
                "m": {k: _encode(a) for k, a in optimizer.state.m.items()},
                "v": {k: _encode(a) for k, a in optimizer.state.v.items()},
            }
        with open(self.path, "w", encoding="utf-8") as f:
            json.dump(document, f)
        logger.info("Checkpoint for iteration %d saved to %s", iteration, self.path)
        return self.path

    def load(self) -> Tuple[DiffGPModel, TrainConfig, int, Optional[Adam]]:
        """
        Restores (model, train config, iteration, optimizer).

        Raises:
            ConfigError: If there is no checkpoint or it cannot be read.
        """
        if not os.path.exists(self.path):
            raise ConfigError(f"Checkpoint not found: {self.path}", path=self.path)
        try:
            with open(self.path, encoding="utf-8") as f:
                document = json.load(f)
            P = {name: _decode(entry) for name, entry in document["parameters"].items()}
            model = model_from_parameters(P, document["structure"], FlowConfig(**document["flow"]))
            train_cfg = TrainConfig(**document["train"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"Unreadable checkpoint {self.path}: {exc}", path=self.path) from exc

        optimizer = None
        if "optimizer" in document:
            saved = document["optimizer"]
            state = AdamState(
                step=saved["step"],
                m={k: _decode(e) for k, e in saved["m"].items()},
                v={k: _decode(e) for k, e in saved["v"].items()},
            )
            optimizer = Adam(saved["lr"], saved["beta1"], saved["beta2"], saved["epsilon"], state=state)
        return model, train_cfg, document["iteration"], optimizer
