"""Adam over named parameter arrays."""

from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

import config


@dataclass
class AdamState:
    """Step counter and per-parameter first/second moment estimates."""

    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "AdamState":
        return AdamState(
            step=self.step,
            m={k: a.copy() for k, a in self.m.items()},
            v={k: a.copy() for k, a in self.v.items()},
        )


def adam_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    state: AdamState,
    lr: float = config.LEARNING_RATE,
    beta1: float = config.ADAM_BETA1,
    beta2: float = config.ADAM_BETA2,
    epsilon: float = config.ADAM_EPSILON,
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """
    One bias-corrected Adam descent step. Inputs are not modified.

    Args:
        params: Named parameter arrays.
        grads: Gradients of the loss, same names and shapes as `params`.
        state: Moments from the previous step.

    Returns:
        The updated parameters and a new state.

    Raises:
        ValueError: If a gradient is missing or its shape differs from its parameter.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    new_state = state.copy()
    new_state.step += 1
    t = new_state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t

    updated = {}
    for name, p in params.items():
        if name not in grads:
            raise ValueError(f"no gradient for parameter {name!r}")
        g = np.asarray(grads[name], dtype=np.float64)
        p = np.asarray(p, dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name!r} {p.shape}")
        m = new_state.m.get(name, np.zeros_like(p))
        v = new_state.v.get(name, np.zeros_like(p))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        new_state.m[name], new_state.v[name] = m, v
        updated[name] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + epsilon)
    return updated, new_state


class Adam:
    """Stateful wrapper around `adam_step`."""

    def __init__(
        self,
        lr: float = config.LEARNING_RATE,
        beta1: float = config.ADAM_BETA1,
        beta2: float = config.ADAM_BETA2,
        epsilon: float = config.ADAM_EPSILON,
        state: AdamState = None,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.state = state or AdamState()

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        params, self.state = adam_step(
            params, grads, self.state, self.lr, self.beta1, self.beta2, self.epsilon
        )
        return params
