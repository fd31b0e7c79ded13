from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from HyperFedSim.constants import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    CLIENT_LR,
    CLIENT_MOMENTUM,
    CLIENT_WEIGHT_DECAY,
    HYPERNET_LR,
)
from HyperFedSim.exceptions import ShapeError

Params = Dict[str, np.ndarray]


@dataclass
class SgdState:
    """
    Classical-momentum SGD with weight decay folded into the gradient.
    """

    lr: float = CLIENT_LR
    momentum: float = CLIENT_MOMENTUM
    weight_decay: float = CLIENT_WEIGHT_DECAY
    buffers: Params = field(default_factory=dict)


@dataclass
class AdamState:
    """
    Bias-corrected Adam. Moments and step counters are kept per parameter name, so parameters
    that join later (new heads, new client embeddings) start their own count at zero.
    """

    lr: float = HYPERNET_LR
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    m: Params = field(default_factory=dict)
    u: Params = field(default_factory=dict)
    t: Dict[str, int] = field(default_factory=dict)


def _check_shapes(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]):
    for name, grad in grads.items():
        if name not in params:
            raise ShapeError(f"gradient for unknown parameter {name}")
        if params[name].shape != grad.shape:
            raise ShapeError(
                f"gradient shape {grad.shape} != parameter shape {params[name].shape} for {name}"
            )


def sgd_step(
    params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: SgdState
) -> Params:
    """
    One SGD step over the parameters named in ``grads``:
    g' = g + wd * p; buf = momentum * buf + g'; p = p - lr * buf.

    :return: New parameter arrays for the stepped names. Inputs are not modified.
    """
    _check_shapes(params, grads)
    updated = {}
    for name, grad in grads.items():
        param = params[name]
        grad = grad + state.weight_decay * param
        buffer = state.buffers.get(name)
        if buffer is None:
            buffer = np.zeros_like(param)
        buffer = state.momentum * buffer + grad
        state.buffers[name] = buffer
        updated[name] = param - state.lr * buffer
    return updated


def adam_step(
    params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState
) -> Params:
    _check_shapes(params, grads)
    updated = {}
    for name, grad in grads.items():
        param = params[name]
        step = state.t.get(name, 0) + 1
        m = state.beta1 * state.m.get(name, np.zeros_like(param)) + (1 - state.beta1) * grad
        u = state.beta2 * state.u.get(name, np.zeros_like(param)) + (
            1 - state.beta2
        ) * (grad * grad)
        state.m[name], state.u[name], state.t[name] = m, u, step

        m_hat = m / (1 - state.beta1**step)
        u_hat = u / (1 - state.beta2**step)
        updated[name] = param - state.lr * m_hat / (np.sqrt(u_hat) + state.eps)
    return updated
