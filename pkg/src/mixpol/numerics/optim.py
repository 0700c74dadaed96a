"""Adam on flat parameter vectors, kept functional for reproducibility."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass
class AdamState:
    lr: float
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(dim: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    return AdamState(lr=lr, m=np.zeros(dim), v=np.zeros(dim),
                     beta1=beta1, beta2=beta2, eps=eps)


def adam_step(state: AdamState, params: np.ndarray,
              grad: np.ndarray) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam step minimizing along grad; returns new arrays."""
    if grad.shape != params.shape or grad.shape != state.m.shape:
        raise ValueError("params, grad, and state dimensions must agree")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, replace(state, m=m, v=v, step=t)
