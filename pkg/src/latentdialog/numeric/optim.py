"""Adam with bias correction and global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ModelParams


@dataclass
class AdamState:
    """First/second moment buffers plus the shared step counter."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ModelParams, lr: float = 0.001) -> "AdamState":
        state = cls(lr=lr)
        for name, value in params.items():
            state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        return state


def clip_gradients(params: ModelParams, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm.

    Returns the applied scale factor (1.0 when no clipping happened).
    """
    norm = params.grad_global_norm()
    if norm <= max_norm or norm == 0.0:
        return 1.0
    scale = max_norm / norm
    for name in params.names():
        params.grad(name)[...] *= scale
    return scale


def adam_step(state: AdamState, params: ModelParams) -> None:
    """One Adam update from the gradients currently stored in params."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, value in params.items():
        g = params.grad(name)
        m = state.m[name]
        v = state.v[name]
        m[...] = b1 * m + (1.0 - b1) * g
        v[...] = b2 * v + (1.0 - b2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        value[...] -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
