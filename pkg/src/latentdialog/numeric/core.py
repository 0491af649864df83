"""Numeric building blocks: parameter store, Gaussian utilities, GRU/MLP steps.

The functional ops (gru_step, mlp_forward) are written against the tape
primitives, so they accept either plain numpy arrays (returning arrays)
or tape Vars (returning Vars with gradients tracked). Model code uses
the same implementations for training and for forward-only decoding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

from . import tape as T

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0

GRU_GATE_NAMES = ("W_u", "U_u", "b_u", "W_g", "U_g", "b_g", "W_h", "U_h", "b_h")


@dataclass
class GaussianParams:
    """Diagonal Gaussian as (mu, log_var), log_var clamped to [-10, 10]."""

    mu: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu)
        self.log_var = np.clip(np.asarray(self.log_var), LOG_VAR_MIN, LOG_VAR_MAX)
        if self.mu.shape != self.log_var.shape:
            raise ValueError(f"mu shape {self.mu.shape} != log_var shape {self.log_var.shape}")

    @property
    def dim(self) -> int:
        return self.mu.shape[-1]


class ModelParams:
    """Named dense parameter store with paired gradient buffers.

    Parameters keep a stable registration order; checkpoints and the
    flat views used by the optimizer and gradient checker all follow it.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._values: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self._values:
            raise ValueError(f"duplicate parameter {name!r}")
        self._values[name] = np.ascontiguousarray(value, dtype=self.dtype)
        self._grads[name] = np.zeros_like(self._values[name])

    def value(self, name: str) -> np.ndarray:
        return self._values[name]

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def set_value(self, name: str, value: np.ndarray) -> None:
        v = self._values[name]
        if np.shape(value) != v.shape:
            raise ValueError(f"shape mismatch for {name!r}: {np.shape(value)} != {v.shape}")
        v[...] = value

    def names(self) -> list[str]:
        return list(self._values)

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(self._values.items())

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def zero_grad(self) -> None:
        for g in self._grads.values():
            g[...] = 0.0

    def total_size(self) -> int:
        return sum(v.size for v in self._values.values())

    def grad_global_norm(self) -> float:
        sq = 0.0
        for g in self._grads.values():
            sq += float(np.sum(np.square(g, dtype=np.float64)))
        return float(np.sqrt(sq))

    def astype(self, dtype) -> "ModelParams":
        out = ModelParams(dtype)
        for name, v in self._values.items():
            out.add(name, v.astype(dtype))
        return out

    def copy(self) -> "ModelParams":
        return self.astype(self.dtype)


def gaussian_kl(q: GaussianParams, p: GaussianParams) -> float:
    """KL(q || p) between diagonal Gaussians, closed form.

    KL = 1/2 * sum( log s_p^2 - log s_q^2 + (s_q^2 + (mu_q - mu_p)^2) / s_p^2 - 1 )
    """
    if q.dim != p.dim:
        raise ValueError(f"dimension mismatch: {q.dim} != {p.dim}")
    lq = q.log_var.astype(np.float64)
    lp = p.log_var.astype(np.float64)
    mq = q.mu.astype(np.float64)
    mp = p.mu.astype(np.float64)
    term = lp - lq + (np.exp(lq) + np.square(mq - mp)) / np.exp(lp) - 1.0
    return float(0.5 * term.sum())


def kl_terms(mu_q, log_var_q, mu_p, log_var_p):
    """Tape-level per-example KL for batched (B, D) Gaussian pairs -> (B,)."""
    diff = T.sub(mu_q, mu_p)
    ratio = T.exp(T.sub(log_var_q, log_var_p))
    maha = T.mul(T.square(diff), T.exp(T.mul(log_var_p, -1.0)))
    inner = T.sub(T.add(T.sub(log_var_p, log_var_q), T.add(ratio, maha)), 1.0)
    return T.mul(T.sum_axis(inner, axis=-1), 0.5)


def reparameterize(gauss: GaussianParams, eps: np.ndarray) -> np.ndarray:
    """z = mu + exp(log_var / 2) * eps."""
    return gauss.mu + np.exp(0.5 * gauss.log_var) * eps


def gru_step(cell: Mapping[str, object], x, h):
    """One GRU step. Gate convention (fixed contract, also in README):

        u    = sigmoid(x W_u + h U_u + b_u)        update gate
        r    = sigmoid(x W_g + h U_g + b_g)        reset gate
        hbar = tanh(x W_h + (r * h) U_h + b_h)     candidate
        h'   = (1 - u) * h + u * hbar

    Shapes: W_* (in, H), U_* (H, H), b_* (H,); x (B, in), h (B, H).
    Accepts arrays or tape Vars.
    """
    u = T.sigmoid(T.add(T.add(T.matmul(x, cell["W_u"]), T.matmul(h, cell["U_u"])), cell["b_u"]))
    r = T.sigmoid(T.add(T.add(T.matmul(x, cell["W_g"]), T.matmul(h, cell["U_g"])), cell["b_g"]))
    hbar = T.tanh(T.add(T.add(T.matmul(x, cell["W_h"]), T.matmul(T.mul(r, h), cell["U_h"])), cell["b_h"]))
    return T.add(T.mul(T.sub(1.0, u), h), T.mul(u, hbar))


def gru_step_precomputed(cell: Mapping[str, object], xu, xg, xh, h):
    """GRU step with the x-side gate projections (x W_* + b_*) precomputed."""
    u = T.sigmoid(T.add(xu, T.matmul(h, cell["U_u"])))
    r = T.sigmoid(T.add(xg, T.matmul(h, cell["U_g"])))
    hbar = T.tanh(T.add(xh, T.matmul(T.mul(r, h), cell["U_h"])))
    return T.add(T.mul(T.sub(1.0, u), h), T.mul(u, hbar))


def mlp_forward(x, w1, b1, w2, b2):
    """Single-hidden-layer MLP with tanh hidden activation, linear output."""
    return T.add(T.matmul(T.tanh(T.add(T.matmul(x, w1), b1)), w2), b2)


def affine(x, w, b):
    return T.add(T.matmul(x, w), b)


def softmax_xent(logits: np.ndarray, target: int) -> float:
    """Cross-entropy of one logit vector against one class index."""
    lv = np.asarray(logits, dtype=np.float64)
    m = lv.max()
    lse = m + np.log(np.exp(lv - m).sum())
    return float(lse - lv[int(target)])


def log_softmax(logits: np.ndarray) -> np.ndarray:
    lv = np.asarray(logits, dtype=np.float64)
    m = lv.max(axis=-1, keepdims=True)
    return lv - m - np.log(np.exp(lv - m).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))
