"""Numerics: autodiff tape, parameter store, Gaussian ops, Adam, RNG streams."""

from . import rng, tape
from .core import (
    GRU_GATE_NAMES,
    LOG_VAR_MAX,
    LOG_VAR_MIN,
    GaussianParams,
    ModelParams,
    affine,
    gaussian_kl,
    gru_step,
    gru_step_precomputed,
    kl_terms,
    log_softmax,
    mlp_forward,
    reparameterize,
    softmax,
    softmax_xent,
)
from .gradcheck import GradCheckReport, grad_check
from .optim import AdamState, adam_step, clip_gradients
from .rng import Stream, derive_key, stream

__all__ = [
    "GRU_GATE_NAMES",
    "LOG_VAR_MAX",
    "LOG_VAR_MIN",
    "GaussianParams",
    "GradCheckReport",
    "ModelParams",
    "AdamState",
    "Stream",
    "adam_step",
    "affine",
    "clip_gradients",
    "derive_key",
    "gaussian_kl",
    "grad_check",
    "gru_step",
    "gru_step_precomputed",
    "kl_terms",
    "log_softmax",
    "mlp_forward",
    "reparameterize",
    "rng",
    "softmax",
    "softmax_xent",
    "stream",
    "tape",
]
