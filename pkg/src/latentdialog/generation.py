"""Sampling N diverse hypotheses per context.

For the latent variants all stochasticity comes from the prior sample:
decoding is greedy (argmax per step, ties to the lowest token id). The
baseline has no latent, so it samples ancestrally from the per-step
softmax at temperature 1. PAD and BOS are masked out of every decoding
distribution; EOS terminates and is stripped from the output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import BOS_ID, EOS_ID, PAD_ID, Vocabulary
from .model import DialogModel, EncodedContext, EncodedPair
from .numeric import core, rng as _rng
from .numeric.core import reparameterize

MODES = ("baseline", "cvae", "kgcvae")


@dataclass
class GeneratedResponse:
    tokens: list[str]
    predicted_act: str | None = None
    latent: np.ndarray | None = None


def _mask_specials(logits: np.ndarray) -> np.ndarray:
    out = logits.astype(np.float64, copy=True)
    out[PAD_ID] = -np.inf
    out[BOS_ID] = -np.inf
    return out


def greedy_decode(model: DialogModel, z: np.ndarray | None, ctx: EncodedContext,
                  y_onehot: np.ndarray | None, max_len: int) -> list[int]:
    """Argmax decoding from s_0; returns token ids without BOS/EOS/PAD."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    state = model.decoder_init(z, ctx, y_onehot)
    prev = BOS_ID
    out: list[int] = []
    for _ in range(max_len):
        state, logits = model.decoder_step(prev, state, y_onehot)
        token = int(np.argmax(_mask_specials(logits)))  # argmax takes the lowest id on ties
        if token == EOS_ID:
            break
        out.append(token)
        prev = token
    return out


def ancestral_decode(model: DialogModel, ctx: EncodedContext, max_len: int,
                     stream: _rng.Stream) -> list[int]:
    """Per-step softmax sampling at temperature 1 (baseline mode)."""
    state = model.decoder_init(None, ctx, None)
    prev = BOS_ID
    out: list[int] = []
    for _ in range(max_len):
        state, logits = model.decoder_step(prev, state, None)
        probs = core.softmax(_mask_specials(logits))
        token = stream.categorical(probs)
        if token == EOS_ID:
            break
        out.append(token)
        prev = token
    return out


def sample_responses(model: DialogModel, pair: EncodedPair, n: int, seed: int,
                     context_index: int, vocab: Vocabulary,
                     acts: list[str] | None = None) -> list[GeneratedResponse]:
    """N hypotheses for one context, each from its own derived stream.

    cvae: z ~ prior, greedy decode. kgcvae: z ~ prior, y' = argmax of the
    act predictor, greedy decode conditioned on y'. baseline: ancestral
    softmax sampling.
    """
    if n < 1:
        raise ValueError("need n >= 1 samples")
    mode = model.config.variant
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    ctx = model.encode_context(pair)
    max_len = model.config.max_decode_len
    prior = model.prior(ctx) if mode != "baseline" else None
    out: list[GeneratedResponse] = []
    for i in range(n):
        stream = _rng.stream(seed, "gen", context_index, i)
        if mode == "baseline":
            ids = ancestral_decode(model, ctx, max_len, stream)
            out.append(GeneratedResponse(tokens=vocab.decode(ids)))
            continue
        eps = stream.normal(model.config.latent_dim, dtype=np.float32)
        z = reparameterize(prior, eps).astype(model.params.dtype)
        if mode == "kgcvae":
            if acts is None:
                raise ValueError("kgcvae sampling requires the act label list")
            logits = model.predict_act(z, ctx)
            act_id = int(np.argmax(logits))
            y_onehot = np.zeros(model.config.n_acts, dtype=model.params.dtype)
            y_onehot[act_id] = 1.0
            ids = greedy_decode(model, z, ctx, y_onehot, max_len)
            out.append(GeneratedResponse(tokens=vocab.decode(ids),
                                         predicted_act=acts[act_id], latent=z))
        else:
            ids = greedy_decode(model, z, ctx, None, max_len)
            out.append(GeneratedResponse(tokens=vocab.decode(ids), latent=z))
    return out


def write_generations(path, all_hyps: list[list[GeneratedResponse]]) -> None:
    """JSONL: {"context_id": int, "hyps": [{"tokens": [...], "act": str|null}]}."""
    import json

    with open(path, "w", encoding="utf-8") as f:
        for context_id, hyps in enumerate(all_hyps):
            obj = {
                "context_id": context_id,
                "hyps": [{"tokens": h.tokens, "act": h.predicted_act} for h in hyps],
            }
            f.write(json.dumps(obj, sort_keys=True) + "\n")


def read_generations(path) -> list[dict]:
    import json

    rows = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                rows.append(json.loads(line))
    rows.sort(key=lambda r: r["context_id"])
    return rows
