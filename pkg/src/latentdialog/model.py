"""The three dialog-model variants: baseline encoder-decoder, CVAE, kgCVAE.

Architecture (shared skeleton):
  - word embeddings, shared by every encoder and the decoder;
  - bidirectional GRU utterance encoder; utterance vector u = [fwd; bwd];
  - context GRU over [u_i ; floor_i] inputs; c = [final state ; topic one-hot];
  - (cvae/kgcvae) recognition network: one affine map of [x; c] (kgcvae:
    [x; c; y]) to [mu; log_var];
  - (cvae/kgcvae) prior network: one-tanh-hidden-layer MLP of c to
    [mu'; log_var'];
  - (kgcvae) act predictor MLP over [z; c];
  - (cvae/kgcvae, optional) bag-of-words logits MLP over [z; c], scored
    against the unordered response tokens;
  - decoder GRU from initial state W_i [z; c(; y)] + b_i (baseline: W_i c
    + b_i), teacher-forced, predicting response tokens then EOS.

The loss is the negative single-sample bound estimate:
  reconstruction + kl_weight * KL(q || p) + bow + act.

All forward code is written against the autodiff tape primitives, so the
same functions serve training (gradients) and evaluation (plain numpy).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .corpus import BOS_ID, EOS_ID, PAD_ID, ContextResponsePair, Vocabulary
from .numeric import core, rng as _rng, tape as T
from .numeric.core import GaussianParams, ModelParams

log = logging.getLogger(__name__)

VARIANTS = ("baseline", "cvae", "kgcvae")


@dataclass
class ModelConfig:
    variant: str
    vocab_size: int
    n_topics: int
    n_acts: int = 0
    emb_dim: int = 200
    utt_hidden: int = 300
    ctx_hidden: int = 600
    dec_hidden: int = 400
    latent_dim: int = 200
    mlp_hidden: int = 400
    context_window: int = 10
    max_decode_len: int = 40
    use_bow: bool = True

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        sizes = (
            self.vocab_size, self.n_topics, self.emb_dim, self.utt_hidden,
            self.ctx_hidden, self.dec_hidden, self.latent_dim, self.mlp_hidden,
            self.max_decode_len,
        )
        if any(s <= 0 for s in sizes):
            raise ValueError("all model sizes must be positive")
        if self.context_window < 2:
            raise ValueError("context window must be >= 2")
        if self.variant == "kgcvae" and self.n_acts < 1:
            raise ValueError("kgcvae requires at least one act label")

    # Derived dimensions.
    @property
    def utt_vec_dim(self) -> int:
        return 2 * self.utt_hidden

    @property
    def c_dim(self) -> int:
        return self.ctx_hidden + self.n_topics

    @property
    def recog_in_dim(self) -> int:
        extra = self.n_acts if self.variant == "kgcvae" else 0
        return self.utt_vec_dim + self.c_dim + extra

    @property
    def dec_input_dim(self) -> int:
        return self.emb_dim + (self.n_acts if self.variant == "kgcvae" else 0)

    @property
    def dec_init_in_dim(self) -> int:
        if self.variant == "baseline":
            return self.c_dim
        extra = self.n_acts if self.variant == "kgcvae" else 0
        return self.latent_dim + self.c_dim + extra

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "vocab_size": self.vocab_size,
            "n_topics": self.n_topics,
            "n_acts": self.n_acts,
            "emb_dim": self.emb_dim,
            "utt_hidden": self.utt_hidden,
            "ctx_hidden": self.ctx_hidden,
            "dec_hidden": self.dec_hidden,
            "latent_dim": self.latent_dim,
            "mlp_hidden": self.mlp_hidden,
            "context_window": self.context_window,
            "max_decode_len": self.max_decode_len,
            "use_bow": self.use_bow,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


@dataclass
class EncodedContext:
    """c = [context GRU final state ; topic one-hot]."""

    c: np.ndarray


@dataclass
class LossBreakdown:
    """Per-batch means (per example) of each loss term.

    reconstruction is the mean over examples of the summed token NLL
    (EOS included); token_count is the total target-token count of the
    batch, for per-token reporting.
    """

    reconstruction: float
    kl: float
    bow: float
    act: float
    kl_weight: float
    token_count: int

    @property
    def total(self) -> float:
        return self.reconstruction + self.kl_weight * self.kl + self.bow + self.act


@dataclass
class EncodedPair:
    """A ContextResponsePair mapped to vocabulary ids (no BOS/EOS yet)."""

    ctx_ids: list[list[int]]
    floors: list[int]
    meta: np.ndarray
    resp_ids: list[int]
    act_id: int | None


def encode_pair(pair: ContextResponsePair, vocab: Vocabulary, acts: Sequence[str]) -> EncodedPair:
    act_id = None
    if pair.response_act is not None and pair.response_act in acts:
        act_id = list(acts).index(pair.response_act)
    return EncodedPair(
        ctx_ids=[vocab.encode(u.tokens) for u in pair.context],
        floors=list(pair.floors),
        meta=pair.meta,
        resp_ids=vocab.encode(pair.response.tokens),
        act_id=act_id,
    )


@dataclass
class PairBatch:
    """Padded id arrays plus masks for one mini-batch."""

    ctx_ids: np.ndarray        # (B, C, Tc) int32, PAD-padded
    ctx_tok_mask: np.ndarray   # (B, C, Tc)
    ctx_utt_mask: np.ndarray   # (B, C)
    floors: np.ndarray         # (B, C)
    meta: np.ndarray           # (B, n_topics)
    resp_ids: np.ndarray       # (B, Tr) int32 (no BOS/EOS)
    resp_mask: np.ndarray      # (B, Tr)
    dec_in: np.ndarray         # (B, Tr+1) int32: BOS then response
    dec_tgt: np.ndarray        # (B, Tr+1) int32: response then EOS
    dec_mask: np.ndarray       # (B, Tr+1)
    acts: np.ndarray | None    # (B,) int32 or None

    @property
    def size(self) -> int:
        return self.ctx_ids.shape[0]

    @property
    def token_count(self) -> int:
        return int(self.dec_mask.sum())


def make_batch(pairs: Sequence[EncodedPair], dtype=np.float32) -> PairBatch:
    b = len(pairs)
    if b == 0:
        raise ValueError("batch must be non-empty")
    n_ctx = max(len(p.ctx_ids) for p in pairs)
    t_ctx = max(max(len(u) for u in p.ctx_ids) for p in pairs)
    t_resp = max(len(p.resp_ids) for p in pairs)
    n_topics = len(pairs[0].meta)

    ctx_ids = np.full((b, n_ctx, t_ctx), PAD_ID, dtype=np.int32)
    ctx_tok_mask = np.zeros((b, n_ctx, t_ctx), dtype=dtype)
    ctx_utt_mask = np.zeros((b, n_ctx), dtype=dtype)
    floors = np.zeros((b, n_ctx), dtype=dtype)
    meta = np.zeros((b, n_topics), dtype=dtype)
    resp_ids = np.full((b, t_resp), PAD_ID, dtype=np.int32)
    resp_mask = np.zeros((b, t_resp), dtype=dtype)
    dec_in = np.full((b, t_resp + 1), PAD_ID, dtype=np.int32)
    dec_tgt = np.full((b, t_resp + 1), PAD_ID, dtype=np.int32)
    dec_mask = np.zeros((b, t_resp + 1), dtype=dtype)
    have_acts = all(p.act_id is not None for p in pairs)
    acts = np.zeros(b, dtype=np.int32) if have_acts else None

    for i, p in enumerate(pairs):
        for j, utt in enumerate(p.ctx_ids):
            ctx_ids[i, j, :len(utt)] = utt
            ctx_tok_mask[i, j, :len(utt)] = 1.0
        ctx_utt_mask[i, :len(p.ctx_ids)] = 1.0
        floors[i, :len(p.floors)] = p.floors
        meta[i] = p.meta
        n = len(p.resp_ids)
        resp_ids[i, :n] = p.resp_ids
        resp_mask[i, :n] = 1.0
        dec_in[i, 0] = BOS_ID
        dec_in[i, 1:n + 1] = p.resp_ids
        dec_tgt[i, :n] = p.resp_ids
        dec_tgt[i, n] = EOS_ID
        dec_mask[i, :n + 1] = 1.0
        if acts is not None:
            acts[i] = p.act_id

    return PairBatch(
        ctx_ids=ctx_ids, ctx_tok_mask=ctx_tok_mask, ctx_utt_mask=ctx_utt_mask,
        floors=floors, meta=meta, resp_ids=resp_ids, resp_mask=resp_mask,
        dec_in=dec_in, dec_tgt=dec_tgt, dec_mask=dec_mask, acts=acts,
    )


class _Bindings:
    """Lazy tape leaves over ModelParams; harvest() pulls gradients back."""

    def __init__(self, params: ModelParams, tape: T.Tape | None, trainable: bool):
        self._params = params
        self._tape = tape
        self._trainable = trainable
        self._vars: dict[str, T.Var] = {}

    def __getitem__(self, name: str):
        if not self._trainable:
            return self._params.value(name)
        var = self._vars.get(name)
        if var is None:
            var = self._tape.leaf(self._params.value(name), requires_grad=True)
            self._vars[name] = var
        return var

    def cell(self, prefix: str) -> dict[str, object]:
        return {g: self[f"{prefix}.{g}"] for g in core.GRU_GATE_NAMES}

    def harvest(self) -> None:
        for name, var in self._vars.items():
            if var.grad is not None:
                g = self._params.grad(name)
                g += var.grad.astype(g.dtype, copy=False)


def _one_hot(ids: np.ndarray, n: int, dtype) -> np.ndarray:
    out = np.zeros((len(ids), n), dtype=dtype)
    out[np.arange(len(ids)), ids] = 1.0
    return out


class DialogModel:
    """One model variant: parameters plus every forward/loss computation."""

    def __init__(self, config: ModelConfig, params: ModelParams | None = None, init_seed: int = 0):
        config.validate()
        self.config = config
        self.params = params if params is not None else self._init_params(init_seed)

    # ---------------- parameter registration ----------------

    def _param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        cfg = self.config
        shapes: list[tuple[str, tuple[int, ...]]] = [("embedding", (cfg.vocab_size, cfg.emb_dim))]

        def cell(prefix: str, d_in: int, d_h: int):
            for gate in ("u", "g", "h"):
                shapes.append((f"{prefix}.W_{gate}", (d_in, d_h)))
                shapes.append((f"{prefix}.U_{gate}", (d_h, d_h)))
                shapes.append((f"{prefix}.b_{gate}", (d_h,)))

        cell("utt_fwd", cfg.emb_dim, cfg.utt_hidden)
        cell("utt_bwd", cfg.emb_dim, cfg.utt_hidden)
        cell("ctx", cfg.utt_vec_dim + 1, cfg.ctx_hidden)
        if cfg.variant != "baseline":
            shapes.append(("recog.W", (cfg.recog_in_dim, 2 * cfg.latent_dim)))
            shapes.append(("recog.b", (2 * cfg.latent_dim,)))
            shapes.append(("prior.W1", (cfg.c_dim, cfg.mlp_hidden)))
            shapes.append(("prior.b1", (cfg.mlp_hidden,)))
            shapes.append(("prior.W2", (cfg.mlp_hidden, 2 * cfg.latent_dim)))
            shapes.append(("prior.b2", (2 * cfg.latent_dim,)))
            if cfg.variant == "kgcvae":
                shapes.append(("act.W1", (cfg.latent_dim + cfg.c_dim, cfg.mlp_hidden)))
                shapes.append(("act.b1", (cfg.mlp_hidden,)))
                shapes.append(("act.W2", (cfg.mlp_hidden, cfg.n_acts)))
                shapes.append(("act.b2", (cfg.n_acts,)))
            # BOW parameters exist for both latent variants, used or not,
            # so ablating the BOW term changes only the objective.
            shapes.append(("bow.W1", (cfg.latent_dim + cfg.c_dim, cfg.mlp_hidden)))
            shapes.append(("bow.b1", (cfg.mlp_hidden,)))
            shapes.append(("bow.W2", (cfg.mlp_hidden, cfg.vocab_size)))
            shapes.append(("bow.b2", (cfg.vocab_size,)))
        shapes.append(("dec_init.W", (cfg.dec_init_in_dim, cfg.dec_hidden)))
        shapes.append(("dec_init.b", (cfg.dec_hidden,)))
        cell("dec", cfg.dec_input_dim, cfg.dec_hidden)
        shapes.append(("dec_out.W", (cfg.dec_hidden, cfg.vocab_size)))
        shapes.append(("dec_out.b", (cfg.vocab_size,)))
        return shapes

    def _init_params(self, seed: int) -> ModelParams:
        stream = _rng.stream(seed, "init")
        params = ModelParams(np.float32)
        for name, shape in self._param_shapes():
            params.add(name, stream.uniform(-0.08, 0.08, size=shape, dtype=np.float32))
        return params

    def set_embeddings(self, matrix: np.ndarray) -> None:
        self.params.set_value("embedding", matrix)

    def astype(self, dtype) -> "DialogModel":
        return DialogModel(self.config, params=self.params.astype(dtype))

    # ---------------- batched forward (tape-generic) ----------------

    def _cell_values(self, prefix: str) -> dict[str, np.ndarray]:
        return {g: self.params.value(f"{prefix}.{g}") for g in core.GRU_GATE_NAMES}

    def _gru_scan(self, P: _Bindings, cell_name: str, x_flat, n: int, steps: int,
                  mask: np.ndarray, hidden: int, reverse: bool = False):
        """Run a masked GRU over `steps` inputs given flat (n*steps, d_in) x.

        The x-side gate projections are computed in one matmul per gate.
        mask is (n, steps); masked steps keep the previous state.
        """
        xu = T.reshape(core.affine(x_flat, P[f"{cell_name}.W_u"], P[f"{cell_name}.b_u"]), (n, steps, hidden))
        xg = T.reshape(core.affine(x_flat, P[f"{cell_name}.W_g"], P[f"{cell_name}.b_g"]), (n, steps, hidden))
        xh = T.reshape(core.affine(x_flat, P[f"{cell_name}.W_h"], P[f"{cell_name}.b_h"]), (n, steps, hidden))
        cell = {g: P[f"{cell_name}.{g}"] for g in ("U_u", "U_g", "U_h")}
        dtype = self.params.dtype
        h = np.zeros((n, hidden), dtype=dtype)
        order = range(steps - 1, -1, -1) if reverse else range(steps)
        for t in order:
            xu_t = T.reshape(T.narrow(xu, t, 1, axis=1), (n, hidden))
            xg_t = T.reshape(T.narrow(xg, t, 1, axis=1), (n, hidden))
            xh_t = T.reshape(T.narrow(xh, t, 1, axis=1), (n, hidden))
            h_new = core.gru_step_precomputed(cell, xu_t, xg_t, xh_t, h)
            col = mask[:, t]
            if col.all():
                h = h_new
            else:
                m = col[:, None].astype(dtype)
                h = T.add(T.mul(h_new, m), T.mul(h, 1.0 - m))
        return h

    def _encode_utterances(self, P: _Bindings, ids: np.ndarray, tok_mask: np.ndarray):
        """ids (N, T) -> u (N, 2*utt_hidden) via the bidirectional encoder."""
        cfg = self.config
        n, steps = ids.shape
        emb = T.rows(P["embedding"], ids.reshape(-1))  # (N*T, emb)
        fwd = self._gru_scan(P, "utt_fwd", emb, n, steps, tok_mask, cfg.utt_hidden)
        bwd = self._gru_scan(P, "utt_bwd", emb, n, steps, tok_mask, cfg.utt_hidden, reverse=True)
        return T.concat([fwd, bwd], axis=1)

    def _encode_context_batch(self, P: _Bindings, batch: PairBatch):
        """-> c (B, c_dim) = [context GRU final state ; meta]."""
        cfg = self.config
        b, n_ctx, t_ctx = batch.ctx_ids.shape
        u = self._encode_utterances(
            P, batch.ctx_ids.reshape(b * n_ctx, t_ctx),
            batch.ctx_tok_mask.reshape(b * n_ctx, t_ctx),
        )  # (B*C, 2uh)
        x_flat = T.concat([u, batch.floors.reshape(b * n_ctx, 1)], axis=1)
        hc = self._gru_scan(P, "ctx", x_flat, b, n_ctx, batch.ctx_utt_mask, cfg.ctx_hidden)
        return T.concat([hc, batch.meta], axis=1)

    def _recognition_batch(self, P: _Bindings, x_vec, c, y_onehot):
        cfg = self.config
        parts = [x_vec, c] if y_onehot is None else [x_vec, c, y_onehot]
        out = core.affine(T.concat(parts, axis=1), P["recog.W"], P["recog.b"])
        mu = T.narrow(out, 0, cfg.latent_dim, axis=1)
        log_var = T.clip_box(T.narrow(out, cfg.latent_dim, cfg.latent_dim, axis=1),
                             core.LOG_VAR_MIN, core.LOG_VAR_MAX)
        return mu, log_var

    def _prior_batch(self, P: _Bindings, c):
        cfg = self.config
        out = core.mlp_forward(c, P["prior.W1"], P["prior.b1"], P["prior.W2"], P["prior.b2"])
        mu = T.narrow(out, 0, cfg.latent_dim, axis=1)
        log_var = T.clip_box(T.narrow(out, cfg.latent_dim, cfg.latent_dim, axis=1),
                             core.LOG_VAR_MIN, core.LOG_VAR_MAX)
        return mu, log_var

    def _decode_batch(self, P: _Bindings, dec_init_in, batch: PairBatch,
                      y_onehot: np.ndarray | None, want_logits: bool = False):
        """Teacher-forced decoder; returns per-example summed NLL (B,)."""
        cfg = self.config
        b, steps = batch.dec_in.shape
        dtype = self.params.dtype
        s = core.affine(dec_init_in, P["dec_init.W"], P["dec_init.b"])
        emb = T.rows(P["embedding"], batch.dec_in.reshape(-1))  # (B*S, emb)
        if y_onehot is not None:
            y_rep = np.repeat(y_onehot[:, None, :], steps, axis=1).reshape(b * steps, -1)
            x_flat = T.concat([emb, y_rep], axis=1)
        else:
            x_flat = emb
        xu = T.reshape(core.affine(x_flat, P["dec.W_u"], P["dec.b_u"]), (b, steps, cfg.dec_hidden))
        xg = T.reshape(core.affine(x_flat, P["dec.W_g"], P["dec.b_g"]), (b, steps, cfg.dec_hidden))
        xh = T.reshape(core.affine(x_flat, P["dec.W_h"], P["dec.b_h"]), (b, steps, cfg.dec_hidden))
        cell = {g: P[f"dec.{g}"] for g in ("U_u", "U_g", "U_h")}
        recon = None
        logits_steps = [] if want_logits else None
        for t in range(steps):
            xu_t = T.reshape(T.narrow(xu, t, 1, axis=1), (b, cfg.dec_hidden))
            xg_t = T.reshape(T.narrow(xg, t, 1, axis=1), (b, cfg.dec_hidden))
            xh_t = T.reshape(T.narrow(xh, t, 1, axis=1), (b, cfg.dec_hidden))
            s = core.gru_step_precomputed(cell, xu_t, xg_t, xh_t, s)
            logits = core.affine(s, P["dec_out.W"], P["dec_out.b"])
            if want_logits:
                logits_steps.append(T.value_of(logits))
            col = batch.dec_mask[:, t]
            step_loss = T.softmax_xent(logits, batch.dec_tgt[:, t], weight=None if col.all() else col)
            recon = step_loss if recon is None else T.add(recon, step_loss)
        if want_logits:
            return recon, np.stack(logits_steps, axis=1)
        return recon, None

    def _forward(self, P: _Bindings, batch: PairBatch, noise: np.ndarray | None,
                 want_logits: bool = False):
        """Shared forward pass; returns per-example loss terms (B,) each."""
        cfg = self.config
        b = batch.size
        dtype = self.params.dtype
        zeros = np.zeros(b, dtype=dtype)
        c = self._encode_context_batch(P, batch)

        if cfg.variant == "baseline":
            recon, logits = self._decode_batch(P, c, batch, None, want_logits)
            return {"recon": recon, "kl": zeros, "bow": zeros, "act": zeros, "logits": logits}

        if noise is None:
            raise ValueError("latent variants need a noise matrix (B, latent_dim)")
        y_onehot = None
        if cfg.variant == "kgcvae":
            if batch.acts is None:
                raise ValueError("kgcvae training requires act labels on every pair")
            y_onehot = _one_hot(batch.acts, cfg.n_acts, dtype)

        x_vec = self._encode_utterances(P, batch.resp_ids, batch.resp_mask)
        mu_q, lv_q = self._recognition_batch(P, x_vec, c, y_onehot)
        mu_p, lv_p = self._prior_batch(P, c)
        kl = core.kl_terms(mu_q, lv_q, mu_p, lv_p)
        z = T.add(mu_q, T.mul(T.exp(T.mul(lv_q, 0.5)), noise.astype(dtype)))

        act = zeros
        if cfg.variant == "kgcvae":
            act_logits = core.mlp_forward(T.concat([z, c], axis=1),
                                          P["act.W1"], P["act.b1"], P["act.W2"], P["act.b2"])
            act = T.softmax_xent(act_logits, batch.acts)

        bow = zeros
        if cfg.use_bow:
            bow_logits = core.mlp_forward(T.concat([z, c], axis=1),
                                          P["bow.W1"], P["bow.b1"], P["bow.W2"], P["bow.b2"])
            bow = T.bag_xent(bow_logits, batch.resp_ids, batch.resp_mask)

        init_parts = [z, c] if y_onehot is None else [z, c, y_onehot]
        recon, logits = self._decode_batch(P, T.concat(init_parts, axis=1), batch, y_onehot, want_logits)
        return {"recon": recon, "kl": kl, "bow": bow, "act": act, "logits": logits}

    # ---------------- training/eval entry points ----------------

    def batch_loss(self, batch: PairBatch, kl_weight: float,
                   noise: np.ndarray | None, compute_grad: bool = False) -> LossBreakdown:
        """Mean per-example loss over the batch; optionally accumulate grads."""
        tape = T.Tape() if compute_grad else None
        P = _Bindings(self.params, tape, trainable=compute_grad)
        terms = self._forward(P, batch, noise)
        per_ex = T.add(terms["recon"],
                       T.add(T.mul(terms["kl"], float(kl_weight)),
                             T.add(terms["bow"], terms["act"])))
        total = T.mean_all(per_ex)
        if compute_grad:
            tape.backward(total)
            P.harvest()
        return LossBreakdown(
            reconstruction=float(np.mean(T.value_of(terms["recon"]), dtype=np.float64)),
            kl=float(np.mean(T.value_of(terms["kl"]), dtype=np.float64)),
            bow=float(np.mean(T.value_of(terms["bow"]), dtype=np.float64)),
            act=float(np.mean(T.value_of(terms["act"]), dtype=np.float64)),
            kl_weight=float(kl_weight),
            token_count=batch.token_count,
        )

    def batch_terms(self, batch: PairBatch, noise: np.ndarray | None) -> dict[str, np.ndarray]:
        """Forward-only per-example terms: recon, kl, bow, act, tokens."""
        P = _Bindings(self.params, None, trainable=False)
        terms = self._forward(P, batch, noise)
        return {
            "recon": np.asarray(terms["recon"], dtype=np.float64),
            "kl": np.asarray(terms["kl"], dtype=np.float64),
            "bow": np.asarray(terms["bow"], dtype=np.float64),
            "act": np.asarray(terms["act"], dtype=np.float64),
            "tokens": batch.dec_mask.sum(axis=1).astype(np.int64),
        }

    def recognition_means(self, batch: PairBatch) -> np.ndarray:
        """Recognition-network posterior means (B, latent_dim), no sampling."""
        self._require_latent("recognition_means")
        P = _Bindings(self.params, None, trainable=False)
        c = self._encode_context_batch(P, batch)
        y_onehot = None
        if self.config.variant == "kgcvae":
            if batch.acts is None:
                raise ValueError("kgcvae recognition requires act labels on every pair")
            y_onehot = _one_hot(batch.acts, self.config.n_acts, self.params.dtype)
        x_vec = self._encode_utterances(P, batch.resp_ids, batch.resp_mask)
        mu, _ = self._recognition_batch(P, x_vec, c, y_onehot)
        return np.asarray(mu, dtype=np.float64)

    def loss_total(self, pair: EncodedPair, kl_weight: float,
                   noise: np.ndarray | None, compute_grad: bool = False) -> LossBreakdown:
        """Single-pair loss (batch of one)."""
        batch = make_batch([pair], dtype=self.params.dtype)
        if noise is not None:
            noise = np.asarray(noise).reshape(1, -1)
        return self.batch_loss(batch, kl_weight, noise, compute_grad=compute_grad)

    # ---------------- single-example ops (plain numpy) ----------------

    def encode_utterance(self, token_ids: Sequence[int]) -> np.ndarray:
        """u = [forward GRU last state ; backward GRU last state]."""
        if len(token_ids) == 0:
            raise ValueError("cannot encode an empty utterance")
        cfg = self.config
        emb = self.params.value("embedding")
        fwd_cell = self._cell_values("utt_fwd")
        bwd_cell = self._cell_values("utt_bwd")
        h_f = np.zeros(cfg.utt_hidden, dtype=self.params.dtype)
        h_b = np.zeros(cfg.utt_hidden, dtype=self.params.dtype)
        for t in token_ids:
            h_f = core.gru_step(fwd_cell, emb[t][None, :], h_f[None, :])[0]
        for t in reversed(token_ids):
            h_b = core.gru_step(bwd_cell, emb[t][None, :], h_b[None, :])[0]
        return np.concatenate([h_f, h_b])

    def encode_context(self, pair: EncodedPair) -> EncodedContext:
        """Context GRU over [u_i ; floor_i], then append the topic one-hot."""
        cfg = self.config
        cell = self._cell_values("ctx")
        h = np.zeros(cfg.ctx_hidden, dtype=self.params.dtype)
        for ids, floor in zip(pair.ctx_ids, pair.floors):
            u = self.encode_utterance(ids)
            x = np.concatenate([u, np.asarray([floor], dtype=self.params.dtype)])
            h = core.gru_step(cell, x[None, :], h[None, :])[0]
        return EncodedContext(c=np.concatenate([h, pair.meta.astype(self.params.dtype)]))

    def _require_latent(self, op: str) -> None:
        if self.config.variant == "baseline":
            raise ValueError(f"{op} is undefined for the baseline variant")

    def recognition(self, x_vec: np.ndarray, ctx: EncodedContext,
                    y_onehot: np.ndarray | None = None) -> GaussianParams:
        """q(z | x, c[, y]) as a single affine map of the concatenation."""
        self._require_latent("recognition")
        cfg = self.config
        if cfg.variant == "kgcvae":
            if y_onehot is None:
                raise ValueError("kgcvae recognition requires the act one-hot")
            inp = np.concatenate([x_vec, ctx.c, y_onehot])
        else:
            inp = np.concatenate([x_vec, ctx.c])
        out = inp @ self.params.value("recog.W") + self.params.value("recog.b")
        return GaussianParams(mu=out[:cfg.latent_dim], log_var=out[cfg.latent_dim:])

    def prior(self, ctx: EncodedContext) -> GaussianParams:
        """p(z | c), one tanh hidden layer then linear."""
        self._require_latent("prior")
        cfg = self.config
        out = core.mlp_forward(ctx.c[None, :], self.params.value("prior.W1"),
                               self.params.value("prior.b1"), self.params.value("prior.W2"),
                               self.params.value("prior.b2"))[0]
        return GaussianParams(mu=out[:cfg.latent_dim], log_var=out[cfg.latent_dim:])

    def predict_act(self, z: np.ndarray, ctx: EncodedContext) -> np.ndarray:
        """Act logits y' from (z, c)."""
        if self.config.variant != "kgcvae":
            raise ValueError("predict_act is only defined for the kgcvae variant")
        return core.mlp_forward(np.concatenate([z, ctx.c])[None, :],
                                self.params.value("act.W1"), self.params.value("act.b1"),
                                self.params.value("act.W2"), self.params.value("act.b2"))[0]

    def bow_loss(self, z: np.ndarray, ctx: EncodedContext, resp_ids: Sequence[int]) -> float:
        """Sum over response tokens of cross-entropy against shared logits."""
        self._require_latent("bow_loss")
        if len(resp_ids) == 0:
            log.warning("bow_loss on an empty bag returns 0")
            return 0.0
        f = core.mlp_forward(np.concatenate([z, ctx.c])[None, :],
                             self.params.value("bow.W1"), self.params.value("bow.b1"),
                             self.params.value("bow.W2"), self.params.value("bow.b2"))[0]
        logp = core.log_softmax(f)
        return float(-logp[np.asarray(resp_ids, dtype=np.int64)].sum())

    def decoder_init(self, z: np.ndarray | None, ctx: EncodedContext,
                     y_onehot: np.ndarray | None = None) -> np.ndarray:
        """s_0 = W_i [z; c(; y)] + b_i (baseline: W_i c + b_i)."""
        if self.config.variant == "baseline":
            inp = ctx.c
        else:
            parts = [z, ctx.c] if y_onehot is None else [z, ctx.c, y_onehot]
            inp = np.concatenate(parts)
        return inp @ self.params.value("dec_init.W") + self.params.value("dec_init.b")

    def decoder_step(self, prev_id: int, state: np.ndarray,
                     y_onehot: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """One decoder step; returns (next state, logits over the vocabulary)."""
        emb = self.params.value("embedding")[prev_id]
        x = emb if y_onehot is None else np.concatenate([emb, y_onehot])
        cell = self._cell_values("dec")
        state = core.gru_step(cell, x[None, :], state[None, :])[0]
        logits = state @ self.params.value("dec_out.W") + self.params.value("dec_out.b")
        return state, logits

    def decode_teacher_forced(self, z: np.ndarray | None, ctx: EncodedContext,
                              y_onehot: np.ndarray | None,
                              resp_ids: Sequence[int]) -> tuple[float, np.ndarray]:
        """Reconstruction NLL of BOS..response..EOS plus per-step logits."""
        state = self.decoder_init(z, ctx, y_onehot)
        inputs = [BOS_ID] + list(resp_ids)
        targets = list(resp_ids) + [EOS_ID]
        loss = 0.0
        all_logits = []
        for prev, tgt in zip(inputs, targets):
            state, logits = self.decoder_step(prev, state, y_onehot)
            all_logits.append(logits)
            loss += core.softmax_xent(logits, tgt)
        return loss, np.stack(all_logits)
