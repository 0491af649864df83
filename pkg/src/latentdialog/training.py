"""Mini-batch training with KL annealing, clipping, and deterministic replay.

Randomness policy: every stochastic event draws from a stream derived
from (seed, purpose, indices) — ("init",) for parameter init,
("shuffle", epoch) for batch order, ("noise", step) for reparametrization
noise, ("valnoise",) for validation noise keyed to example order. A run
that resumes from a checkpoint at step k therefore consumes exactly the
same streams from step k onward as an uninterrupted run.
"""

from __future__ import annotations

import io
import json
import logging
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import DialogModel, EncodedPair, ModelConfig, make_batch
from .numeric import rng as _rng
from .numeric.core import ModelParams
from .numeric.optim import AdamState, adam_step, clip_gradients

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "latentdialog-ckpt-1"
PRNG_SCHEME = "philox-splitmix-derived-v1"

# Fixed zip entry timestamp so checkpoint bytes depend only on contents.
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(RuntimeError):
    """Raised when a checkpoint archive is inconsistent or truncated."""


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 30
    clip_norm: float = 5.0
    anneal_batches: int = 10_000
    max_steps: int = 1000
    eval_interval: int = 200
    seed: int = 0
    schedule: str = "linear"  # none | linear
    freeze_embeddings: bool = False

    def validate(self) -> None:
        if self.schedule not in ("none", "linear"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.anneal_batches < 1:
            raise ValueError("anneal_batches must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.eval_interval < 1:
            raise ValueError("eval_interval must be >= 1")

    def to_json(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "clip_norm": self.clip_norm,
            "anneal_batches": self.anneal_batches,
            "max_steps": self.max_steps,
            "eval_interval": self.eval_interval,
            "seed": self.seed,
            "schedule": self.schedule,
            "freeze_embeddings": self.freeze_embeddings,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        return cls(**obj)


def kl_weight(step: int, cfg: TrainConfig) -> float:
    """Annealing weight for the KL term at a given (0-based) step."""
    if cfg.schedule == "none":
        return 1.0
    return min(1.0, step / cfg.anneal_batches)


@dataclass
class TrainLog:
    """Step and eval records, JSONL-serializable.

    Step records log the reconstruction per target token (so values are
    comparable across batches of different lengths) and the per-example
    means of kl/bow/act, plus the exact kl_weight and clip scale used.
    """

    records: list[dict] = field(default_factory=list)

    def add_eval(self, step: int, bound: float, perplexity: float,
                 kl_cost: float | None, best: bool) -> None:
        self.records.append({
            "kind": "eval",
            "step": step,
            "bound": bound,
            "perplexity": perplexity,
            "kl_cost": kl_cost,
            "best": best,
        })

    def steps(self) -> list[dict]:
        return [r for r in self.records if r["kind"] == "step"]

    def evals(self) -> list[dict]:
        return [r for r in self.records if r["kind"] == "eval"]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for r in self.records:
                f.write(json.dumps(r, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "TrainLog":
        records = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    records.append(json.loads(line))
        return cls(records=records)


# ---------------- checkpoints ----------------

def _blob(arrays: Sequence[np.ndarray], dtype) -> bytes:
    buf = io.BytesIO()
    for a in arrays:
        buf.write(np.ascontiguousarray(a, dtype=dtype).tobytes())
    return buf.getvalue()


def save_checkpoint(path, config: ModelConfig, params: ModelParams, *,
                    step: int, seed: int, optimizer: AdamState | None = None,
                    extra: dict | None = None) -> None:
    """Write a checkpoint archive: JSON manifest + raw little-endian blobs.

    params.bin holds every parameter concatenated in manifest order as
    little-endian float32 (float64 when the params store is 64-bit).
    optim.bin, when present, holds the Adam m then v buffers in the same
    parameter order. Bytes are fully determined by the contents.
    """
    dtype = "<f8" if params.dtype == np.float64 else "<f4"
    names = params.names()
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "config": config.to_json(),
        "dtype": dtype,
        "params": [[n, list(params.value(n).shape)] for n in names],
        "step": int(step),
        "prng": {"scheme": PRNG_SCHEME, "seed": int(seed)},
        "optimizer": None,
        "extra": extra or {},
    }
    if optimizer is not None:
        manifest["optimizer"] = {
            "lr": optimizer.lr, "beta1": optimizer.beta1, "beta2": optimizer.beta2,
            "eps": optimizer.eps, "step": optimizer.step, "slots": ["m", "v"],
        }
    payload = {"manifest.json": json.dumps(manifest, sort_keys=True, indent=1).encode()}
    payload["params.bin"] = _blob([params.value(n) for n in names], dtype)
    if optimizer is not None:
        payload["optim.bin"] = _blob(
            [optimizer.m[n] for n in names] + [optimizer.v[n] for n in names], dtype)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, data in payload.items():
            info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
            zf.writestr(info, data)


def _split_blob(blob: bytes, names: Sequence[str], shapes: dict[str, tuple], dtype,
                what: str) -> dict[str, np.ndarray]:
    itemsize = np.dtype(dtype).itemsize
    expected = sum(int(np.prod(shapes[n])) for n in names) * itemsize
    if len(blob) != expected:
        raise CheckpointError(f"{what} blob has {len(blob)} bytes, expected {expected}")
    out = {}
    offset = 0
    for n in names:
        count = int(np.prod(shapes[n]))
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
        out[n] = arr.reshape(shapes[n]).copy()
        offset += count * itemsize
    return out


def load_checkpoint(path) -> tuple[ModelConfig, ModelParams, dict, AdamState | None]:
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"unknown checkpoint format {manifest.get('format')!r}")
        dtype = np.dtype(manifest["dtype"])
        names = [n for n, _ in manifest["params"]]
        shapes = {n: tuple(s) for n, s in manifest["params"]}
        values = _split_blob(zf.read("params.bin"), names, shapes, dtype, "params")
        params = ModelParams(dtype)
        for n in names:
            params.add(n, values[n])
        optimizer = None
        if manifest.get("optimizer") is not None:
            om = manifest["optimizer"]
            blob = zf.read("optim.bin")
            halves = _split_blob(blob, [f"m.{n}" for n in names] + [f"v.{n}" for n in names],
                                 {**{f"m.{n}": shapes[n] for n in names},
                                  **{f"v.{n}": shapes[n] for n in names}},
                                 dtype, "optimizer")
            optimizer = AdamState(lr=om["lr"], beta1=om["beta1"], beta2=om["beta2"],
                                  eps=om["eps"], step=om["step"])
            for n in names:
                optimizer.m[n] = halves[f"m.{n}"]
                optimizer.v[n] = halves[f"v.{n}"]
    config = ModelConfig.from_json(manifest["config"])
    return config, params, manifest, optimizer


# ---------------- evaluation ----------------

def _chunks(n: int, size: int):
    for lo in range(0, n, size):
        yield lo, min(lo + size, n)


def _dataset_terms(model: DialogModel, pairs: Sequence[EncodedPair], noise: np.ndarray | None,
                   batch_size: int = 64) -> dict[str, np.ndarray]:
    """Per-example loss terms over a dataset, in dataset order."""
    rows = {"recon": [], "kl": [], "bow": [], "act": [], "tokens": []}
    for lo, hi in _chunks(len(pairs), batch_size):
        batch = make_batch(pairs[lo:hi], dtype=model.params.dtype)
        terms = model.batch_terms(batch, noise[lo:hi] if noise is not None else None)
        for k in rows:
            rows[k].append(terms[k])
    return {k: np.concatenate(v) for k, v in rows.items()}


def validation_noise(seed: int, n: int, latent_dim: int) -> np.ndarray:
    return _rng.stream(seed, "valnoise").normal((n, latent_dim), dtype=np.float32)


def validation_bound(model: DialogModel, pairs: Sequence[EncodedPair],
                     noise: np.ndarray | None, batch_size: int = 64) -> tuple[float, float, float | None]:
    """(mean per-example bound with KL weight 1, perplexity, mean KL)."""
    terms = _dataset_terms(model, pairs, noise, batch_size)
    bound = float(np.mean(terms["recon"] + terms["kl"] + terms["bow"] + terms["act"]))
    ppl = float(np.exp(terms["recon"].sum() / terms["tokens"].sum()))
    kl_cost = None if model.config.variant == "baseline" else float(np.mean(terms["kl"]))
    return bound, ppl, kl_cost


def evaluate_elbo(model: DialogModel, pairs: Sequence[EncodedPair], seed: int = 0,
                  batch_size: int = 64) -> tuple[float, float | None]:
    """(reconstruction perplexity, mean KL cost; None for the baseline).

    Perplexity = exp(total teacher-forced NLL / total target tokens),
    with one recognition-network sample per example drawn from the
    ("elbonoise",) stream keyed to dataset order.
    """
    if not pairs:
        raise ValueError("evaluate_elbo needs a non-empty dataset")
    noise = None
    if model.config.variant != "baseline":
        noise = _rng.stream(seed, "elbonoise").normal(
            (len(pairs), model.config.latent_dim), dtype=np.float32)
    terms = _dataset_terms(model, pairs, noise, batch_size)
    ppl = float(np.exp(terms["recon"].sum() / terms["tokens"].sum()))
    kl_cost = None if model.config.variant == "baseline" else float(np.mean(terms["kl"]))
    return ppl, kl_cost


# ---------------- the training loop ----------------

@dataclass
class TrainResult:
    best_path: str
    last_path: str
    log: TrainLog
    best_bound: float
    steps: int


def train(cfg: TrainConfig, model_cfg: ModelConfig,
          train_pairs: Sequence[EncodedPair], valid_pairs: Sequence[EncodedPair],
          out_dir, embeddings: np.ndarray | None = None,
          resume_from=None, checkpoint_extra: dict | None = None) -> TrainResult:
    """Train to cfg.max_steps, keeping the best-validation checkpoint.

    Batches are consecutive slices of a per-epoch shuffled pair order;
    the shuffle for epoch e comes from the ("shuffle", e) stream, so a
    resumed run revisits the identical batch sequence.
    """
    cfg.validate()
    model_cfg.validate()
    if not train_pairs or not valid_pairs:
        raise ValueError("train and validation splits must be non-empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    best_path = out_dir / "best.ckpt"
    last_path = out_dir / "last.ckpt"

    if resume_from is not None:
        loaded_cfg, params, manifest, optimizer = load_checkpoint(resume_from)
        if loaded_cfg.to_json() != model_cfg.to_json():
            raise CheckpointError("resume checkpoint config does not match the requested config")
        if optimizer is None:
            raise CheckpointError("resume requires a checkpoint with optimizer state")
        model = DialogModel(model_cfg, params=params)
        step = int(manifest["step"])
        best_bound = manifest["extra"].get("best_bound", float("inf"))
    else:
        model = DialogModel(model_cfg, init_seed=cfg.seed)
        if embeddings is not None:
            model.set_embeddings(embeddings)
        optimizer = AdamState.for_params(model.params, lr=cfg.learning_rate)
        step = 0
        best_bound = float("inf")

    latent = model_cfg.latent_dim if model_cfg.variant != "baseline" else None
    val_noise = None
    if latent is not None:
        val_noise = validation_noise(cfg.seed, len(valid_pairs), latent)

    n = len(train_pairs)
    n_batches = (n + cfg.batch_size - 1) // cfg.batch_size
    logbook = TrainLog()

    def ckpt_extra() -> dict:
        return {**(checkpoint_extra or {}),
                "best_bound": best_bound, "train_config": cfg.to_json()}

    def run_eval(at_step: int) -> None:
        nonlocal best_bound
        bound, ppl, kl_cost = validation_bound(model, valid_pairs, val_noise)
        is_best = bound < best_bound
        if is_best:
            best_bound = bound
            save_checkpoint(best_path, model_cfg, model.params, step=at_step,
                            seed=cfg.seed, optimizer=optimizer, extra=ckpt_extra())
        logbook.add_eval(at_step, bound, ppl, kl_cost, is_best)

    while step < cfg.max_steps:
        epoch = step // n_batches
        index_in_epoch = step % n_batches
        perm = _rng.stream(cfg.seed, "shuffle", epoch).permutation(n)
        while index_in_epoch < n_batches and step < cfg.max_steps:
            lo = index_in_epoch * cfg.batch_size
            idx = perm[lo:lo + cfg.batch_size]
            batch = make_batch([train_pairs[i] for i in idx], dtype=model.params.dtype)
            noise = None
            if latent is not None:
                noise = _rng.stream(cfg.seed, "noise", step).normal(
                    (batch.size, latent), dtype=np.float32)
            w = kl_weight(step, cfg)
            model.params.zero_grad()
            breakdown = model.batch_loss(batch, w, noise, compute_grad=True)
            if not np.isfinite(breakdown.total):
                raise RuntimeError(
                    f"non-finite loss at step {step}: recon={breakdown.reconstruction} "
                    f"kl={breakdown.kl} bow={breakdown.bow} act={breakdown.act}")
            if cfg.freeze_embeddings:
                model.params.grad("embedding")[...] = 0.0
            clip_scale = clip_gradients(model.params, cfg.clip_norm)
            adam_step(optimizer, model.params)
            logbook.records.append({
                "kind": "step",
                "step": step,
                "reconstruction": breakdown.reconstruction * batch.size / breakdown.token_count,
                "kl": breakdown.kl,
                "bow": breakdown.bow,
                "act": breakdown.act,
                "kl_weight": w,
                "clip_scale": clip_scale,
                "token_count": breakdown.token_count,
            })
            step += 1
            index_in_epoch += 1
            if step % cfg.eval_interval == 0 or step == cfg.max_steps:
                run_eval(step)

    save_checkpoint(last_path, model_cfg, model.params, step=step, seed=cfg.seed,
                    optimizer=optimizer, extra=ckpt_extra())
    if not best_path.exists():
        # Possible only if no eval ever ran, which cannot happen
        # (the final step always evaluates); kept as a guard.
        save_checkpoint(best_path, model_cfg, model.params, step=step, seed=cfg.seed,
                        optimizer=optimizer, extra=ckpt_extra())
    return TrainResult(best_path=str(best_path), last_path=str(last_path),
                       log=logbook, best_bound=best_bound, steps=step)
