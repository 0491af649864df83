"""Command-line entry point: reproducible runs driven by JSON configs.

Subcommands: prep, train, generate, evaluate, collect-refs, probe,
export-latents, synth. Flags override config-file keys; every run writes
a manifest (command, resolved config, seed, input hashes, duration) next
to its outputs. Exit codes: 0 success, 1 validation error (bad flags,
malformed inputs), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import evaluation as eval_mod
from . import generation as gen_mod
from . import synth as synth_mod
from . import training as train_mod
from .corpus import CorpusError, LookupTagger, Vocabulary
from .model import DialogModel, ModelConfig, encode_pair
from .training import CheckpointError, TrainConfig

log = logging.getLogger(__name__)


class _ArgumentParser(argparse.ArgumentParser):
    """argparse that exits with code 1 (not 2) on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


MODEL_DEFAULTS = {
    "variant": "cvae",
    "emb_dim": 200,
    "utt_hidden": 300,
    "ctx_hidden": 600,
    "dec_hidden": 400,
    "latent_dim": 200,
    "mlp_hidden": 400,
    "context_window": 10,
    "max_decode_len": 40,
    "use_bow": True,
}

TRAIN_DEFAULTS = {
    "learning_rate": 0.001,
    "batch_size": 30,
    "clip_norm": 5.0,
    "anneal_batches": 10_000,
    "max_steps": 1000,
    "eval_interval": 200,
    "seed": 0,
    "schedule": "linear",
    "freeze_embeddings": False,
}

DATA_DEFAULTS = {
    "train": None,
    "valid": None,
    "test": None,
    "vocab_cap": 10_000,
    "embeddings": None,
    "tagger": None,
}


def default_config() -> dict:
    return {
        "model": dict(MODEL_DEFAULTS),
        "train": dict(TRAIN_DEFAULTS),
        "data": dict(DATA_DEFAULTS),
    }


def load_config(path: str | None) -> dict:
    cfg = default_config()
    if path is None:
        return cfg
    with open(path, encoding="utf-8") as f:
        user = json.load(f)
    for section in ("model", "train", "data"):
        sub = user.get(section, {})
        unknown = set(sub) - set(cfg[section])
        if unknown:
            raise CorpusError(f"unknown config keys in {section!r}: {sorted(unknown)}")
        cfg[section].update(sub)
    return cfg


def _apply_flag_overrides(cfg: dict, args) -> dict:
    if getattr(args, "variant", None):
        cfg["model"]["variant"] = args.variant
    if getattr(args, "bow", None):
        cfg["model"]["use_bow"] = args.bow == "on"
    if getattr(args, "kla", None):
        cfg["train"]["schedule"] = args.kla
    if getattr(args, "seed", None) is not None:
        cfg["train"]["seed"] = args.seed
    return cfg


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, command: str, cfg: dict, seed: int,
                    inputs: dict[str, str], outputs: dict[str, str], t0: float) -> None:
    manifest = {
        "command": command,
        "config": cfg,
        "seed": seed,
        "inputs": inputs,
        "input_hashes": {str(p): _sha256(p) for p in inputs.values() if p and Path(p).exists()},
        "outputs": outputs,
        "duration_s": time.time() - t0,
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, indent=1)
        f.write("\n")


def _load_split(path, k: int, topics, tagger):
    dialogs = corpus_mod.load_corpus(path)
    return dialogs, corpus_mod.slice_corpus(dialogs, k, topics, tagger)


def _load_tagger(path) -> LookupTagger | None:
    return LookupTagger.load(path) if path else None


def _model_from_checkpoint(path) -> tuple[DialogModel, Vocabulary, dict]:
    config, params, manifest, _ = train_mod.load_checkpoint(path)
    extra = manifest.get("extra", {})
    if "vocab" not in extra or "labels" not in extra:
        raise CheckpointError("checkpoint lacks the vocab/labels needed for this command")
    vocab = Vocabulary.from_manifest(extra["vocab"])
    return DialogModel(config, params=params), vocab, extra["labels"]


def _encode_split(pairs, vocab, acts):
    return [encode_pair(p, vocab, acts) for p in pairs]


# ---------------- subcommands ----------------

def _cmd_prep(args) -> int:
    cfg = _apply_flag_overrides(load_config(args.config), args)
    data = cfg["data"]
    train_path = args.data or data["train"]
    if not train_path:
        raise CorpusError("prep needs --data or config data.train")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    dialogs = corpus_mod.load_corpus(train_path)
    labels = corpus_mod.discover_labels(dialogs)
    vocab = corpus_mod.build_vocab(dialogs, cap=data["vocab_cap"])
    tagger = _load_tagger(args.tagger or data["tagger"])
    k = cfg["model"]["context_window"]
    pairs = corpus_mod.slice_corpus(dialogs, k, labels.topics, tagger)
    with open(out_dir / "vocab.json", "w", encoding="utf-8") as f:
        json.dump(vocab.to_manifest(), f, sort_keys=True, indent=1)
    labels_obj = {"topics": labels.topics, "acts": labels.acts, "sentiments": labels.sentiments}
    with open(out_dir / "labels.json", "w", encoding="utf-8") as f:
        json.dump(labels_obj, f, sort_keys=True, indent=1)
    report = {
        "dialogs": len(dialogs),
        "pairs": len(pairs),
        "vocab_size": vocab.size,
        "topics": len(labels.topics),
        "acts": len(labels.acts),
        "context_window": k,
    }
    with open(out_dir / "prep_report.json", "w", encoding="utf-8") as f:
        json.dump(report, f, sort_keys=True, indent=1)
    _write_manifest(out_dir, "prep", cfg, cfg["train"]["seed"], {"train": str(train_path)},
                    {"vocab": "vocab.json", "labels": "labels.json", "report": "prep_report.json"}, t0)
    print(json.dumps(report, sort_keys=True))
    return 0


def _cmd_train(args) -> int:
    cfg = _apply_flag_overrides(load_config(args.config), args)
    data = cfg["data"]
    train_path = args.data or data["train"]
    valid_path = args.valid or data["valid"] or train_path
    if not train_path:
        raise CorpusError("train needs --data or config data.train")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()

    train_dialogs = corpus_mod.load_corpus(train_path)
    labels = corpus_mod.discover_labels(train_dialogs)
    tagger = _load_tagger(args.tagger or data["tagger"])
    vocab = corpus_mod.build_vocab(train_dialogs, cap=data["vocab_cap"])
    k = cfg["model"]["context_window"]
    train_pairs = corpus_mod.slice_corpus(train_dialogs, k, labels.topics, tagger)
    valid_dialogs = corpus_mod.load_corpus(valid_path)
    valid_pairs = corpus_mod.slice_corpus(valid_dialogs, k, labels.topics, tagger)

    model_cfg = ModelConfig(
        vocab_size=vocab.size, n_topics=len(labels.topics), n_acts=len(labels.acts),
        **cfg["model"],
    )
    train_cfg = TrainConfig(**cfg["train"])
    embeddings = None
    if data["embeddings"]:
        embeddings, coverage = corpus_mod.load_embeddings(
            data["embeddings"], vocab, cfg["model"]["emb_dim"], seed=train_cfg.seed)
        log.info("embedding coverage: %.3f", coverage)

    enc_train = _encode_split(train_pairs, vocab, labels.acts)
    enc_valid = _encode_split(valid_pairs, vocab, labels.acts)

    labels_obj = {"topics": labels.topics, "acts": labels.acts, "sentiments": labels.sentiments}
    result = _run_training(train_cfg, model_cfg, enc_train, enc_valid, out_dir,
                           vocab, labels_obj, embeddings, args.resume)
    _write_manifest(out_dir, "train", cfg, train_cfg.seed,
                    {"train": str(train_path), "valid": str(valid_path)},
                    {"best": "best.ckpt", "last": "last.ckpt", "log": "train_log.jsonl"}, t0)
    summary = {"steps": result.steps, "best_bound": result.best_bound,
               "best": result.best_path, "last": result.last_path}
    print(json.dumps(summary, sort_keys=True))
    return 0


def _run_training(train_cfg, model_cfg, enc_train, enc_valid, out_dir,
                  vocab, labels_obj, embeddings, resume):
    """train() plus vocab/labels embedding into both checkpoints' manifests."""
    result = train_mod.train(train_cfg, model_cfg, enc_train, enc_valid, out_dir,
                             embeddings=embeddings, resume_from=resume,
                             checkpoint_extra={"vocab": vocab.to_manifest(), "labels": labels_obj})
    result.log.save(Path(out_dir) / "train_log.jsonl")
    return result


def _cmd_generate(args) -> int:
    cfg = _apply_flag_overrides(load_config(args.config), args)
    model, vocab, labels_obj = _model_from_checkpoint(args.ckpt)
    tagger = _load_tagger(args.tagger or cfg["data"]["tagger"])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    seed = cfg["train"]["seed"]
    _, pairs = _load_split(args.data, model.config.context_window, labels_obj["topics"], tagger)
    enc = _encode_split(pairs, vocab, labels_obj["acts"])
    all_hyps = []
    for i, epair in enumerate(enc):
        all_hyps.append(gen_mod.sample_responses(
            model, epair, n=args.n_samples, seed=seed, context_index=i,
            vocab=vocab, acts=labels_obj["acts"]))
    gen_path = out_dir / "hyps.jsonl"
    gen_mod.write_generations(gen_path, all_hyps)
    _write_manifest(out_dir, "generate", cfg, seed,
                    {"ckpt": args.ckpt, "data": args.data}, {"hyps": "hyps.jsonl"}, t0)
    print(json.dumps({"contexts": len(enc), "n_samples": args.n_samples}, sort_keys=True))
    return 0


def _metric_kinds(metric: str) -> list[str]:
    if metric == "all":
        return list(eval_mod.DISTANCE_KINDS)
    if metric == "bleu":
        return ["bleu1", "bleu2", "bleu3", "bleu4"]
    return [metric]


def _cmd_evaluate(args) -> int:
    cfg = _apply_flag_overrides(load_config(args.config), args)
    model, vocab, labels_obj = _model_from_checkpoint(args.ckpt)
    tagger = _load_tagger(args.tagger or cfg["data"]["tagger"])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    seed = cfg["train"]["seed"]

    _, pairs = _load_split(args.data, model.config.context_window, labels_obj["topics"], tagger)
    enc = _encode_split(pairs, vocab, labels_obj["acts"])
    ppl, kl_cost = train_mod.evaluate_elbo(model, enc, seed=seed)

    refsets = eval_mod.read_references(args.refs)
    gen_rows = gen_mod.read_generations(args.gen)
    kinds = _metric_kinds(args.metric)
    table = None
    if {"abow", "ebow"} & set(kinds):
        emb_path = args.embeddings or cfg["data"]["embeddings"]
        if not emb_path:
            raise CorpusError("abow/ebow metrics need --embeddings")
        table = eval_mod.WordVectors.load(emb_path)
    if "da" in kinds and tagger is None:
        raise CorpusError("the da metric needs --tagger to label hypotheses")

    hypsets: dict[int, list[eval_mod.Reference]] = {}
    for row in gen_rows:
        hyps = []
        for h in row["hyps"]:
            act = tagger(h["tokens"]) if tagger is not None else h.get("act")
            hyps.append(eval_mod.Reference(tokens=h["tokens"], act=act))
        hypsets[row["context_id"]] = hyps

    report: dict[str, float | None] = {k: None for k in eval_mod.REPORT_KEYS}
    report["perplexity"] = ppl
    report["kl_cost"] = kl_cost
    for kind in kinds:
        d = eval_mod.DistanceFn(kind, table=table if kind in ("abow", "ebow") else None)
        p, r = eval_mod.corpus_prec_recall(refsets, hypsets, d)
        report[f"{kind}_prec"] = p
        report[f"{kind}_rec"] = r
    report_path = out_dir / "report.json"
    with open(report_path, "w", encoding="utf-8") as f:
        json.dump(report, f, sort_keys=True, indent=1)
        f.write("\n")
    _write_manifest(out_dir, "evaluate", cfg, seed,
                    {"ckpt": args.ckpt, "data": args.data, "gen": args.gen, "refs": args.refs},
                    {"report": "report.json"}, t0)
    print(json.dumps(report, sort_keys=True))
    return 0


def _cmd_collect_refs(args) -> int:
    cfg = _apply_flag_overrides(load_config(args.config), args)
    tagger = _load_tagger(args.tagger or cfg["data"]["tagger"])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    k = cfg["model"]["context_window"]
    train_dialogs = corpus_mod.load_corpus(args.train_data)
    topics = corpus_mod.discover_labels(train_dialogs).topics
    train_pairs = corpus_mod.slice_corpus(train_dialogs, k, topics, tagger)
    _, test_pairs = _load_split(args.data, k, topics, tagger)
    refsets = eval_mod.collect_references_corpus(test_pairs, train_pairs, top_k=args.top_k)
    refs_path = out_dir / "refs.jsonl"
    eval_mod.write_references(refs_path, refsets)
    _write_manifest(out_dir, "collect-refs", cfg, cfg["train"]["seed"],
                    {"data": args.data, "train": args.train_data}, {"refs": "refs.jsonl"}, t0)
    print(json.dumps({"contexts": len(refsets)}, sort_keys=True))
    return 0


def _cmd_probe(args) -> int:
    cfg = _apply_flag_overrides(load_config(args.config), args)
    model, vocab, labels_obj = _model_from_checkpoint(args.ckpt)
    tagger = _load_tagger(args.tagger or cfg["data"]["tagger"])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    seed = cfg["train"]["seed"]
    _, pairs = _load_split(args.data, model.config.context_window, labels_obj["topics"], tagger)
    enc = _encode_split(pairs, vocab, labels_obj["acts"])
    if args.label_field == "act":
        labels = [p.response_act for p in pairs]
    else:
        labels = [p.response.sentiment for p in pairs]
    keep = [i for i, (l, e) in enumerate(zip(labels, enc))
            if l is not None and (model.config.variant != "kgcvae" or e.act_id is not None)]
    if len(keep) < len(pairs):
        log.warning("probe: dropped %d unlabeled pairs", len(pairs) - len(keep))
    enc = [enc[i] for i in keep]
    labels = [labels[i] for i in keep]
    z = eval_mod.posterior_means(model, enc)
    report = eval_mod.latent_probe(z, labels, seed=seed)
    obj = {
        "accuracy": report.accuracy,
        "n_train": report.n_train,
        "n_test": report.n_test,
        "classes": report.classes,
        "chance_majority": report.chance_majority,
        "chance_uniform": report.chance_uniform,
        "iterations": report.iterations,
        "label_field": args.label_field,
    }
    with open(out_dir / "probe.json", "w", encoding="utf-8") as f:
        json.dump(obj, f, sort_keys=True, indent=1)
        f.write("\n")
    _write_manifest(out_dir, "probe", cfg, seed,
                    {"ckpt": args.ckpt, "data": args.data}, {"probe": "probe.json"}, t0)
    print(json.dumps(obj, sort_keys=True))
    return 0


def _cmd_export_latents(args) -> int:
    cfg = _apply_flag_overrides(load_config(args.config), args)
    model, vocab, labels_obj = _model_from_checkpoint(args.ckpt)
    tagger = _load_tagger(args.tagger or cfg["data"]["tagger"])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    _, pairs = _load_split(args.data, model.config.context_window, labels_obj["topics"], tagger)
    enc = _encode_split(pairs, vocab, labels_obj["acts"])
    if model.config.variant == "kgcvae":
        kept = [(e, p) for e, p in zip(enc, pairs) if e.act_id is not None]
        enc, pairs = [e for e, _ in kept], [p for _, p in kept]
    n = eval_mod.export_latents(model, enc, pairs, out_dir / "latents.jsonl")
    _write_manifest(out_dir, "export-latents", cfg, cfg["train"]["seed"],
                    {"ckpt": args.ckpt, "data": args.data}, {"latents": "latents.jsonl"}, t0)
    print(json.dumps({"rows": n}, sort_keys=True))
    return 0


def _cmd_synth(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    seed = args.seed if args.seed is not None else 0
    if args.kind == "latent8":
        bundle = synth_mod.latent8_bundle(n_pairs=args.pairs, seed=seed)
    elif args.kind == "memorize50":
        bundle = synth_mod.memorize50_bundle(seed=seed)
    else:
        raise CorpusError(f"unknown synthetic corpus kind {args.kind!r}")
    corpus_mod.save_corpus(out_dir / "train.jsonl", bundle.train)
    corpus_mod.save_corpus(out_dir / "valid.jsonl", bundle.valid)
    corpus_mod.save_corpus(out_dir / "test.jsonl", bundle.test)
    synth_mod.write_word_vectors(out_dir / "embeddings.txt",
                                 bundle.train + bundle.valid + bundle.test, seed=0)
    outputs = {"train": "train.jsonl", "valid": "valid.jsonl", "test": "test.jsonl",
               "embeddings": "embeddings.txt"}
    if bundle.tagger is not None:
        bundle.tagger.save(out_dir / "tagger.json")
        outputs["tagger"] = "tagger.json"
    if bundle.refsets:
        eval_mod.write_references(out_dir / "refs.jsonl", bundle.refsets)
        outputs["refs"] = "refs.jsonl"
    labels_obj = {"topics": bundle.topics, "acts": bundle.acts, "sentiments": []}
    with open(out_dir / "labels.json", "w", encoding="utf-8") as f:
        json.dump(labels_obj, f, sort_keys=True, indent=1)
    outputs["labels"] = "labels.json"
    cfg = {"kind": args.kind, "pairs": args.pairs}
    _write_manifest(out_dir, "synth", cfg, seed, {}, outputs, t0)
    print(json.dumps({"kind": args.kind, "train_dialogs": len(bundle.train)}, sort_keys=True))
    return 0


# ---------------- parser ----------------

def build_parser() -> _ArgumentParser:
    parser = _ArgumentParser(prog="latentdialog",
                             description="Latent-variable dialog models: train, sample, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="run seed (overrides config)")
        if out:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("prep", help="corpus -> vocabulary, labels, pair counts")
    common(p)
    p.add_argument("--data", default=None, help="training corpus JSONL")
    p.add_argument("--tagger", default=None, help="lookup tagger JSON")

    p = sub.add_parser("train", help="train a model variant")
    common(p)
    p.add_argument("--data", default=None, help="training corpus JSONL")
    p.add_argument("--valid", default=None, help="validation corpus JSONL")
    p.add_argument("--variant", choices=["baseline", "cvae", "kgcvae"], default=None)
    p.add_argument("--bow", choices=["on", "off"], default=None, help="bag-of-words loss")
    p.add_argument("--kla", choices=["none", "linear"], default=None, help="KL annealing schedule")
    p.add_argument("--tagger", default=None)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")

    p = sub.add_parser("generate", help="sample N hypotheses per test context")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="test corpus JSONL")
    p.add_argument("--n-samples", type=int, default=5)
    p.add_argument("--tagger", default=None)

    p = sub.add_parser("evaluate", help="metrics report for a generation file")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="test corpus JSONL")
    p.add_argument("--gen", required=True, help="generation JSONL")
    p.add_argument("--refs", required=True, help="reference JSONL")
    p.add_argument("--embeddings", default=None, help="word vectors for abow/ebow")
    p.add_argument("--tagger", default=None)
    p.add_argument("--metric", choices=["bleu", "abow", "ebow", "da", "all"], default="all")

    p = sub.add_parser("collect-refs", help="nearest-neighbor reference sets")
    common(p)
    p.add_argument("--data", required=True, help="test corpus JSONL")
    p.add_argument("--train-data", required=True, help="training corpus JSONL")
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--tagger", default=None)

    p = sub.add_parser("probe", help="linear probe on posterior means")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--label-field", choices=["act", "sentiment"], default="act")
    p.add_argument("--tagger", default=None)

    p = sub.add_parser("export-latents", help="posterior means to JSONL")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--tagger", default=None)

    p = sub.add_parser("synth", help="emit a synthetic corpus")
    common(p)
    p.add_argument("--kind", choices=["latent8", "memorize50"], required=True)
    p.add_argument("--pairs", type=int, default=4000)

    return parser


_DISPATCH = {
    "prep": _cmd_prep,
    "train": _cmd_train,
    "generate": _cmd_generate,
    "evaluate": _cmd_evaluate,
    "collect-refs": _cmd_collect_refs,
    "probe": _cmd_probe,
    "export-latents": _cmd_export_latents,
    "synth": _cmd_synth,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _DISPATCH[args.command](args)
    except (CorpusError, CheckpointError, FileNotFoundError, json.JSONDecodeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
