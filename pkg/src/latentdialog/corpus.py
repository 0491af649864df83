"""Dialog corpus ingestion, vocabulary construction, and context-response slicing.

Corpus files are JSONL, one dialog per line:

    {"topic": str, "utts": [{"speaker": "A"|"B", "tokens": [str, ...],
                             "act": str|null, "sentiment": str|null}, ...]}

Dialogs are sliced into (context, response) training pairs with a sliding
window: the response at utterance t is conditioned on up to k-1 preceding
utterances, each carrying a floor bit (1 iff spoken by the responder).
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .numeric import rng as _rng

log = logging.getLogger(__name__)

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3
SPECIALS = (PAD, UNK, BOS, EOS)

VALID_SPEAKERS = ("A", "B")


class CorpusError(ValueError):
    """Raised for malformed corpus files or invalid corpus inputs."""


@dataclass
class Utterance:
    tokens: list[str]
    speaker: str
    act: str | None = None
    sentiment: str | None = None


@dataclass
class Dialog:
    topic: str
    utterances: list[Utterance]


@dataclass
class ContextResponsePair:
    """One training unit: response + up to k-1 context utterances.

    floors[i] = 1 iff context[i] was spoken by the response's speaker.
    meta is the one-hot topic vector (sums to 1).
    """

    context: list[Utterance]
    floors: list[int]
    meta: np.ndarray
    response: Utterance
    response_act: str | None
    topic: str

    def __post_init__(self):
        if not (1 <= len(self.context)):
            raise CorpusError("context must be non-empty")
        if len(self.floors) != len(self.context):
            raise CorpusError("one floor bit per context utterance required")


@dataclass
class Vocabulary:
    """Frequency-capped token<->id bijection with reserved specials 0..3."""

    token_to_id: dict[str, int]
    id_to_token: list[str]

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        t2i = self.token_to_id
        return [t2i.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def to_manifest(self) -> dict[str, int]:
        return dict(self.token_to_id)

    @classmethod
    def from_manifest(cls, manifest: dict[str, int]) -> "Vocabulary":
        items = sorted(manifest.items(), key=lambda kv: kv[1])
        ids = [i for _, i in items]
        if ids != list(range(len(ids))):
            raise CorpusError("vocabulary manifest ids must be 0..n-1 with no gaps")
        id_to_token = [t for t, _ in items]
        for sid, surface in zip((PAD_ID, UNK_ID, BOS_ID, EOS_ID), SPECIALS):
            if id_to_token[sid] != surface:
                raise CorpusError(f"special token {surface!r} missing from id {sid}")
        return cls(token_to_id=dict(manifest), id_to_token=id_to_token)


@dataclass
class CorpusLabels:
    """Label sets discovered from data; recorded in the prep manifest."""

    topics: list[str]
    acts: list[str]
    sentiments: list[str] = field(default_factory=list)


Tagger = Callable[[Sequence[str]], str]


class LookupTagger:
    """Exact token-sequence -> act lookup with a default for misses.

    Stands in for a trained utterance tagger on synthetic corpora, where
    the mapping from surface form to act is known exactly.
    """

    def __init__(self, table: dict[tuple[str, ...], str], default: str = "other"):
        self.table = dict(table)
        self.default = default

    def __call__(self, tokens: Sequence[str]) -> str:
        return self.table.get(tuple(tokens), self.default)

    def labels(self) -> list[str]:
        return sorted(set(self.table.values()) | {self.default})

    def to_json(self) -> dict:
        return {
            "default": self.default,
            "entries": [{"tokens": list(k), "act": v} for k, v in sorted(self.table.items())],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LookupTagger":
        table = {tuple(e["tokens"]): e["act"] for e in obj["entries"]}
        return cls(table, default=obj["default"])

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, sort_keys=True, indent=2)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "LookupTagger":
        with open(path, encoding="utf-8") as f:
            return cls.from_json(json.load(f))


def _parse_utterance(obj: dict, line_no: int) -> Utterance | None:
    speaker = obj.get("speaker")
    if speaker not in VALID_SPEAKERS:
        raise CorpusError(f"line {line_no}: unknown speaker tag {speaker!r}")
    raw = obj.get("tokens")
    if not isinstance(raw, list) or not all(isinstance(t, str) for t in raw):
        raise CorpusError(f"line {line_no}: tokens must be a list of strings")
    tokens = [t.lower() for t in raw if t != ""]
    if not tokens:
        return None
    return Utterance(tokens=tokens, speaker=speaker, act=obj.get("act"), sentiment=obj.get("sentiment"))


def load_corpus(path) -> list[Dialog]:
    """Parse a JSONL corpus file into Dialogs, in file order.

    Tokens are lowercased; empty-string tokens and then empty utterances
    are dropped; dialogs left with fewer than 2 utterances are dropped.
    Drop counts are reported through the module logger.
    """
    dialogs: list[Dialog] = []
    dropped_utts = 0
    dropped_dialogs = 0
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"line {line_no}: malformed JSON ({e.msg})") from e
            topic = obj.get("topic")
            if not isinstance(topic, str):
                raise CorpusError(f"line {line_no}: topic must be a string")
            utts_raw = obj.get("utts")
            if not isinstance(utts_raw, list):
                raise CorpusError(f"line {line_no}: utts must be a list")
            utts = []
            for u in utts_raw:
                parsed = _parse_utterance(u, line_no)
                if parsed is None:
                    dropped_utts += 1
                else:
                    utts.append(parsed)
            if len(utts) < 2:
                dropped_dialogs += 1
                continue
            speakers = {u.speaker for u in utts}
            if not speakers <= set(VALID_SPEAKERS):
                raise CorpusError(f"line {line_no}: speakers outside the two-party tags")
            dialogs.append(Dialog(topic=topic, utterances=utts))
    if dropped_utts or dropped_dialogs:
        log.warning(
            "load_corpus(%s): dropped %d empty utterance(s) and %d short dialog(s)",
            path, dropped_utts, dropped_dialogs,
        )
    return dialogs


def build_vocab(dialogs: Sequence[Dialog], cap: int) -> Vocabulary:
    """Top-`cap` tokens by frequency (ties lexicographic), specials at 0..3."""
    if cap < 1:
        raise CorpusError("vocabulary cap must be >= 1")
    if not dialogs:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    counts: Counter[str] = Counter()
    for d in dialogs:
        for u in d.utterances:
            counts.update(u.tokens)
    for s in SPECIALS:
        counts.pop(s, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [t for t, _ in ranked[:cap]]
    id_to_token = list(SPECIALS) + kept
    token_to_id = {t: i for i, t in enumerate(id_to_token)}
    return Vocabulary(token_to_id=token_to_id, id_to_token=id_to_token)


def discover_labels(dialogs: Sequence[Dialog]) -> CorpusLabels:
    """Sorted label sets (topics, acts, sentiments) present in the data."""
    topics = sorted({d.topic for d in dialogs})
    acts = sorted({u.act for d in dialogs for u in d.utterances if u.act is not None})
    sentiments = sorted({u.sentiment for d in dialogs for u in d.utterances if u.sentiment is not None})
    return CorpusLabels(topics=topics, acts=acts, sentiments=sentiments)


def make_pairs(
    dialog: Dialog,
    k: int,
    topics: Sequence[str],
    tagger: Tagger | None = None,
) -> list[ContextResponsePair]:
    """Slice one dialog into pairs: response t vs context [t-(k-1), t).

    One pair per t in [1, len-1]. The response act comes from the
    utterance's label, or from `tagger` when the label is absent.
    """
    if k < 2:
        raise CorpusError("context window k must be >= 2")
    try:
        topic_idx = list(topics).index(dialog.topic)
    except ValueError:
        raise CorpusError(f"dialog topic {dialog.topic!r} not in topic set") from None
    meta = np.zeros(len(topics), dtype=np.float32)
    meta[topic_idx] = 1.0
    pairs = []
    utts = dialog.utterances
    for t in range(1, len(utts)):
        response = utts[t]
        context = utts[max(0, t - (k - 1)):t]
        floors = [1 if u.speaker == response.speaker else 0 for u in context]
        act = response.act
        if act is None and tagger is not None:
            act = tagger(response.tokens)
        pairs.append(
            ContextResponsePair(
                context=context,
                floors=floors,
                meta=meta,
                response=response,
                response_act=act,
                topic=dialog.topic,
            )
        )
    return pairs


def slice_corpus(
    dialogs: Sequence[Dialog],
    k: int,
    topics: Sequence[str],
    tagger: Tagger | None = None,
) -> list[ContextResponsePair]:
    """All pairs from all dialogs, dialog order preserved."""
    out: list[ContextResponsePair] = []
    for d in dialogs:
        out.extend(make_pairs(d, k, topics, tagger))
    return out


def load_embeddings(path, vocab: Vocabulary, dim: int, seed: int = 0) -> tuple[np.ndarray, float]:
    """Load a whitespace-separated embedding text file for `vocab`.

    Each line: token then `dim` decimal floats. Rows for tokens present
    in the file are copied verbatim; rows for missing tokens (specials
    included) are sampled uniform [-0.08, 0.08] from a seed-derived
    stream. Returns (matrix of shape (vocab.size, dim), coverage fraction).
    """
    found: dict[str, np.ndarray] = {}
    wanted = set(vocab.token_to_id)
    with open(path, encoding="utf-8") as f:
        for line in f:
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise CorpusError(
                    f"embedding row for token {token!r} has {len(values)} dims, expected {dim}"
                )
            if token in wanted and token not in found:
                found[token] = np.asarray([float(v) for v in values], dtype=np.float32)
    stream = _rng.stream(seed, "embeddings")
    matrix = stream.uniform(-0.08, 0.08, size=(vocab.size, dim), dtype=np.float32)
    hits = 0
    for token, row in found.items():
        matrix[vocab.token_to_id[token]] = row
        hits += 1
    coverage = hits / vocab.size
    log.info("load_embeddings(%s): coverage %.3f (%d/%d tokens)", path, coverage, hits, vocab.size)
    return matrix, coverage


def save_corpus(path, dialogs: Sequence[Dialog]) -> None:
    """Write dialogs as corpus JSONL (inverse of load_corpus)."""
    with open(path, "w", encoding="utf-8") as f:
        for d in dialogs:
            obj = {
                "topic": d.topic,
                "utts": [
                    {"speaker": u.speaker, "tokens": u.tokens, "act": u.act, "sentiment": u.sentiment}
                    for u in d.utterances
                ],
            }
            f.write(json.dumps(obj, sort_keys=True) + "\n")
