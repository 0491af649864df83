"""Multi-reference evaluation: distances, generalized precision/recall,
reference collection by context similarity, latent probing, consistency.

The response-level scores for one context with references r_1..r_M and
hypotheses h_1..h_N under a distance d in [0, 1]:

    precision = (1/N) sum_i max_j d(r_j, h_i)
    recall    = (1/M) sum_j max_i d(r_j, h_i)

Corpus scores are unweighted means over contexts.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .corpus import ContextResponsePair, LookupTagger, Tagger
from .model import DialogModel, EncodedPair, make_batch
from .numeric import rng as _rng

log = logging.getLogger(__name__)

DISTANCE_KINDS = ("bleu1", "bleu2", "bleu3", "bleu4", "abow", "ebow", "da")

REPORT_KEYS = (
    "perplexity", "kl_cost",
    "bleu1_prec", "bleu1_rec", "bleu2_prec", "bleu2_rec",
    "bleu3_prec", "bleu3_rec", "bleu4_prec", "bleu4_rec",
    "abow_prec", "abow_rec", "ebow_prec", "ebow_rec",
    "da_prec", "da_rec",
)


@dataclass
class Reference:
    tokens: list[str]
    act: str | None = None


@dataclass
class ReferenceSet:
    context_id: int
    refs: list[Reference]

    @classmethod
    def make(cls, context_id: int, refs: Sequence[Reference]) -> "ReferenceSet":
        """Deduplicate token-identical references, keeping first occurrence."""
        seen: set[tuple[str, ...]] = set()
        kept = []
        for r in refs:
            key = tuple(r.tokens)
            if key not in seen:
                seen.add(key)
                kept.append(r)
        if not kept:
            raise ValueError("a reference set needs at least one reference")
        return cls(context_id=context_id, refs=kept)


# ---------------- distances ----------------

def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def dist_bleu(r: Sequence[str], h: Sequence[str], n: int) -> float:
    """Smoothed sentence BLEU-n as a [0,1] distance.

    Geometric mean of modified n-gram precisions for orders 1..n, with
    add-one smoothing on numerator and denominator for orders >= 2
    (order 1 unsmoothed), times brevity penalty min(1, exp(1 - |r|/|h|)).
    """
    if not (1 <= n <= 4):
        raise ValueError("BLEU order must be in 1..4")
    if len(r) == 0 or len(h) == 0:
        log.warning("dist_bleu on an empty sentence returns 0")
        return 0.0
    log_p_sum = 0.0
    for order in range(1, n + 1):
        h_counts = _ngram_counts(h, order)
        r_counts = _ngram_counts(r, order)
        total = sum(h_counts.values())
        matches = sum(min(c, r_counts[g]) for g, c in h_counts.items())
        if order >= 2:
            p = (matches + 1.0) / (total + 1.0)
        else:
            if matches == 0:
                return 0.0
            p = matches / total
        log_p_sum += math.log(p)
    bp = min(1.0, math.exp(1.0 - len(r) / len(h)))
    return bp * math.exp(log_p_sum / n)


class WordVectors:
    """Token -> vector table for the A-bow / E-bow distances."""

    def __init__(self, vectors: dict[str, np.ndarray], dim: int):
        self.vectors = vectors
        self.dim = dim

    @classmethod
    def load(cls, path) -> "WordVectors":
        vectors: dict[str, np.ndarray] = {}
        dim = None
        with open(path, encoding="utf-8") as f:
            for line in f:
                parts = line.rstrip("\n").split()
                if not parts:
                    continue
                token, vals = parts[0], parts[1:]
                if dim is None:
                    dim = len(vals)
                elif len(vals) != dim:
                    raise ValueError(f"embedding row for {token!r} has {len(vals)} dims, expected {dim}")
                vectors[token] = np.asarray([float(v) for v in vals], dtype=np.float64)
        if dim is None:
            raise ValueError("empty embedding file")
        return cls(vectors, dim)

    def sentence_vector(self, tokens: Sequence[str], mode: str) -> np.ndarray:
        rows = [self.vectors[t] for t in tokens if t in self.vectors]
        if not rows:
            unk = self.vectors.get("<unk>")
            rows = [unk] if unk is not None else [np.zeros(self.dim)]
        mat = np.stack(rows)
        if mode == "average":
            return mat.mean(axis=0)
        if mode == "extrema":
            # Per dimension, the value of largest magnitude, sign kept.
            idx = np.argmax(np.abs(mat), axis=0)
            return mat[idx, np.arange(mat.shape[1])]
        raise ValueError(f"unknown sentence-vector mode {mode!r}")


def dist_bow_embedding(r: Sequence[str], h: Sequence[str], mode: str, table: WordVectors) -> float:
    """(1 + cosine)/2 between sentence vectors; 0.5 if either is zero."""
    vr = table.sentence_vector(r, mode)
    vh = table.sentence_vector(h, mode)
    nr = float(np.linalg.norm(vr))
    nh = float(np.linalg.norm(vh))
    if nr == 0.0 or nh == 0.0:
        log.warning("dist_bow_embedding with a zero sentence vector returns 0.5")
        return 0.5
    cos = float(np.dot(vr, vh) / (nr * nh))
    cos = max(-1.0, min(1.0, cos))
    return (1.0 + cos) / 2.0


def dist_da(r_act: str | None, h_act: str | None) -> float:
    """1 iff the two dialog-act labels are equal."""
    if r_act is None or h_act is None:
        raise ValueError("dist_da requires both sides to carry an act label")
    return 1.0 if r_act == h_act else 0.0


@dataclass
class DistanceFn:
    """A [0,1] distance over labeled sentences, selected by kind."""

    kind: str
    table: WordVectors | None = None

    def __post_init__(self):
        if self.kind not in DISTANCE_KINDS:
            raise ValueError(f"unknown distance kind {self.kind!r}")
        if self.kind in ("abow", "ebow") and self.table is None:
            raise ValueError(f"{self.kind} requires an embedding table")

    def __call__(self, ref: Reference, hyp: Reference) -> float:
        if self.kind.startswith("bleu"):
            return dist_bleu(ref.tokens, hyp.tokens, int(self.kind[4]))
        if self.kind == "abow":
            return dist_bow_embedding(ref.tokens, hyp.tokens, "average", self.table)
        if self.kind == "ebow":
            return dist_bow_embedding(ref.tokens, hyp.tokens, "extrema", self.table)
        return dist_da(ref.act, hyp.act)


def prec_recall(refs: ReferenceSet | Sequence[Reference], hyps: Sequence[Reference],
                d: Callable[[Reference, Reference], float]) -> tuple[float, float]:
    """Generalized response-level precision/recall under distance d."""
    ref_list = refs.refs if isinstance(refs, ReferenceSet) else list(refs)
    if not ref_list or not hyps:
        raise ValueError("prec_recall needs at least one reference and one hypothesis")
    matrix = np.asarray([[d(r, h) for h in hyps] for r in ref_list], dtype=np.float64)
    precision = float(matrix.max(axis=0).mean())
    recall = float(matrix.max(axis=1).mean())
    return precision, recall


def corpus_prec_recall(refsets: Sequence[ReferenceSet], hypsets: dict[int, Sequence[Reference]],
                       d: Callable[[Reference, Reference], float]) -> tuple[float, float]:
    """Unweighted mean of per-context precision/recall, in context-id order."""
    ps, rs = [], []
    for refset in sorted(refsets, key=lambda s: s.context_id):
        hyps = hypsets.get(refset.context_id)
        if not hyps:
            raise ValueError(f"no hypotheses for context {refset.context_id}")
        p, r = prec_recall(refset, hyps, d)
        ps.append(p)
        rs.append(r)
    return float(np.mean(ps)), float(np.mean(rs))


# ---------------- reference collection ----------------

def _context_doc(pair: ContextResponsePair) -> list[str]:
    tokens: list[str] = []
    for u in pair.context:
        tokens.extend(u.tokens)
    return tokens


class ReferenceIndex:
    """TFIDF bag-of-words index over training contexts.

    Similarity between contexts i (query) and j (train):
        1(topic_i = topic_j) * 1(floors_i = floors_j) * cosine(tfidf_i, tfidf_j)
    with idf = ln(N / df) fit on the training contexts only.
    """

    def __init__(self, train_pairs: Sequence[ContextResponsePair]):
        self.train_pairs = list(train_pairs)
        n = len(self.train_pairs)
        if n == 0:
            raise ValueError("reference index needs at least one training pair")
        df: Counter[str] = Counter()
        docs = []
        for p in self.train_pairs:
            doc = _context_doc(p)
            docs.append(doc)
            df.update(set(doc))
        self.idf = {t: math.log(n / c) for t, c in df.items()}
        self._vecs = [self._vector(doc) for doc in docs]

    def _vector(self, doc: Sequence[str]) -> dict[str, float]:
        tf = Counter(doc)
        vec = {}
        for t, c in tf.items():
            idf = self.idf.get(t)
            if idf is not None and idf > 0.0:
                vec[t] = c * idf
        norm = math.sqrt(sum(w * w for w in vec.values()))
        if norm > 0.0:
            vec = {t: w / norm for t, w in vec.items()}
        return vec

    @staticmethod
    def _cosine(a: dict[str, float], b: dict[str, float]) -> float:
        if len(b) < len(a):
            a, b = b, a
        return sum(w * b.get(t, 0.0) for t, w in a.items())

    def query(self, pair: ContextResponsePair, top_k: int = 10,
              exclude_index: int | None = None) -> list[tuple[int, float]]:
        """(train index, similarity) of the top_k positive-similarity matches."""
        qvec = self._vector(_context_doc(pair))
        qfloors = tuple(pair.floors)
        scored = []
        for j, cand in enumerate(self.train_pairs):
            if j == exclude_index:
                continue
            if cand.topic != pair.topic or tuple(cand.floors) != qfloors:
                continue
            sim = self._cosine(qvec, self._vecs[j])
            if sim > 0.0:
                scored.append((j, sim))
        scored.sort(key=lambda js: (-js[1], js[0]))
        return scored[:top_k]


def collect_references(pair: ContextResponsePair, index: ReferenceIndex,
                       top_k: int = 10) -> list[Reference]:
    """Responses of the nearest training contexts, best match first."""
    out = []
    for j, _sim in index.query(pair, top_k=top_k):
        cand = index.train_pairs[j]
        out.append(Reference(tokens=list(cand.response.tokens), act=cand.response_act))
    return out


def collect_references_corpus(test_pairs: Sequence[ContextResponsePair],
                              train_pairs: Sequence[ContextResponsePair],
                              top_k: int = 10,
                              include_gold: bool = True) -> list[ReferenceSet]:
    """One deduplicated ReferenceSet per test context.

    include_gold adds each test pair's own response as a reference
    (always valid by construction), so every context has at least one.
    """
    index = ReferenceIndex(train_pairs)
    refsets = []
    for i, pair in enumerate(test_pairs):
        refs = []
        if include_gold:
            refs.append(Reference(tokens=list(pair.response.tokens), act=pair.response_act))
        refs.extend(collect_references(pair, index, top_k=top_k))
        refsets.append(ReferenceSet.make(i, refs))
    return refsets


def write_references(path, refsets: Sequence[ReferenceSet]) -> None:
    """JSONL: {"context_id": int, "refs": [{"tokens": [...], "act": str|null}]}."""
    with open(path, "w", encoding="utf-8") as f:
        for rs in sorted(refsets, key=lambda s: s.context_id):
            obj = {"context_id": rs.context_id,
                   "refs": [{"tokens": r.tokens, "act": r.act} for r in rs.refs]}
            f.write(json.dumps(obj, sort_keys=True) + "\n")


def read_references(path) -> list[ReferenceSet]:
    refsets = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                obj = json.loads(line)
                refs = [Reference(tokens=r["tokens"], act=r.get("act")) for r in obj["refs"]]
                refsets.append(ReferenceSet.make(obj["context_id"], refs))
    return refsets


# ---------------- latent probe ----------------

@dataclass
class ProbeReport:
    accuracy: float
    n_train: int
    n_test: int
    classes: list[str]
    chance_majority: float
    chance_uniform: float
    iterations: int


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def latent_probe(z: np.ndarray, labels: Sequence[str], seed: int = 0,
                 tol: float = 1e-6, max_iters: int = 20_000,
                 l2: float = 1.0) -> ProbeReport:
    """Multinomial logistic-regression probe with an 80/20 seeded split.

    Full-batch gradient descent with backtracking step halving, run until
    the penalized loss improvement falls below tol. Features enter at
    their natural scale with a ridge penalty of 0.5 * l2 * ||W||^2 / n
    on the non-intercept weights (l2=1 matches the usual off-the-shelf
    logistic-regression default). The penalty makes the probe scale
    sensitive on purpose: information that survives only after a huge
    linear rescaling is not counted as linearly decodable.
    """
    z = np.asarray(z, dtype=np.float64)
    labels = list(labels)
    if len(labels) != len(z):
        raise ValueError("one label per latent vector required")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ValueError("latent probe needs at least 2 classes")
    y = np.asarray([classes.index(l) for l in labels], dtype=np.int64)
    n = len(z)
    perm = _rng.stream(seed, "probe-split").permutation(n)
    n_train = int(0.8 * n)
    if n_train == 0 or n_train == n:
        raise ValueError("dataset too small for an 80/20 split")
    tr, te = perm[:n_train], perm[n_train:]

    xt = np.hstack([z[tr], np.ones((len(tr), 1))])
    xe = np.hstack([z[te], np.ones((len(te), 1))])
    yt, ye = y[tr], y[te]
    k = len(classes)

    w = np.zeros((xt.shape[1], k))
    onehot = np.zeros((len(tr), k))
    onehot[np.arange(len(tr)), yt] = 1.0
    pen = np.ones((xt.shape[1], 1))
    pen[-1] = 0.0

    def loss_of(wm: np.ndarray) -> float:
        logits = xt @ wm
        m = logits.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
        ce = float(np.mean(lse - logits[np.arange(len(tr)), yt]))
        return ce + 0.5 * l2 * float(((wm * pen) ** 2).sum()) / len(tr)

    prev = loss_of(w)
    lr = 1.0
    iterations = 0
    for iterations in range(1, max_iters + 1):
        p = _softmax_rows(xt @ w)
        grad = xt.T @ (p - onehot) / len(tr) + l2 * (w * pen) / len(tr)
        while True:
            w_new = w - lr * grad
            cur = loss_of(w_new)
            if cur <= prev or lr < 1e-12:
                break
            lr *= 0.5
        if lr < 1e-12:
            break
        improved = prev - cur
        w = w_new
        prev = cur
        lr *= 1.1
        if improved < tol:
            break

    pred = np.argmax(xe @ w, axis=1)
    counts = Counter(ye.tolist())
    return ProbeReport(
        accuracy=float(np.mean(pred == ye)),
        n_train=len(tr),
        n_test=len(te),
        classes=classes,
        chance_majority=max(counts.values()) / len(ye),
        chance_uniform=1.0 / k,
        iterations=iterations,
    )


def posterior_means(model: DialogModel, pairs: Sequence[EncodedPair],
                    batch_size: int = 64) -> np.ndarray:
    """Recognition-network mu per example, in dataset order."""
    rows = []
    for lo in range(0, len(pairs), batch_size):
        batch = make_batch(pairs[lo:lo + batch_size], dtype=model.params.dtype)
        rows.append(model.recognition_means(batch))
    return np.concatenate(rows, axis=0)


# ---------------- consistency and latent export ----------------

@dataclass
class ConsistencyReport:
    accuracy: float
    n: int
    confusions: list[tuple[str, str, int]]  # (predicted act, tagged act, count)


def consistency_accuracy(model: DialogModel, pairs: Sequence[EncodedPair],
                         tagger: Tagger, vocab, acts: Sequence[str],
                         seed: int = 0) -> ConsistencyReport:
    """Fraction of greedy generations whose tagger label matches y'.

    One prior sample per context from the ("consist", i) stream; the
    decoder is conditioned on y' = argmax predict_act(z, c).
    """
    if model.config.variant != "kgcvae":
        raise ValueError("consistency_accuracy is defined for kgcvae checkpoints only")
    from .generation import greedy_decode  # local import to avoid a cycle
    from .numeric.core import reparameterize

    acts = list(acts)
    hits = 0
    confusion: Counter[tuple[str, str]] = Counter()
    for i, pair in enumerate(pairs):
        ctx = model.encode_context(pair)
        prior = model.prior(ctx)
        eps = _rng.stream(seed, "consist", i).normal(model.config.latent_dim, dtype=np.float32)
        z = reparameterize(prior, eps).astype(model.params.dtype)
        act_id = int(np.argmax(model.predict_act(z, ctx)))
        y_onehot = np.zeros(model.config.n_acts, dtype=model.params.dtype)
        y_onehot[act_id] = 1.0
        ids = greedy_decode(model, z, ctx, y_onehot, model.config.max_decode_len)
        tagged = tagger(vocab.decode(ids))
        predicted = acts[act_id]
        if tagged == predicted:
            hits += 1
        else:
            confusion[(predicted, tagged)] += 1
    pairs_sorted = sorted(confusion.items(), key=lambda kv: (-kv[1], kv[0]))
    return ConsistencyReport(
        accuracy=hits / len(pairs) if pairs else 0.0,
        n=len(pairs),
        confusions=[(p, t, c) for (p, t), c in pairs_sorted],
    )


def export_latents(model: DialogModel, pairs: Sequence[EncodedPair],
                   raw_pairs: Sequence[ContextResponsePair], path) -> int:
    """JSONL rows of posterior means with labels; returns the row count."""
    if model.config.variant == "baseline":
        raise ValueError("export_latents needs a latent variant")
    mus = posterior_means(model, pairs)
    with open(path, "w", encoding="utf-8") as f:
        for mu, raw in zip(mus, raw_pairs):
            row = {
                "z": [float(v) for v in mu],
                "act": raw.response_act,
                "sentiment": raw.response.sentiment,
                "length": len(raw.response.tokens),
            }
            f.write(json.dumps(row, sort_keys=True) + "\n")
    return len(mus)


# ---------------- full report ----------------

def evaluation_report(perplexity: float, kl_cost: float | None,
                      refsets: Sequence[ReferenceSet],
                      hypsets: dict[int, Sequence[Reference]],
                      table: WordVectors) -> dict:
    """The fixed-key metrics report over all distance kinds."""
    report: dict[str, float | None] = {
        "perplexity": perplexity,
        "kl_cost": kl_cost,
    }
    for kind in DISTANCE_KINDS:
        d = DistanceFn(kind, table=table if kind in ("abow", "ebow") else None)
        p, r = corpus_prec_recall(refsets, hypsets, d)
        report[f"{kind}_prec"] = p
        report[f"{kind}_rec"] = r
    assert set(report) == set(REPORT_KEYS)
    return report
