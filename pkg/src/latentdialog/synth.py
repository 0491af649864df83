"""Synthetic corpora with known latent structure.

latent8: every dialog is one exchange. The context is one of a few
topic-specific sentences; the response is one of 8 templates (each tied
1:1 to a dialog act) with a single slot filled from a shared word list,
then lightly corrupted: each token is independently replaced with
probability NOISE_RATE by a word from the template lexicon. Template
choice is uniform and independent of the context, so the response's
act/template is exactly the hidden factor a latent variable should
capture, while the surface noise plays the role of real utterance
variability: a sampling decoder reproduces it and drifts off template,
a mode-seeking decoder does not. Utterances keep their true act label;
the lookup tagger maps exact template realizations back to their act
and tags everything else "other".

memorize50: 50 pairs whose response is a deterministic function of the
context, for memorization sanity checks (perplexity -> 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .corpus import Dialog, LookupTagger, Utterance
from .evaluation import Reference, ReferenceSet
from .numeric import rng as _rng

OTHER_ACT = "other"

TOPICS = ("travel", "food", "music", "sports")

CONTEXTS: dict[str, tuple[tuple[str, ...], ...]] = {
    "travel": (
        ("i", "am", "planning", "a", "long", "trip", "to", "the", "coast"),
        ("the", "flight", "to", "the", "islands", "was", "delayed", "again"),
        ("we", "booked", "a", "small", "hotel", "near", "the", "old", "harbor"),
    ),
    "food": (
        ("the", "new", "noodle", "place", "downtown", "serves", "huge", "portions"),
        ("i", "tried", "baking", "sourdough", "bread", "over", "the", "weekend"),
        ("this", "curry", "recipe", "needs", "way", "too", "many", "spices"),
    ),
    "music": (
        ("the", "band", "played", "an", "amazing", "encore", "last", "night"),
        ("i", "have", "been", "learning", "the", "piano", "for", "a", "year"),
        ("her", "new", "album", "mixes", "jazz", "with", "electronic", "sounds"),
    ),
    "sports": (
        ("our", "team", "finally", "won", "the", "league", "match", "yesterday"),
        ("the", "marathon", "route", "goes", "right", "past", "my", "street"),
        ("he", "broke", "the", "club", "record", "in", "the", "freestyle", "relay"),
    ),
}

SLOT = "<slot>"
SLOT_WORDS = ("solid", "strange", "simple")

# (act label, template tokens with one SLOT position)
TEMPLATES: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("inform", ("i", "think", "the", "plan", "sounds", "really", SLOT, "overall", "to", "me")),
    ("question", ("do", "you", "honestly", "believe", "that", SLOT, "idea", "could", "ever", "work")),
    ("agree", ("yes", "i", "completely", "agree", "with", "the", SLOT, "point", "you", "made")),
    ("disagree", ("no", "i", "am", "not", "convinced", "by", "that", SLOT, "argument", "at", "all")),
    ("request", ("could", "you", "please", "explain", "the", SLOT, "part", "one", "more", "time")),
    ("hedge", ("well", "it", "might", "be", SLOT, "but", "i", "would", "need", "more", "proof")),
    ("thank", ("thanks", "a", "lot", "for", "sharing", "such", "a", SLOT, "perspective", "with", "everyone")),
    ("closing", ("okay", "let", "us", "wrap", "up", "this", SLOT, "discussion", "and", "move", "on")),
)

ACTS = tuple(act for act, _ in TEMPLATES)

NOISE_RATE = 0.08
NOISE_LEXICON = tuple(sorted(
    {t for _, tokens in TEMPLATES for t in tokens if t != SLOT} | set(SLOT_WORDS)
))


def realize_template(template_idx: int, slot_idx: int) -> list[str]:
    act, tokens = TEMPLATES[template_idx]
    return [SLOT_WORDS[slot_idx] if t == SLOT else t for t in tokens]


def latent8_tagger() -> LookupTagger:
    """Maps every valid template realization to its act; misses -> other."""
    table: dict[tuple[str, ...], str] = {}
    for t_idx, (act, _) in enumerate(TEMPLATES):
        for s_idx in range(len(SLOT_WORDS)):
            table[tuple(realize_template(t_idx, s_idx))] = act
    return LookupTagger(table, default=OTHER_ACT)


def latent8_dialogs(n_pairs: int, seed: int, split: str,
                    noise: float = NOISE_RATE) -> list[Dialog]:
    """n_pairs single-exchange dialogs; template independent of context.

    Response tokens are corrupted independently with probability `noise`
    (a draw from NOISE_LEXICON); contexts and act labels stay clean. The
    corruption uses its own stream, so two corpora that differ only in
    `noise` share the same underlying template/slot/context draws.
    """
    stream = _rng.stream(seed, "latent8", split)
    noise_stream = _rng.stream(seed, "latent8", split, "noise")
    dialogs = []
    for _ in range(n_pairs):
        topic = TOPICS[int(stream.integers(0, len(TOPICS)))]
        ctx_idx = int(stream.integers(0, len(CONTEXTS[topic])))
        t_idx = int(stream.integers(0, len(TEMPLATES)))
        s_idx = int(stream.integers(0, len(SLOT_WORDS)))
        act, _ = TEMPLATES[t_idx]
        tokens = realize_template(t_idx, s_idx)
        if noise:
            u = noise_stream.uniform(0.0, 1.0, len(tokens))
            for j in range(len(tokens)):
                if u[j] < noise:
                    tokens[j] = NOISE_LEXICON[int(noise_stream.integers(0, len(NOISE_LEXICON)))]
        dialogs.append(Dialog(topic=topic, utterances=[
            Utterance(tokens=list(CONTEXTS[topic][ctx_idx]), speaker="A"),
            Utterance(tokens=tokens, speaker="B", act=act),
        ]))
    return dialogs


def latent8_refsets(n_test: int) -> list[ReferenceSet]:
    """Per test context, one reference per template (all acts are valid).

    Template choice is independent of the context, so every act is a
    valid response everywhere; the slot word is fixed per template.
    """
    refs = [
        Reference(tokens=realize_template(t_idx, t_idx % len(SLOT_WORDS)), act=act)
        for t_idx, (act, _) in enumerate(TEMPLATES)
    ]
    return [ReferenceSet.make(i, [Reference(list(r.tokens), r.act) for r in refs])
            for i in range(n_test)]


@dataclass
class SynthBundle:
    train: list[Dialog]
    valid: list[Dialog]
    test: list[Dialog]
    topics: list[str]
    acts: list[str]
    tagger: LookupTagger | None = None
    refsets: list[ReferenceSet] = field(default_factory=list)


def latent8_bundle(n_pairs: int = 4000, seed: int = 0,
                   n_valid: int = 300, n_test: int = 240,
                   noise: float = NOISE_RATE) -> SynthBundle:
    return SynthBundle(
        train=latent8_dialogs(n_pairs, seed, "train", noise=noise),
        valid=latent8_dialogs(n_valid, seed, "valid", noise=noise),
        test=latent8_dialogs(n_test, seed, "test", noise=noise),
        topics=list(TOPICS),
        acts=sorted(set(ACTS)),
        tagger=latent8_tagger(),
        refsets=latent8_refsets(n_test),
    )


MEMORIZE_ADJECTIVES = ("red", "blue", "green", "tall", "small")
MEMORIZE_NOUNS = ("box", "lamp", "chair", "kite", "stone", "wheel", "rope")


def memorize50_dialogs(seed: int = 0) -> list[Dialog]:
    """Exactly 50 pairs; each response is a function of its context.

    48 two-utterance dialogs plus one three-utterance dialog (2 pairs),
    so context windows longer than one utterance and both floor values
    appear in the data.
    """
    del seed  # the corpus is fully deterministic; kept for API symmetry
    dialogs = []
    for i in range(48):
        noun = MEMORIZE_NOUNS[i % len(MEMORIZE_NOUNS)]
        adj1 = MEMORIZE_ADJECTIVES[i % len(MEMORIZE_ADJECTIVES)]
        adj2 = MEMORIZE_ADJECTIVES[(i * 3 + 1) % len(MEMORIZE_ADJECTIVES)]
        dialogs.append(Dialog(topic="things", utterances=[
            Utterance(tokens=["please", "tell", "me", "about", f"item{i}", "now"], speaker="A"),
            Utterance(tokens=["the", f"item{i}", noun, "is", adj1, "and", adj2, "today"], speaker="B"),
        ]))
    dialogs.append(Dialog(topic="things", utterances=[
        Utterance(tokens=["please", "tell", "me", "about", "item48", "now"], speaker="A"),
        Utterance(tokens=["the", "item48", "box", "is", "red", "and", "blue", "today"], speaker="B"),
        Utterance(tokens=["so", "the", "item48", "box", "sounds", "quite", "nice"], speaker="A"),
    ]))
    return dialogs


def memorize50_bundle(seed: int = 0) -> SynthBundle:
    dialogs = memorize50_dialogs(seed)
    return SynthBundle(
        train=dialogs,
        valid=dialogs,
        test=dialogs,
        topics=["things"],
        acts=[],
    )


def write_word_vectors(path, dialogs: list[Dialog], dim: int = 16, seed: int = 0) -> None:
    """Emit a deterministic embedding text file covering the corpus vocab.

    Vectors are keyed by token string so the same token always gets the
    same vector, independent of corpus or vocabulary ids.
    """
    tokens = sorted({t for d in dialogs for u in d.utterances for t in u.tokens} | {"<unk>"})
    with open(path, "w", encoding="utf-8") as f:
        for token in tokens:
            vec = _rng.stream(seed, "wordvec", token).uniform(-1.0, 1.0, size=dim)
            f.write(token + " " + " ".join(f"{v:.6f}" for v in vec) + "\n")
