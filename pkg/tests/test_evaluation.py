"""Evaluation tests: distances, precision/recall, reference collection,
latent probe, consistency, and the fixed-key report.

BLEU and TFIDF expectations are worked out by hand in the comments so
each numeric assertion stands on its own.
"""

import math

import numpy as np
import pytest

from latentdialog.corpus import ContextResponsePair, LookupTagger, Utterance, Vocabulary
from latentdialog.evaluation import (
    DISTANCE_KINDS,
    REPORT_KEYS,
    DistanceFn,
    Reference,
    ReferenceIndex,
    ReferenceSet,
    collect_references,
    collect_references_corpus,
    consistency_accuracy,
    corpus_prec_recall,
    dist_bleu,
    dist_bow_embedding,
    dist_da,
    evaluation_report,
    export_latents,
    latent_probe,
    posterior_means,
    prec_recall,
    read_references,
    write_references,
    WordVectors,
)
from latentdialog.model import DialogModel, EncodedPair, ModelConfig, make_batch


class TestDistBleu:
    def test_partial_overlap_bleu2_oracle(self):
        # r = "the cat sat", h = "the cat":
        #   unigram precision 2/2 = 1; smoothed bigram (1+1)/(1+1) = 1;
        #   brevity penalty exp(1 - 3/2) = exp(-0.5).
        got = dist_bleu("the cat sat".split(), "the cat".split(), 2)
        assert got == pytest.approx(math.exp(-0.5), rel=1e-12)

    def test_identity_scores_one(self):
        sent = "a b c d e".split()
        for n in (1, 2, 3, 4):
            assert dist_bleu(sent, sent, n) == pytest.approx(1.0, abs=1e-12)
        rep = "a a b".split()
        assert dist_bleu(rep, rep, 2) == pytest.approx(1.0, abs=1e-12)

    def test_disjoint_bleu1_is_zero(self):
        assert dist_bleu("x y".split(), "a b".split(), 1) == 0.0

    def test_unigram_precision_without_smoothing(self):
        # h = "a x" vs r = "b a": one unigram match of two; no penalty.
        assert dist_bleu("b a".split(), "a x".split(), 1) == pytest.approx(0.5)

    def test_counts_are_clipped(self):
        # h = "a a a" vs r = "a b": match count is clipped to r's single a.
        assert dist_bleu("a b".split(), "a a a".split(), 1) == pytest.approx(1 / 3)

    def test_brevity_penalty(self):
        # h one token, r four tokens, perfect match: exp(1 - 4) penalty.
        got = dist_bleu("a b c d".split(), ["a"], 1)
        assert got == pytest.approx(math.exp(-3.0), rel=1e-12)

    def test_bleu3_oracle_with_smoothing(self):
        # r = "a b c d", h = "a b d c":
        #   p1 = 4/4; p2 = (1+1)/(3+1); p3 = (0+1)/(2+1); BP = 1.
        got = dist_bleu("a b c d".split(), "a b d c".split(), 3)
        assert got == pytest.approx((1.0 * 0.5 * (1 / 3)) ** (1 / 3), rel=1e-12)

    def test_empty_side_returns_zero(self):
        assert dist_bleu([], "a".split(), 2) == 0.0
        assert dist_bleu("a".split(), [], 2) == 0.0

    def test_order_validation(self):
        with pytest.raises(ValueError, match="order"):
            dist_bleu(["a"], ["a"], 0)
        with pytest.raises(ValueError, match="order"):
            dist_bleu(["a"], ["a"], 5)


def toy_table():
    return WordVectors({
        "a": np.array([1.0, 0.0]),
        "b": np.array([0.0, 1.0]),
        "neg": np.array([-1.0, 0.0]),
        "big": np.array([2.0, -1.0]),
        "huge": np.array([-3.0, 0.5]),
        "<unk>": np.array([0.5, 0.5]),
    }, dim=2)


class TestWordVectors:
    def test_load_and_dim_inference(self, tmp_path):
        path = tmp_path / "vec.txt"
        path.write_text("a 1.0 2.0\nb -0.5 0.25\n", encoding="utf-8")
        table = WordVectors.load(path)
        assert table.dim == 2
        np.testing.assert_array_equal(table.vectors["b"], [-0.5, 0.25])

    def test_load_rejects_ragged_and_empty(self, tmp_path):
        bad = tmp_path / "bad.txt"
        bad.write_text("a 1.0 2.0\nb 1.0\n", encoding="utf-8")
        with pytest.raises(ValueError, match="dims"):
            WordVectors.load(bad)
        empty = tmp_path / "empty.txt"
        empty.write_text("", encoding="utf-8")
        with pytest.raises(ValueError, match="empty"):
            WordVectors.load(empty)

    def test_average_vector(self):
        got = toy_table().sentence_vector(["a", "b"], "average")
        np.testing.assert_allclose(got, [0.5, 0.5])

    def test_extrema_keeps_sign_of_largest_magnitude(self):
        got = toy_table().sentence_vector(["big", "huge"], "extrema")
        np.testing.assert_allclose(got, [-3.0, -1.0])

    def test_oov_falls_back_to_unk_then_zero(self):
        table = toy_table()
        np.testing.assert_allclose(
            table.sentence_vector(["zzz"], "average"), [0.5, 0.5])
        bare = WordVectors({"a": np.array([1.0, 0.0])}, dim=2)
        np.testing.assert_allclose(
            bare.sentence_vector(["zzz"], "average"), [0.0, 0.0])

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError, match="mode"):
            toy_table().sentence_vector(["a"], "median")


class TestDistBowEmbedding:
    def test_parallel_orthogonal_antiparallel(self):
        table = toy_table()
        assert dist_bow_embedding(["a"], ["a"], "average", table) == pytest.approx(1.0)
        assert dist_bow_embedding(["a"], ["b"], "average", table) == pytest.approx(0.5)
        assert dist_bow_embedding(["a"], ["neg"], "average", table) == pytest.approx(0.0)

    def test_zero_vector_returns_half(self):
        bare = WordVectors({"a": np.array([1.0, 0.0])}, dim=2)
        assert dist_bow_embedding(["a"], ["zzz"], "average", bare) == 0.5


class TestDistDa:
    def test_exact_match_indicator(self):
        assert dist_da("inform", "inform") == 1.0
        assert dist_da("inform", "ask") == 0.0

    def test_missing_label_rejected(self):
        with pytest.raises(ValueError, match="act"):
            dist_da(None, "ask")
        with pytest.raises(ValueError, match="act"):
            dist_da("ask", None)


class TestDistanceFn:
    def test_kind_validation(self):
        with pytest.raises(ValueError, match="kind"):
            DistanceFn("bleu5")
        with pytest.raises(ValueError, match="embedding"):
            DistanceFn("abow")
        with pytest.raises(ValueError, match="embedding"):
            DistanceFn("ebow", table=None)

    def test_dispatch(self):
        r = Reference(tokens="the cat sat".split(), act="p")
        h = Reference(tokens="the cat".split(), act="q")
        assert DistanceFn("bleu2")(r, h) == dist_bleu(r.tokens, h.tokens, 2)
        table = toy_table()
        ra, ha = Reference(tokens=["a"]), Reference(tokens=["b"])
        assert DistanceFn("abow", table)(ra, ha) == pytest.approx(0.5)
        assert DistanceFn("da")(r, h) == 0.0


def scripted_distance(matrix):
    return lambda r, h: matrix[(r.tokens[0], h.tokens[0])]


class TestPrecRecall:
    def test_hand_matrix(self):
        refs = [Reference(["r0"]), Reference(["r1"])]
        hyps = [Reference(["h0"]), Reference(["h1"]), Reference(["h2"])]
        d = scripted_distance({
            ("r0", "h0"): 0.9, ("r0", "h1"): 0.2, ("r0", "h2"): 0.4,
            ("r1", "h0"): 0.1, ("r1", "h1"): 0.8, ("r1", "h2"): 0.3,
        })
        p, r = prec_recall(refs, hyps, d)
        # precision: mean over hyps of best ref = (0.9 + 0.8 + 0.4) / 3
        # recall:    mean over refs of best hyp = (0.9 + 0.8) / 2
        assert p == pytest.approx(0.7)
        assert r == pytest.approx(0.85)

    def test_accepts_reference_set(self):
        rs = ReferenceSet.make(0, [Reference(["r0"])])
        d = scripted_distance({("r0", "h0"): 0.6})
        assert prec_recall(rs, [Reference(["h0"])], d) == (0.6, 0.6)

    def test_empty_sides_rejected(self):
        d = scripted_distance({})
        with pytest.raises(ValueError):
            prec_recall([], [Reference(["h"])], d)
        with pytest.raises(ValueError):
            prec_recall([Reference(["r"])], [], d)

    def test_corpus_mean_and_missing_context(self):
        refsets = [ReferenceSet.make(0, [Reference(["r0"])]),
                   ReferenceSet.make(1, [Reference(["r1"])])]
        hypsets = {0: [Reference(["h0"])], 1: [Reference(["h1"])]}
        d = scripted_distance({("r0", "h0"): 1.0, ("r1", "h1"): 0.5})
        p, r = corpus_prec_recall(refsets, hypsets, d)
        assert p == pytest.approx(0.75)
        assert r == pytest.approx(0.75)
        with pytest.raises(ValueError, match="context 1"):
            corpus_prec_recall(refsets, {0: hypsets[0]}, d)


class TestReferenceSet:
    def test_dedup_keeps_first(self):
        rs = ReferenceSet.make(3, [
            Reference(["a", "b"], act="first"),
            Reference(["c"]),
            Reference(["a", "b"], act="second"),
        ])
        assert len(rs.refs) == 2
        assert rs.refs[0].act == "first"
        assert rs.context_id == 3

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ReferenceSet.make(0, [])


def train_pair(tokens, response, topic="t", floors=(0,), act=None):
    return ContextResponsePair(
        context=[Utterance(tokens=list(tokens), speaker="A")],
        floors=list(floors),
        meta=np.array([1.0], dtype=np.float32),
        response=Utterance(tokens=list(response), speaker="B", act=act),
        response_act=act,
        topic=topic,
    )


class TestReferenceIndex:
    def corpus(self):
        return [
            train_pair(["apple", "banana"], ["resp0"], act="a0"),
            train_pair(["apple", "cherry"], ["resp1"], act="a1"),
            train_pair(["durian"], ["resp2"], act="a2"),
        ]

    def test_tfidf_cosine_oracle(self):
        index = ReferenceIndex(self.corpus())
        hits = index.query(train_pair(["apple", "banana"], ["q"]), top_k=10)
        # idf: apple ln(3/2), banana/cherry/durian ln 3. The query equals
        # doc 0 so its cosine is 1; doc 1 shares only "apple"; doc 2
        # shares nothing and is dropped by the sim > 0 filter.
        w_apple, w_rare = math.log(3 / 2), math.log(3)
        cos01 = w_apple ** 2 / (w_apple ** 2 + w_rare ** 2)
        assert [j for j, _ in hits] == [0, 1]
        assert hits[0][1] == pytest.approx(1.0, rel=1e-12)
        assert hits[1][1] == pytest.approx(cos01, rel=1e-12)

    def test_topic_and_floor_gates(self):
        pairs = [
            train_pair(["same", "words"], ["r0"], topic="t", floors=(0,)),
            train_pair(["same", "words"], ["r1"], topic="u", floors=(0,)),
            train_pair(["same", "words"], ["r2"], topic="t", floors=(1,)),
            train_pair(["other"], ["r3"], topic="t", floors=(0,)),
        ]
        index = ReferenceIndex(pairs)
        hits = index.query(train_pair(["same", "words"], ["q"], topic="t", floors=(0,)))
        assert [j for j, _ in hits] == [0]

    def test_exclude_index_and_top_k(self):
        pairs = [train_pair(["w"], [f"r{i}"]) for i in range(4)]
        index = ReferenceIndex(pairs)
        # "w" is in every doc, so idf = 0 and nothing scores above zero.
        assert index.query(train_pair(["w"], ["q"])) == []
        varied = [
            train_pair(["x", "y"], ["r0"]),
            train_pair(["x", "z"], ["r1"]),
            train_pair(["x", "y"], ["r2"]),
        ]
        idx2 = ReferenceIndex(varied)
        hits = idx2.query(varied[0], top_k=1, exclude_index=0)
        assert [j for j, _ in hits] == [2]

    def test_tie_break_by_train_index(self):
        pairs = [
            train_pair(["x", "y"], ["r0"]),
            train_pair(["x", "y"], ["r1"]),
            train_pair(["q", "q"], ["r2"]),
        ]
        index = ReferenceIndex(pairs)
        hits = index.query(train_pair(["x", "y"], ["query"]))
        assert [j for j, _ in hits] == [0, 1]
        assert hits[0][1] == pytest.approx(hits[1][1])

    def test_empty_index_rejected(self):
        with pytest.raises(ValueError):
            ReferenceIndex([])

    def test_collect_references_returns_responses(self):
        index = ReferenceIndex(self.corpus())
        refs = collect_references(train_pair(["apple", "banana"], ["q"]), index, top_k=2)
        assert [r.tokens for r in refs] == [["resp0"], ["resp1"]]
        assert [r.act for r in refs] == ["a0", "a1"]

    def test_collect_corpus_gold_first_and_dedup(self):
        train = self.corpus()
        test = [train_pair(["apple", "banana"], ["resp0"], act="gold")]
        refsets = collect_references_corpus(test, train, top_k=2, include_gold=True)
        assert len(refsets) == 1
        rs = refsets[0]
        # Gold equals the nearest neighbour's response; dedup keeps gold.
        assert rs.refs[0].tokens == ["resp0"] and rs.refs[0].act == "gold"
        assert [r.tokens for r in rs.refs] == [["resp0"], ["resp1"]]
        bare = collect_references_corpus(test, train, top_k=2, include_gold=False)
        assert [r.act for r in bare[0].refs] == ["a0", "a1"]

    def test_reference_file_roundtrip(self, tmp_path):
        refsets = [
            ReferenceSet.make(1, [Reference(["b"], act=None)]),
            ReferenceSet.make(0, [Reference(["a", "c"], act="x")]),
        ]
        path = tmp_path / "refs.jsonl"
        write_references(path, refsets)
        back = read_references(path)
        assert [rs.context_id for rs in back] == [0, 1]
        assert back[0].refs[0].tokens == ["a", "c"]
        assert back[0].refs[0].act == "x"
        assert back[1].refs[0].act is None


class TestLatentProbe:
    def test_separable_clusters_reach_high_accuracy(self):
        r = np.random.default_rng(0)
        z0 = r.normal(loc=(-3.0, 0.0), scale=0.3, size=(60, 2))
        z1 = r.normal(loc=(3.0, 0.0), scale=0.3, size=(60, 2))
        z = np.vstack([z0, z1])
        labels = ["low"] * 60 + ["high"] * 60
        report = latent_probe(z, labels, seed=0)
        assert report.accuracy >= 0.95
        assert report.classes == ["high", "low"]
        assert report.n_train == 96 and report.n_test == 24
        assert report.chance_uniform == 0.5

    def test_uninformative_features_stay_near_chance(self):
        r = np.random.default_rng(1)
        z = r.normal(size=(200, 4))
        labels = (["a", "b"] * 100)
        report = latent_probe(z, labels, seed=0)
        assert 0.25 <= report.accuracy <= 0.75

    def test_three_class_and_constant_feature(self):
        r = np.random.default_rng(2)
        centers = {"x": (-4, 0), "y": (0, 0), "z": (4, 0)}
        zs, labels = [], []
        for name, c in centers.items():
            pts = r.normal(loc=c, scale=0.2, size=(40, 2))
            # Append a constant column; a degenerate feature must not break the fit.
            zs.append(np.hstack([pts, np.full((40, 1), 7.0)]))
            labels += [name] * 40
        report = latent_probe(np.vstack(zs), labels, seed=3)
        assert report.accuracy >= 0.9
        assert report.chance_uniform == pytest.approx(1 / 3)

    def test_determinism(self):
        r = np.random.default_rng(4)
        z = r.normal(size=(50, 3))
        labels = ["a", "b"] * 25
        a = latent_probe(z, labels, seed=9)
        b = latent_probe(z, labels, seed=9)
        assert a == b

    def test_validation(self):
        with pytest.raises(ValueError, match="label"):
            latent_probe(np.zeros((4, 2)), ["a", "b", "a"])
        with pytest.raises(ValueError, match="classes"):
            latent_probe(np.zeros((4, 2)), ["a", "a", "a", "a"])


def tiny_model(variant, **overrides):
    base = dict(
        variant=variant, vocab_size=11, n_topics=2,
        n_acts=3 if variant == "kgcvae" else 0,
        emb_dim=4, utt_hidden=3, ctx_hidden=5, dec_hidden=6,
        latent_dim=2, mlp_hidden=4, context_window=4, max_decode_len=5,
    )
    base.update(overrides)
    return DialogModel(ModelConfig(**base))


def encoded_pairs(variant, n=5):
    pairs = []
    for i in range(n):
        pairs.append(EncodedPair(
            ctx_ids=[[4 + i % 5, 5]], floors=[i % 2],
            meta=np.array([1.0, 0.0], dtype=np.float32),
            resp_ids=[6 + i % 4, 7], act_id=(i % 3) if variant == "kgcvae" else None,
        ))
    return pairs


class TestPosteriorMeans:
    def test_batch_size_invariance_and_shape(self):
        model = tiny_model("cvae").astype(np.float64)
        pairs = encoded_pairs("cvae", n=7)
        a = posterior_means(model, pairs, batch_size=2)
        b = posterior_means(model, pairs, batch_size=64)
        assert a.shape == (7, 2)
        np.testing.assert_allclose(a, b, rtol=1e-9)
        full = model.recognition_means(make_batch(pairs, dtype=np.float64))
        np.testing.assert_allclose(a, full, rtol=1e-9)


def zeroed(model):
    for name in model.params.names():
        model.params.set_value(name, np.zeros_like(model.params.value(name)))
    return model


class TestConsistency:
    def vocab(self):
        manifest = {"<pad>": 0, "<unk>": 1, "<s>": 2, "</s>": 3}
        for i in range(7):
            manifest[f"t{i}"] = 4 + i
        return Vocabulary.from_manifest(manifest)

    def test_perfect_when_tagger_agrees_with_predictor(self):
        # Zero parameters: the act predictor always picks act 0 and the
        # decoder emits a fixed all-<unk> string; a tagger whose default
        # is act 0 therefore agrees on every sample.
        model = zeroed(tiny_model("kgcvae"))
        acts = ["alpha", "beta", "gamma"]
        tagger = LookupTagger({}, default="alpha")
        report = consistency_accuracy(model, encoded_pairs("kgcvae", 4),
                                      tagger, self.vocab(), acts)
        assert report.accuracy == 1.0
        assert report.n == 4
        assert report.confusions == []

    def test_zero_when_tagger_disagrees(self):
        model = zeroed(tiny_model("kgcvae"))
        acts = ["alpha", "beta", "gamma"]
        tagger = LookupTagger({}, default="beta")
        report = consistency_accuracy(model, encoded_pairs("kgcvae", 3),
                                      tagger, self.vocab(), acts)
        assert report.accuracy == 0.0
        assert report.confusions == [("alpha", "beta", 3)]

    def test_kgcvae_only(self):
        model = tiny_model("cvae")
        with pytest.raises(ValueError, match="kgcvae"):
            consistency_accuracy(model, encoded_pairs("cvae", 2),
                                 LookupTagger({}), self.vocab(), ["a"])


class TestExportLatents:
    def test_rows_and_count(self, tmp_path):
        import json

        model = tiny_model("cvae")
        pairs = encoded_pairs("cvae", 3)
        raw = [
            train_pair(["c"], ["w1", "w2"], act="inform"),
            train_pair(["c"], ["w1"], act=None),
            train_pair(["c"], ["w1", "w2", "w3"], act="ask"),
        ]
        raw[1].response.sentiment = "pos"
        path = tmp_path / "latents.jsonl"
        assert export_latents(model, pairs, raw, path) == 3
        rows = [json.loads(l) for l in path.read_text().splitlines()]
        assert [r["length"] for r in rows] == [2, 1, 3]
        assert [r["act"] for r in rows] == ["inform", None, "ask"]
        assert rows[1]["sentiment"] == "pos"
        assert all(len(r["z"]) == 2 for r in rows)
        mus = posterior_means(model, pairs)
        np.testing.assert_allclose(rows[0]["z"], mus[0], rtol=1e-6)

    def test_baseline_rejected(self, tmp_path):
        model = tiny_model("baseline")
        with pytest.raises(ValueError, match="latent"):
            export_latents(model, encoded_pairs("baseline", 1),
                           [train_pair(["c"], ["w"])], tmp_path / "x.jsonl")


class TestEvaluationReport:
    def test_keys_and_values(self):
        table = toy_table()
        refsets = [
            ReferenceSet.make(0, [Reference(["a"], act="p")]),
            ReferenceSet.make(1, [Reference(["a", "b"], act="p")]),
        ]
        hypsets = {
            0: [Reference(["a"], act="p")],
            1: [Reference(["a", "neg"], act="q")],
        }
        report = evaluation_report(7.5, 0.25, refsets, hypsets, table)
        assert set(report) == set(REPORT_KEYS)
        assert report["perplexity"] == 7.5
        assert report["kl_cost"] == 0.25
        # Context 0 matches exactly, context 1 shares one of two tokens.
        assert report["bleu1_prec"] == pytest.approx((1.0 + 0.5) / 2)
        assert report["da_prec"] == pytest.approx((1.0 + 0.0) / 2)
        for kind in DISTANCE_KINDS:
            d = DistanceFn(kind, table=table if kind in ("abow", "ebow") else None)
            p, r = corpus_prec_recall(refsets, hypsets, d)
            assert report[f"{kind}_prec"] == pytest.approx(p)
            assert report[f"{kind}_rec"] == pytest.approx(r)
