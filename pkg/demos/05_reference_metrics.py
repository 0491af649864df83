"""The evaluation toolbox, piece by piece, on inputs small enough to check
by hand.

A sample set is judged against a multi-reference set with a generalized
precision/recall: precision averages, over hypotheses, each hypothesis's
best match among the references; recall averages, over references, each
reference's best match among the hypotheses. Any bounded similarity can
fill the distance slot: smoothed sentence BLEU, two word-embedding
similarities, or dialog-act match.
"""

import numpy as np

from latentdialog import synth
from latentdialog.corpus import slice_corpus
from latentdialog.evaluation import (DistanceFn, Reference, ReferenceSet,
                                     WordVectors, collect_references_corpus,
                                     dist_bleu, prec_recall)
from latentdialog.numeric import rng


def show_bleu():
    print("smoothed sentence BLEU as a similarity")
    ref = "the cat sat on the mat".split()
    for hyp_text in ("the cat sat on the mat",
                     "the cat sat on a mat",
                     "a dog ran in the park"):
        hyp = hyp_text.split()
        scores = [dist_bleu(ref, hyp, n) for n in (1, 2, 3, 4)]
        print(f"  vs {hyp_text!r}: " +
              "  ".join(f"bleu{n}={s:.3f}" for n, s in zip((1, 2, 3, 4), scores)))
    print()


def show_embedding_and_da():
    print("embedding and dialog-act distances")
    st = rng.stream(0, "demo-metrics")
    tokens = "yes no thanks maybe sorry".split()
    table = WordVectors({t: st.normal((8,)) for t in tokens}, dim=8)
    a = Reference("yes thanks".split(), act="agree")
    b = Reference("no sorry".split(), act="disagree")
    c = Reference("thanks yes".split(), act="agree")
    for kind in ("abow", "ebow", "da"):
        d = DistanceFn(kind, table)
        print(f"  {kind}: d(a,b)={d(a, b):.3f}  d(a,c)={d(a, c):.3f}"
              + ("   (order-free, so d(a,c)=1)" if kind == "abow" else ""))
    print()


def show_prec_recall():
    print("precision/recall against a 3-reference set")
    refs = ReferenceSet.make(0, [Reference(t.split()) for t in
                                 ("yes i agree", "no i disagree", "thanks a lot")])
    d = DistanceFn("bleu2")
    one_hyp = [Reference("yes i agree".split())]
    all_hyps = [Reference(t.split()) for t in
                ("yes i agree", "no i disagree", "thanks a lot")]
    for name, hyps in (("1 perfect hypothesis", one_hyp),
                       ("3 hypotheses covering all refs", all_hyps)):
        p, r = prec_recall(refs, hyps, d)
        print(f"  {name}: precision {p:.3f}  recall {r:.3f}")
    print("  (one perfect hypothesis maxes precision; covering the set maxes recall)\n")


def show_reference_collection():
    print("nearest-neighbor reference collection on the synthetic corpus")
    bundle = synth.latent8_bundle(n_pairs=400, seed=0, n_valid=40, n_test=40)
    train_pairs = slice_corpus(bundle.train, 3, bundle.topics, bundle.tagger)
    test_pairs = slice_corpus(bundle.test, 3, bundle.topics, bundle.tagger)
    refsets = collect_references_corpus(test_pairs, train_pairs, top_k=5)
    sizes = [len(rs.refs) for rs in refsets]
    print(f"  {len(refsets)} reference sets, {np.mean(sizes):.1f} references each "
          f"after deduplication")
    pair, rs = test_pairs[0], refsets[0]
    print(f"  test context: {' '.join(pair.context[-1].tokens)}")
    for ref in rs.refs[:4]:
        print(f"    ref [{ref.act or 'other':<9}] {' '.join(ref.tokens)}")


if __name__ == "__main__":
    show_bleu()
    show_embedding_and_da()
    show_prec_recall()
    show_reference_collection()
