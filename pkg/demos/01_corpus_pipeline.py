"""Walk the data path: synthetic dialogs -> vocabulary -> training pairs.

The latent8 corpus has a known generative story (4 topics x 8 dialog acts,
one template per act, one filled slot, light token noise), which makes it
easy to see what each stage of the pipeline does to a dialog.
"""

import argparse

from latentdialog import synth
from latentdialog.corpus import build_vocab, discover_labels, slice_corpus
from latentdialog.model import encode_pair, make_batch


def show_dialog(dialog, tagger):
    print(f"  topic={dialog.topic}")
    for utt in dialog.utterances:
        tagged = tagger(utt.tokens)
        mark = "" if tagged == utt.act else f"  (tagger says {tagged!r})"
        act = utt.act if utt.act is not None else "-"
        print(f"    {utt.speaker} act={act:<9} {' '.join(utt.tokens)}{mark}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--pairs", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    bundle = synth.latent8_bundle(n_pairs=args.pairs, seed=args.seed,
                                  n_valid=40, n_test=40)
    print(f"splits: {len(bundle.train)} train / {len(bundle.valid)} valid / "
          f"{len(bundle.test)} test dialogs")
    print(f"topics: {bundle.topics}")
    print(f"acts:   {bundle.acts}\n")

    print("two training dialogs (noisy tokens make the tagger fall back to 'other'):")
    for dialog in bundle.train[:2]:
        show_dialog(dialog, bundle.tagger)
    print()

    vocab = build_vocab(bundle.train, cap=500)
    labels = discover_labels(bundle.train)
    print(f"vocabulary: {vocab.size} entries (ids 0..3 reserved: "
          f"{vocab.id_to_token[:4]})")
    print(f"discovered labels: {len(labels.topics)} topics, {len(labels.acts)} acts\n")

    pairs = slice_corpus(bundle.train, 3, bundle.topics, bundle.tagger)
    print(f"context window 3 -> {len(pairs)} context/response pairs")
    pair = pairs[0]
    print(f"  context ({len(pair.context)} utterances): "
          f"{[' '.join(u.tokens) for u in pair.context]}")
    print(f"  response: {' '.join(pair.response.tokens)}  [act={pair.response_act}]\n")

    encoded = [encode_pair(p, vocab, bundle.acts) for p in pairs[:8]]
    batch = make_batch(encoded)
    print(f"one encoded batch of {len(encoded)}:")
    print(f"  ctx ids   {batch.ctx_ids.shape}  (pairs x utterances x tokens, PAD-padded)")
    print(f"  floors    {batch.floors.shape}")
    print(f"  meta      {batch.meta.shape}   (topic one-hot)")
    print(f"  decoder   in {batch.dec_in.shape} (BOS + response) -> "
          f"targets {batch.dec_tgt.shape} (response + EOS)")
    print(f"  act ids   {batch.acts.tolist()}")


if __name__ == "__main__":
    main()
