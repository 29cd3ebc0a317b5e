"""Train the conversational retriever on synthetic conversations and
compare it against the untrained and bag-of-words baselines.

Evaluation follows the gold-history protocol: every system is scored per
turn against the recorded history, and a turn's target is every liked item
of the conversation not yet seen in that history.
"""

import numpy as np

from slatewalk import corpus, crs, embedder, evalharness, seqgen, uttgen

corp = corpus.derive_artist_collections(
    corpus.make_fixture_corpus(600, 60, seed=7))
params = embedder.train_dual_encoder(
    corp, embedder.TrainConfig(dim=16, steps=400, batch_size=32))
coll_index = embedder.index_corpus_collections(params, corp)
item_index = embedder.index_corpus_items(params, corp)
walk_cfg = seqgen.WalkConfig()

train_convs = list(uttgen.generate_dataset(
    corp, coll_index, item_index, walk_cfg, "template",
    np.random.default_rng(1), 600))
held_out = list(uttgen.generate_dataset(
    corp, coll_index, item_index, walk_cfg, "template",
    np.random.default_rng(2), 80))
bench = evalharness.benchmark_from_conversations(held_out, corp)
dev, test = bench[:30], bench[30:]

config = crs.CrsTrainConfig(dim=16, batch_size=32, checkpoints=(150, 300, 450))
model, selection = crs.train_crs(train_convs, corp, config, dev)
print("checkpoint selection (hits@10 on the dev split):")
for step, hits in selection.checkpoint_scores:
    marker = "<- selected" if step == selection.selected_step else ""
    print(f"  step {step:4d}: {hits:.3f} {marker}")

trained_index = embedder.index_corpus_items(model, corp)
for tag, kwargs in [
    ("crs", dict(params=model, item_index=trained_index)),
    ("bm25", {}),
    ("untrained-encoder", {}),
    ("random", {}),
]:
    rep = evalharness.run_eval(tag, test, ks=(10, 100), corpus=corp, **kwargs)
    per_turn = " ".join(f"t{s.turn}={s.mean:.2f}" for s in rep.per_turn[100])
    print(f"{tag:20s} macro@10={rep.macro[10]:.3f} macro@100={rep.macro[100]:.3f}"
          f"  per-turn@100: {per_turn}")
