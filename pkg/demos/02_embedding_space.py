"""Train the collection/item dual encoder and poke at the shared space.

Collections and their member items should land near each other after
contrastive training; the exact cosine index then answers top-k and
rank-band queries deterministically.
"""

import numpy as np

from slatewalk import corpus, embedder

corp = corpus.derive_artist_collections(
    corpus.make_fixture_corpus(400, 40, seed=7))

config = embedder.TrainConfig(dim=16, steps=300, batch_size=32)
params, rep = embedder.train_dual_encoder(corp, config, return_report=True)
print(f"trained {config.steps} steps: held-out probe loss "
      f"{rep.initial_probe_loss:.3f} -> {rep.final_probe_loss:.3f}")

item_index = embedder.index_corpus_items(params, corp)
coll_index = embedder.index_corpus_collections(params, corp)
print(f"indices: {len(item_index)} items, {len(coll_index)} collections")

coll = corp.collection_list()[0]
query = embedder.featurize_collection_query(coll, corp, n_seed=5,
                                            rng=np.random.default_rng(0))
vec = embedder.encode(params, query)
print(f"\ntop-5 items for collection {coll.title!r}:")
members = set(coll.item_ids)
for item_id, score in embedder.nearest(item_index, vec, 5):
    marker = "*" if item_id in members else " "
    print(f"  {marker} {score:.3f} {corp.items[item_id].title}")
print("  (* = actual member of the collection)")

band = embedder.neighbor_range(coll_index, vec, 10, 15)
print(f"\ncollections ranked 10..14 for the same query "
      f"(mid-distance neighbors):")
for coll_id, score in band:
    print(f"    {score:.3f} {corp.collections[coll_id].title}")
