"""Generate a filtered conversation dataset and inspect the accounting.

Utterances here come from the template bank (the language-model-free
mode); the four post filters drop turns that fail the artist-mention,
blocklist, length, or overlap rules.
"""

import numpy as np

from slatewalk import corpus, embedder, seqgen, uttgen

corp = corpus.derive_artist_collections(
    corpus.make_fixture_corpus(400, 40, seed=7))
params = embedder.train_dual_encoder(
    corp, embedder.TrainConfig(dim=16, steps=300, batch_size=32))
coll_index = embedder.index_corpus_collections(params, corp)
item_index = embedder.index_corpus_items(params, corp)

stats = uttgen.DatasetStats()
conversations = list(uttgen.generate_dataset(
    corp, coll_index, item_index, seqgen.WalkConfig(), "template",
    np.random.default_rng(5), count=200, stats=stats,
))

print("generation stats:")
for key, value in stats.to_dict().items():
    print(f"  {key}: {value}")

conv = conversations[0]
target = corp.collections[conv.target_collection]
print(f"\nconversation {conv.id} (target: {target.title!r}):")
for t, turn in enumerate(conv.turns, start=1):
    print(f"  user {t}: {turn.utterance}")
    titles = [corp.items[i].title for i in turn.slate[:3]]
    print(f"    -> slate of {len(turn.slate)}: {titles} ...")

# The overlap filter compares against the scaffolding system response.
resp = uttgen.render_system_response("more", "theme", "quiet acoustic songs")
echoed = f"sure: {resp[:60]}"
overlap = uttgen.longest_common_substring_len(echoed, resp)
print(f"\nan utterance echoing {overlap} characters of the system response "
      f"would be dropped (threshold 50)")
