"""Build a synthetic corpus, derive artist collections, and round-trip it.

The corpus is the raw material for everything else: items (songs) and
typed collections (playlists). Artist collections are derived from the
theme collections so walks can express both broad-attribute and
artist-specific preferences.
"""

import tempfile
from pathlib import Path

from slatewalk import corpus

corp = corpus.make_fixture_corpus(n_items=300, n_collections=30, seed=7)
print(f"fixture corpus: {len(corp.items)} items, "
      f"{len(corp.collections)} collections, types {sorted(corp.types)}")

sample = corp.collection_list()[0]
print(f"\nfirst collection {sample.id!r}: {sample.title!r}")
print(f"  description: {sample.description!r}")
print(f"  items: {len(sample.item_ids)}")
for item_id in sample.item_ids[:3]:
    item = corp.items[item_id]
    print(f"    {item.id}: {item.title!r} by {', '.join(item.artists)}")

derived = corpus.derive_artist_collections(corp)
artist_colls = derived.collections_of_type("artist")
print(f"\nafter deriving artists: {len(derived.collections)} collections "
      f"({len(artist_colls)} artist collections)")
biggest = max(artist_colls, key=lambda c: len(c.item_ids))
print(f"  busiest artist: {biggest.title!r} with {len(biggest.item_ids)} items")

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "corpus.jsonl"
    corpus.save_corpus(derived, path)
    reloaded = corpus.load_corpus(path)
    print(f"\nround trip through {path.name}: "
          f"{'equal' if reloaded == derived else 'DIFFERENT'}")

train, dev, test = corpus.split_collections(derived, seed=0)
print(f"80/10/10 split: {len(train)} train, {len(dev)} dev, {len(test)} test")
