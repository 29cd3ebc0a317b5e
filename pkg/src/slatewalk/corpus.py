"""Data model and ingestion for items and curated item collections.

A corpus holds songs-like records ("items") and typed, described sets of
them ("collections", e.g. playlists). Corpora are stored as UTF-8
line-delimited JSON with a ``kind`` discriminator per line so that
million-record files can be streamed. Unknown fields are ignored on read.

Corpora are immutable after load and safe to share between threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

DEFAULT_SPLIT_RATIOS = (0.8, 0.1, 0.1)


class CorpusError(Exception):
    """Base class for corpus loading and validation failures."""


class CorpusParseError(CorpusError):
    """A line of a corpus file could not be parsed or violates a field rule."""

    def __init__(self, path, line_no: int, reason: str):
        self.path = str(path)
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"{self.path}:{line_no}: {reason}")


class DanglingReferenceError(CorpusError):
    """A collection references an item id that is not in the corpus."""

    def __init__(self, collection_id: str, item_id: str):
        self.collection_id = collection_id
        self.item_id = item_id
        super().__init__(
            f"collection {collection_id!r} references unknown item {item_id!r}"
        )


@dataclass(frozen=True)
class Item:
    """A retrievable unit: a song-like record with textual metadata."""

    id: str
    title: str
    artists: tuple[str, ...] = ()
    album: str | None = None
    features: tuple[float, ...] | None = None


@dataclass(frozen=True)
class ItemCollection:
    """A typed, described set of items (playlist-like).

    Item ordering is stored as given but ignored by every downstream
    operation.
    """

    id: str
    title: str
    description: str
    ctype: str
    item_ids: tuple[str, ...]


@dataclass(frozen=True)
class Corpus:
    items: dict[str, Item]
    collections: dict[str, ItemCollection]
    types: frozenset[str] = frozenset()

    def item_list(self) -> list[Item]:
        """Items in ascending id order."""
        return [self.items[i] for i in sorted(self.items)]

    def collection_list(self) -> list[ItemCollection]:
        """Collections in ascending id order."""
        return [self.collections[c] for c in sorted(self.collections)]

    def collections_of_type(self, ctype: str) -> list[ItemCollection]:
        return [c for c in self.collection_list() if c.ctype == ctype]


def validate_corpus(corpus: Corpus) -> None:
    """Raise CorpusError if any type invariant is violated."""
    feature_dim = None
    for item_id, item in corpus.items.items():
        if item.id != item_id:
            raise CorpusError(f"item key {item_id!r} does not match id {item.id!r}")
        if not item.title:
            raise CorpusError(f"item {item_id!r} has an empty title")
        if item.features is not None:
            if feature_dim is None:
                feature_dim = len(item.features)
            elif len(item.features) != feature_dim:
                raise CorpusError(
                    f"item {item_id!r} has feature dimension {len(item.features)}, "
                    f"expected {feature_dim}"
                )
    for coll_id, coll in corpus.collections.items():
        if coll.id != coll_id:
            raise CorpusError(
                f"collection key {coll_id!r} does not match id {coll.id!r}"
            )
        if not coll.item_ids:
            raise CorpusError(f"collection {coll_id!r} is empty")
        if coll.ctype not in corpus.types:
            raise CorpusError(
                f"collection {coll_id!r} has unregistered type {coll.ctype!r}"
            )
        for item_id in coll.item_ids:
            if item_id not in corpus.items:
                raise DanglingReferenceError(coll_id, item_id)


def _parse_item(record: dict, path, line_no: int) -> Item:
    try:
        item_id = str(record["id"])
        title = str(record["title"])
    except KeyError as exc:
        raise CorpusParseError(path, line_no, f"item is missing field {exc}") from None
    artists = tuple(str(a) for a in record.get("artists", ()))
    album = record.get("album")
    album = str(album) if album is not None else None
    features = record.get("features")
    if features is not None:
        try:
            features = tuple(float(v) for v in features)
        except (TypeError, ValueError):
            raise CorpusParseError(path, line_no, "features must be a number list") from None
    if not title:
        raise CorpusParseError(path, line_no, f"item {item_id!r} has an empty title")
    return Item(id=item_id, title=title, artists=artists, album=album, features=features)


def _parse_collection(record: dict, path, line_no: int) -> ItemCollection:
    try:
        coll_id = str(record["id"])
        title = str(record["title"])
        ctype = str(record["ctype"])
        item_ids = tuple(str(i) for i in record["item_ids"])
    except KeyError as exc:
        raise CorpusParseError(
            path, line_no, f"collection is missing field {exc}"
        ) from None
    if not item_ids:
        raise CorpusParseError(path, line_no, f"collection {coll_id!r} has no items")
    description = str(record.get("description", ""))
    return ItemCollection(
        id=coll_id, title=title, description=description, ctype=ctype, item_ids=item_ids
    )


def load_corpus(path) -> Corpus:
    """Load a line-delimited corpus file, validating every invariant.

    Raises CorpusParseError with the offending line number for malformed
    records, and DanglingReferenceError naming the collection for unresolved
    item references.
    """
    path = Path(path)
    items: dict[str, Item] = {}
    collections: dict[str, ItemCollection] = {}
    declared_types: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusParseError(path, line_no, f"invalid JSON: {exc.msg}") from None
            if not isinstance(record, dict):
                raise CorpusParseError(path, line_no, "record is not an object")
            kind = record.get("kind")
            if kind == "item":
                item = _parse_item(record, path, line_no)
                if item.id in items:
                    raise CorpusParseError(path, line_no, f"duplicate item id {item.id!r}")
                items[item.id] = item
            elif kind == "collection":
                coll = _parse_collection(record, path, line_no)
                if coll.id in collections:
                    raise CorpusParseError(
                        path, line_no, f"duplicate collection id {coll.id!r}"
                    )
                collections[coll.id] = coll
            elif kind == "types":
                declared_types.update(str(t) for t in record.get("types", ()))
            else:
                raise CorpusParseError(path, line_no, f"unknown record kind {kind!r}")
    observed = {c.ctype for c in collections.values()}
    if declared_types and not observed <= declared_types:
        extra = sorted(observed - declared_types)
        raise CorpusError(f"collections use undeclared types: {extra}")
    types = frozenset(declared_types or observed)
    corpus = Corpus(items=items, collections=collections, types=types)
    validate_corpus(corpus)
    return corpus


def save_corpus(corpus: Corpus, path) -> None:
    """Write a corpus in canonical order (types, then items and collections by id)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        if corpus.types:
            fh.write(
                json.dumps({"kind": "types", "types": sorted(corpus.types)}, sort_keys=True)
            )
            fh.write("\n")
        for item in corpus.item_list():
            record = {"kind": "item", "id": item.id, "title": item.title,
                      "artists": list(item.artists)}
            if item.album is not None:
                record["album"] = item.album
            if item.features is not None:
                record["features"] = list(item.features)
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")
        for coll in corpus.collection_list():
            record = {
                "kind": "collection",
                "id": coll.id,
                "title": coll.title,
                "description": coll.description,
                "ctype": coll.ctype,
                "item_ids": list(coll.item_ids),
            }
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")


def derive_artist_collections(corpus: Corpus) -> Corpus:
    """Add one "artist" collection per distinct artist found in theme collections.

    Each derived collection is titled with the artist name and contains that
    artist's items from the theme collections, deduplicated across them.
    Existing collections are left unchanged; applying this twice is the same
    as applying it once.
    """
    by_artist: dict[str, dict[str, None]] = {}
    for coll in corpus.collection_list():
        if coll.ctype != "theme":
            continue
        for item_id in coll.item_ids:
            for artist in corpus.items[item_id].artists:
                by_artist.setdefault(artist, {})[item_id] = None
    collections = dict(corpus.collections)
    for artist in sorted(by_artist):
        coll_id = f"artist--{artist}"
        collections[coll_id] = ItemCollection(
            id=coll_id,
            title=artist,
            description=f"Songs by {artist}",
            ctype="artist",
            item_ids=tuple(by_artist[artist]),
        )
    types = corpus.types | ({"artist"} if by_artist else set())
    derived = Corpus(items=corpus.items, collections=collections, types=frozenset(types))
    validate_corpus(derived)
    return derived


# Word pools for synthetic fixture corpora. Attribute words give collections
# a learnable shared vocabulary; the rest is naming colour.
_ATTRIBUTE_WORDS = (
    "upbeat", "mellow", "acoustic", "synth", "vintage", "piano", "guitar",
    "driving", "dreamy", "coastal", "midnight", "summer", "winter", "neon",
    "folk", "electro", "soul", "groove", "ambient", "punchy", "smooth",
    "raw", "golden", "velvet", "crystal", "storm", "desert", "urban",
    "cosmic", "retro", "breezy", "moody", "sunny", "shadow", "silver",
    "wild", "gentle", "bold", "hazy", "electric",
)
_NAME_FIRST = (
    "Neon", "Velvet", "Echo", "Crimson", "Atlas", "Juniper", "Indigo",
    "Hollow", "Lunar", "Paper", "Static", "Copper", "Marble", "Ember",
    "Quiet", "Radio", "Salt", "Thunder", "Wandering", "Young",
)
_NAME_SECOND = (
    "Owls", "Foxes", "Harbor", "Club", "Collective", "Sisters", "Brothers",
    "Union", "Parade", "Motel", "Garden", "Canyon", "Arcade", "Choir",
    "Engine", "Lanterns", "Mirrors", "Pilots", "Rivers", "Wires",
)
_NOUN_WORDS = (
    "road", "heart", "night", "light", "dance", "fire", "rain", "city",
    "dream", "wave", "star", "home", "ghost", "run", "glass", "bloom",
)


def make_fixture_corpus(n_items: int, n_collections: int, seed: int) -> Corpus:
    """Generate a deterministic synthetic corpus of theme collections.

    Items within a collection share the collection's attribute words, so a
    meaningful embedding is learnable from the text alone. Artists are
    assigned per collection from a shared pool, which makes derived artist
    collections span several themes.
    """
    if n_collections < 1 or n_items < n_collections:
        raise ValueError(
            f"need n_items >= n_collections >= 1, got ({n_items}, {n_collections})"
        )
    rng = np.random.default_rng(seed)
    n_attr = len(_ATTRIBUTE_WORDS)

    # One attribute-word pair per collection; pairs may repeat across
    # collections, which keeps some themes related to each other.
    attr_pairs = [
        tuple(_ATTRIBUTE_WORDS[j] for j in rng.choice(n_attr, size=2, replace=False))
        for _ in range(n_collections)
    ]

    n_artists = max(3, int(round(n_items / 13)))
    combos = rng.choice(
        len(_NAME_FIRST) * len(_NAME_SECOND),
        size=min(n_artists, len(_NAME_FIRST) * len(_NAME_SECOND)),
        replace=False,
    )
    artist_pool = [
        f"{_NAME_FIRST[c // len(_NAME_SECOND)]} {_NAME_SECOND[c % len(_NAME_SECOND)]}"
        for c in combos
    ]
    # Each collection draws from a small set of artists.
    coll_artists = [
        [artist_pool[j] for j in rng.choice(len(artist_pool),
                                            size=min(3, len(artist_pool)),
                                            replace=False)]
        for _ in range(n_collections)
    ]

    items: dict[str, Item] = {}
    coll_items: list[list[str]] = [[] for _ in range(n_collections)]
    for i in range(n_items):
        c = i % n_collections
        w1, w2 = attr_pairs[c]
        attr = w1 if rng.random() < 0.5 else w2
        noun = _NOUN_WORDS[rng.integers(len(_NOUN_WORDS))]
        artist = coll_artists[c][rng.integers(len(coll_artists[c]))]
        item_id = f"i{i:05d}"
        album = None if i % 7 == 0 else f"{artist} volume {1 + i % 4}"
        items[item_id] = Item(
            id=item_id,
            title=f"{attr} {noun} {i:04d}",
            artists=(artist,),
            album=album,
        )
        coll_items[c].append(item_id)

    collections: dict[str, ItemCollection] = {}
    for c in range(n_collections):
        w1, w2 = attr_pairs[c]
        coll_id = f"z{c:04d}"
        collections[coll_id] = ItemCollection(
            id=coll_id,
            title=f"{w1} {w2} mix",
            description=f"{w1} and {w2} songs",
            ctype="theme",
            item_ids=tuple(coll_items[c]),
        )
    corpus = Corpus(items=items, collections=collections, types=frozenset({"theme"}))
    validate_corpus(corpus)
    return corpus


def split_collections(
    corpus: Corpus,
    ratios: Sequence[float] = DEFAULT_SPLIT_RATIOS,
    seed: int = 0,
) -> tuple[list[str], ...]:
    """Split collection ids into train/dev/test lists by the given ratios."""
    if any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise ValueError(f"invalid split ratios {ratios}")
    ids = sorted(corpus.collections)
    rng = np.random.default_rng(seed)
    rng.shuffle(ids)
    total = sum(ratios)
    bounds = np.cumsum([r / total for r in ratios])[:-1]
    cut = [int(round(b * len(ids))) for b in bounds]
    pieces = np.split(np.array(ids, dtype=object), cut)
    return tuple(list(p) for p in pieces)
