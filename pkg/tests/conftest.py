import numpy as np
import pytest

from slatewalk import corpus as corpus_mod
from slatewalk import embedder, seqgen, uttgen
from slatewalk.corpus import Corpus, Item, ItemCollection


@pytest.fixture()
def tiny_corpus():
    """Hand-built corpus: 2 theme collections, 3 artists, 6 items."""
    items = {
        "i1": Item(id="i1", title="morning run", artists=("Aster",)),
        "i2": Item(id="i2", title="night drive", artists=("Brio",)),
        "i3": Item(id="i3", title="city lights", artists=("Brio",)),
        "i4": Item(id="i4", title="slow tide", artists=("Cello Club",), album="tides"),
        "i5": Item(id="i5", title="storm warning", artists=("Aster",)),
        "i6": Item(id="i6", title="glass bloom", artists=("Brio",)),
    }
    collections = {
        "z1": ItemCollection(id="z1", title="workout mix", description="high energy",
                             ctype="theme", item_ids=("i1", "i2", "i3")),
        "z2": ItemCollection(id="z2", title="wind down", description="calm evening",
                             ctype="theme", item_ids=("i4", "i5", "i6")),
    }
    return Corpus(items=items, collections=collections,
                  types=frozenset({"theme"}))


@pytest.fixture(scope="session")
def small_corpus():
    """Synthetic corpus big enough to train on, small enough to stay fast."""
    return corpus_mod.derive_artist_collections(
        corpus_mod.make_fixture_corpus(400, 40, seed=7)
    )


@pytest.fixture(scope="session")
def small_stack(small_corpus):
    """Trained encoder plus both indices for the small corpus."""
    cfg = embedder.TrainConfig(dim=16, steps=250, batch_size=32, seed=0)
    params = embedder.train_dual_encoder(small_corpus, cfg)
    coll_index = embedder.index_corpus_collections(params, small_corpus)
    item_index = embedder.index_corpus_items(params, small_corpus)
    return params, coll_index, item_index


@pytest.fixture(scope="session")
def small_conversations(small_corpus, small_stack):
    _, coll_index, item_index = small_stack
    return list(uttgen.generate_dataset(
        small_corpus, coll_index, item_index, seqgen.WalkConfig(), "template",
        np.random.default_rng(21), 120,
    ))


# Desk-scale fixtures, shared by the acceptance suite.

@pytest.fixture(scope="session")
def desk_corpus():
    return corpus_mod.derive_artist_collections(
        corpus_mod.make_fixture_corpus(2000, 200, seed=11)
    )


@pytest.fixture(scope="session")
def desk_stack(desk_corpus):
    cfg = embedder.TrainConfig(dim=32, steps=2000, batch_size=64, seed=0)
    params = embedder.train_dual_encoder(desk_corpus, cfg)
    coll_index = embedder.index_corpus_collections(params, desk_corpus)
    item_index = embedder.index_corpus_items(params, desk_corpus)
    return params, coll_index, item_index


@pytest.fixture(scope="session")
def desk_walks(desk_corpus, desk_stack):
    """1000 six-turn walks on the desk corpus."""
    _, coll_index, item_index = desk_stack
    cfg = seqgen.WalkConfig()
    partition = seqgen.type_partition(coll_index)
    children = np.random.default_rng(42).spawn(1000)
    return [
        seqgen.generate_sequence(desk_corpus, coll_index, item_index, cfg,
                                 children[i], partition)
        for i in range(1000)
    ]


@pytest.fixture(scope="session")
def desk_bench(desk_corpus, desk_stack):
    """Held-out synthetic benchmark, disjoint seed from any training data."""
    from slatewalk import evalharness

    _, coll_index, item_index = desk_stack
    eval_convs = list(uttgen.generate_dataset(
        desk_corpus, coll_index, item_index, seqgen.WalkConfig(), "template",
        np.random.default_rng(999), 250,
    ))
    return evalharness.benchmark_from_conversations(eval_convs, desk_corpus)


@pytest.fixture(scope="session")
def desk_crs(desk_corpus, desk_stack, desk_bench):
    """Retriever trained on 5000 generated conversations (d=32, full grid).

    Returns (params, trained item index, wall seconds spent generating and
    training) so the end-to-end acceptance check can account for the time.
    """
    import time

    from slatewalk import crs, embedder as emb

    _, coll_index, item_index = desk_stack
    start = time.perf_counter()
    train_convs = list(uttgen.generate_dataset(
        desk_corpus, coll_index, item_index, seqgen.WalkConfig(), "template",
        np.random.default_rng(100), 5000,
    ))
    config = crs.CrsTrainConfig(dim=32, checkpoints=(500, 1000, 1500, 2000))
    params, _ = crs.train_crs(train_convs, desk_corpus, config,
                              desk_bench[:100])
    trained_index = emb.index_corpus_items(params, desk_corpus)
    elapsed = time.perf_counter() - start
    return params, trained_index, elapsed
