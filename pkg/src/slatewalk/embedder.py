"""Dual encoder over items and collections, plus an exact cosine index.

The encoder is deliberately small: token sequences are hashed words, a
sequence embedding is the L2-normalized mean of token embeddings, and the
query and item towers share one embedding table. Training minimizes a
softmax contrastive loss with in-batch negatives using hand-derived
gradients and plain SGD, so the whole model stays dependency-free and easy
to check against finite differences.

Nearest-neighbor search is exact brute force over unit vectors (cosine
similarity equals the dot product), with ties broken by ascending id so
every ranking is deterministic.
"""

from __future__ import annotations

import hashlib
import re
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Corpus, Item, ItemCollection

# Text tokens hash into the first VOCAB_BUCKETS rows; the last two rows are
# reserved so special tokens can never collide with hashed words.
VOCAB_BUCKETS = 2**16
SEP_ID = VOCAB_BUCKETS
UNK_ID = VOCAB_BUCKETS + 1
VOCAB_SIZE = VOCAB_BUCKETS + 2

DEFAULT_MAX_LEN = 256
UNIT_NORM_TOL = 1e-6

_WORD_RE = re.compile(r"[0-9a-z]+")

_PARAMS_MAGIC = b"SWDE"
_INDEX_MAGIC = b"SWIX"
_FORMAT_VERSION = 1


@lru_cache(maxsize=1 << 20)
def _hash_word(word: str) -> int:
    digest = hashlib.blake2b(word.encode("utf-8"), digest_size=4).digest()
    return int.from_bytes(digest, "big") % VOCAB_BUCKETS


def tokenize(text: str) -> np.ndarray:
    """Lowercase, split on non-alphanumerics, hash words into the vocabulary."""
    words = _WORD_RE.findall(text.lower())
    return np.array([_hash_word(w) for w in words], dtype=np.int64)


def truncate(tokens: np.ndarray, max_len: int = DEFAULT_MAX_LEN) -> np.ndarray:
    """Keep the first max_len tokens, dropping the tail."""
    return tokens[:max_len]


def item_text(item: Item) -> str:
    """Textual representation of an item: title, artist names, album."""
    parts = [item.title, *item.artists]
    if item.album:
        parts.append(item.album)
    return " ".join(parts)


def _feature_tokens(features: Sequence[float]) -> list[int]:
    # Coarse per-dimension quantization; each (dim, level) pair gets its own
    # hashed token.
    out = []
    for i, v in enumerate(features):
        level = int(np.clip(round(float(v)), -3, 3))
        out.append(_hash_word(f"feat{i}:{level}"))
    return out


def featurize_item(item: Item, max_len: int = DEFAULT_MAX_LEN,
                   include_features: bool = True) -> np.ndarray:
    """Deterministic token sequence for an item.

    Quantized feature tokens are appended when the item carries a feature
    vector. An item that tokenizes to nothing yields the reserved unknown
    token so sequences are never empty.
    """
    tokens = list(tokenize(item_text(item)))
    if include_features and item.features is not None:
        tokens.extend(_feature_tokens(item.features))
    if not tokens:
        tokens = [UNK_ID]
    return truncate(np.array(tokens, dtype=np.int64), max_len)


def featurize_collection_query(
    coll: ItemCollection,
    corpus: Corpus,
    n_seed: int = 5,
    rng: np.random.Generator | None = None,
    max_len: int = DEFAULT_MAX_LEN,
) -> np.ndarray:
    """Collection query tokens: metadata followed by a few sampled seed items.

    Seed items are drawn without replacement; n_seed=0 yields metadata
    tokens only.
    """
    if n_seed < 0:
        raise ValueError(f"n_seed must be >= 0, got {n_seed}")
    tokens = list(tokenize(f"{coll.title} {coll.description}"))
    if n_seed > 0:
        k = min(n_seed, len(coll.item_ids))
        if rng is None:
            rng = np.random.default_rng(0)
        picks = rng.choice(len(coll.item_ids), size=k, replace=False)
        for idx in picks:
            tokens.extend(featurize_item(corpus.items[coll.item_ids[int(idx)]]))
    if not tokens:
        tokens = [UNK_ID]
    return truncate(np.array(tokens, dtype=np.int64), max_len)


@dataclass
class EncoderParams:
    """Shared token embedding table for both encoder towers."""

    table: np.ndarray  # (VOCAB_SIZE, dim) float64

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def copy(self) -> "EncoderParams":
        return EncoderParams(table=self.table.copy())


def init_params(dim: int, seed: int = 0, scale: float = 0.1) -> EncoderParams:
    if dim < 2:
        raise ValueError(f"embedding dimension must be >= 2, got {dim}")
    rng = np.random.default_rng(seed)
    table = rng.normal(scale=scale, size=(VOCAB_SIZE, dim))
    return EncoderParams(table=table)


def encode(params: EncoderParams, tokens: np.ndarray,
           return_degenerate: bool = False):
    """Unit-norm mean of token embeddings.

    A zero pre-normalization vector falls back to the first basis vector;
    pass return_degenerate=True to receive (vector, fallback_used).
    """
    if len(tokens) == 0:
        raise ValueError("cannot encode an empty token sequence")
    mean = params.table[np.asarray(tokens, dtype=np.int64)].mean(axis=0)
    norm = float(np.linalg.norm(mean))
    degenerate = norm == 0.0
    if degenerate:
        vec = np.zeros(params.dim)
        vec[0] = 1.0
    else:
        vec = mean / norm
    if return_degenerate:
        return vec, degenerate
    return vec


def encode_batch(params: EncoderParams, seqs: Sequence[np.ndarray],
                 return_degenerate: bool = False):
    """Encode many sequences at once; rows are unit vectors."""
    if len(seqs) == 0:
        empty = np.zeros((0, params.dim))
        return (empty, np.zeros(0, dtype=bool)) if return_degenerate else empty
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    if np.any(lengths == 0):
        raise ValueError("cannot encode an empty token sequence")
    flat = np.concatenate([np.asarray(s, dtype=np.int64) for s in seqs])
    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    sums = np.add.reduceat(params.table[flat], starts, axis=0)
    means = sums / lengths[:, None]
    norms = np.linalg.norm(means, axis=1)
    degenerate = norms == 0.0
    safe = np.where(degenerate, 1.0, norms)
    vecs = means / safe[:, None]
    if np.any(degenerate):
        vecs[degenerate] = 0.0
        vecs[degenerate, 0] = 1.0
    if return_degenerate:
        return vecs, degenerate
    return vecs


def contrastive_loss(params: EncoderParams, query_seqs: Sequence[np.ndarray],
                     item_seqs: Sequence[np.ndarray], tau: float) -> float:
    """Mean softmax contrastive loss with in-batch negatives.

    Pair i is (query_seqs[i], item_seqs[i]); every other item in the batch
    serves as a negative for query i.
    """
    if len(query_seqs) != len(item_seqs):
        raise ValueError("query and item batches must have equal length")
    f = encode_batch(params, query_seqs)
    g = encode_batch(params, item_seqs)
    scores = f @ g.T / tau
    row_max = scores.max(axis=1, keepdims=True)
    logz = np.log(np.exp(scores - row_max).sum(axis=1)) + row_max[:, 0]
    return float(np.mean(logz - np.diag(scores)))


def contrastive_loss_grad(
    params: EncoderParams,
    query_seqs: Sequence[np.ndarray],
    item_seqs: Sequence[np.ndarray],
    tau: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss plus its gradient w.r.t. the rows of the embedding table.

    Returns (loss, row_ids, row_grads) where row_grads[k] is the gradient
    for table row row_ids[k]. Only rows used by the batch appear.
    """
    if len(query_seqs) != len(item_seqs):
        raise ValueError("query and item batches must have equal length")
    n = len(query_seqs)
    f, f_deg = encode_batch(params, query_seqs, return_degenerate=True)
    g, g_deg = encode_batch(params, item_seqs, return_degenerate=True)

    scores = f @ g.T / tau
    row_max = scores.max(axis=1, keepdims=True)
    expd = np.exp(scores - row_max)
    probs = expd / expd.sum(axis=1, keepdims=True)
    loss = float(np.mean(np.log(expd.sum(axis=1)) + row_max[:, 0] - np.diag(scores)))

    coef = (probs - np.eye(n)) / (tau * n)
    d_f = coef @ g
    d_g = coef.T @ f

    def _through_norm(seqs, vecs, deg, d_vecs):
        # d/d(mean) of v/|v| is (I - vv^T)/|v|; degenerate rows get zero grad.
        lengths = np.array([len(s) for s in seqs], dtype=np.int64)
        flat = np.concatenate([np.asarray(s, dtype=np.int64) for s in seqs])
        starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
        sums = np.add.reduceat(params.table[flat], starts, axis=0)
        prenorm = np.linalg.norm(sums / lengths[:, None], axis=1)
        proj = d_vecs - (np.sum(d_vecs * vecs, axis=1, keepdims=True)) * vecs
        with np.errstate(divide="ignore", invalid="ignore"):
            d_mean = proj / prenorm[:, None]
        d_mean[deg] = 0.0
        per_token = np.repeat(d_mean / lengths[:, None], lengths, axis=0)
        return flat, per_token

    flat_q, per_q = _through_norm(query_seqs, f, f_deg, d_f)
    flat_x, per_x = _through_norm(item_seqs, g, g_deg, d_g)
    all_ids = np.concatenate([flat_q, flat_x])
    all_grads = np.concatenate([per_q, per_x])
    row_ids, inverse = np.unique(all_ids, return_inverse=True)
    row_grads = np.zeros((len(row_ids), params.dim))
    np.add.at(row_grads, inverse, all_grads)
    return loss, row_ids, row_grads


@dataclass(frozen=True)
class TrainConfig:
    """Desk-scale contrastive training defaults.

    Large-scale presets from production-style setups (batch 512, lr 1e-3,
    100k steps) are intentionally not the defaults here.
    """

    dim: int = 32
    steps: int = 2000
    batch_size: int = 64
    lr: float = 0.05
    tau: float = 0.05
    n_seed: int = 5
    max_len: int = DEFAULT_MAX_LEN
    seed: int = 0
    init_scale: float = 0.1


@dataclass
class TrainReport:
    initial_probe_loss: float
    final_probe_loss: float
    steps: int


class InsufficientDataError(ValueError):
    pass


def _sgd_step(params: EncoderParams, row_ids, row_grads, lr: float) -> None:
    params.table[row_ids] -= lr * row_grads


def train_dual_encoder(corpus: Corpus, config: TrainConfig = TrainConfig(),
                       return_report: bool = False):
    """Train the collection/item dual encoder on collection-item pairs.

    Each batch pairs a collection query (metadata plus sampled seed items)
    with one uniformly sampled member item; other items in the batch act as
    negatives. A probe batch is held out of training and its loss is
    reported before and after.
    """
    eligible = [c for c in corpus.collection_list() if c.item_ids]
    if len(eligible) < config.batch_size:
        raise InsufficientDataError(
            f"need at least {config.batch_size} collections, got {len(eligible)}"
        )
    rng = np.random.default_rng(config.seed)
    params = init_params(config.dim, seed=config.seed, scale=config.init_scale)

    item_tokens = {i.id: featurize_item(i, config.max_len) for i in corpus.item_list()}

    def sample_pair(coll, gen):
        q = featurize_collection_query(coll, corpus, config.n_seed, gen, config.max_len)
        pos = coll.item_ids[int(gen.integers(len(coll.item_ids)))]
        return q, item_tokens[pos]

    # Hold out a probe batch when there is room for one.
    pool = list(eligible)
    probe_size = min(config.batch_size, len(pool))
    if len(pool) >= 2 * config.batch_size:
        probe_idx = rng.choice(len(pool), size=probe_size, replace=False)
        probe_set = {int(i) for i in probe_idx}
        probe_colls = [pool[i] for i in sorted(probe_set)]
        pool = [c for i, c in enumerate(pool) if i not in probe_set]
    else:
        probe_colls = [pool[int(i)] for i in
                       rng.choice(len(pool), size=probe_size, replace=False)]
    probe_pairs = [sample_pair(c, rng) for c in probe_colls]
    probe_q = [p[0] for p in probe_pairs]
    probe_x = [p[1] for p in probe_pairs]

    initial_loss = contrastive_loss(params, probe_q, probe_x, config.tau)
    for _ in range(config.steps):
        picks = rng.choice(len(pool), size=config.batch_size, replace=False)
        batch = [sample_pair(pool[int(i)], rng) for i in picks]
        _, row_ids, row_grads = contrastive_loss_grad(
            params, [b[0] for b in batch], [b[1] for b in batch], config.tau
        )
        _sgd_step(params, row_ids, row_grads, config.lr)
    final_loss = contrastive_loss(params, probe_q, probe_x, config.tau)

    report = TrainReport(initial_probe_loss=initial_loss,
                         final_probe_loss=final_loss, steps=config.steps)
    if return_report:
        return params, report
    return params


@dataclass(frozen=True)
class EmbeddingIndex:
    """Immutable store of unit vectors with exact cosine ranking."""

    ids: tuple[str, ...]
    vectors: np.ndarray  # (n, dim), rows unit norm
    payload_kind: str  # "item" | "collection"
    tags: tuple[str, ...] | None = None  # optional per-row labels, e.g. ctype

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def build_index(ids: Sequence[str], vectors: np.ndarray, payload_kind: str = "item",
                tags: Sequence[str] | None = None) -> EmbeddingIndex:
    """Validate and freeze an id-aligned matrix of unit vectors."""
    ids = tuple(str(i) for i in ids)
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] != len(ids):
        raise ValueError("vectors must be a matrix with one row per id")
    if len(set(ids)) != len(ids):
        seen, dup = set(), None
        for i in ids:
            if i in seen:
                dup = i
                break
            seen.add(i)
        raise ValueError(f"duplicate id in index: {dup!r}")
    if payload_kind not in ("item", "collection"):
        raise ValueError(f"unknown payload kind {payload_kind!r}")
    if len(ids):
        norms = np.linalg.norm(vectors, axis=1)
        worst = float(np.abs(norms - 1.0).max())
        if worst > UNIT_NORM_TOL:
            raise ValueError(f"non-unit vector in index (|norm-1| = {worst:.2e})")
    if tags is not None:
        tags = tuple(str(t) for t in tags)
        if len(tags) != len(ids):
            raise ValueError("tags must align with ids")
    return EmbeddingIndex(ids=ids, vectors=vectors.copy(), payload_kind=payload_kind,
                          tags=tags)


def index_corpus_items(params: EncoderParams, corpus: Corpus,
                       max_len: int = DEFAULT_MAX_LEN) -> EmbeddingIndex:
    items = corpus.item_list()
    seqs = [featurize_item(i, max_len) for i in items]
    vecs = encode_batch(params, seqs)
    return build_index([i.id for i in items], vecs, "item")


def index_corpus_collections(params: EncoderParams, corpus: Corpus,
                             n_seed: int = 5, seed: int = 0,
                             max_len: int = DEFAULT_MAX_LEN) -> EmbeddingIndex:
    """Embed every collection query once (fixed rng) and index the vectors."""
    rng = np.random.default_rng(seed)
    colls = corpus.collection_list()
    seqs = [featurize_collection_query(c, corpus, n_seed, rng, max_len) for c in colls]
    vecs = encode_batch(params, seqs)
    return build_index([c.id for c in colls], vecs, "collection",
                       tags=[c.ctype for c in colls])


def _ranked_order(index: EmbeddingIndex, q: np.ndarray) -> np.ndarray:
    scores = index.vectors @ np.asarray(q, dtype=np.float64)
    ids_arr = np.array(index.ids)
    # Sort by descending score, then ascending id.
    return np.lexsort((ids_arr, -scores)), scores


def nearest(index: EmbeddingIndex, q: np.ndarray, k: int) -> list[tuple[str, float]]:
    """Exact top-k by cosine similarity, ties broken by ascending id.

    k larger than the index returns the full ranking.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    order, scores = _ranked_order(index, q)
    top = order[: min(k, len(index))]
    return [(index.ids[int(i)], float(scores[int(i)])) for i in top]


def neighbor_range(index: EmbeddingIndex, q: np.ndarray, lo: int,
                   hi: int) -> list[tuple[str, float]]:
    """Ranks [lo, hi) of the exact descending ranking, clipped to the index."""
    if not (0 <= lo < hi):
        raise ValueError(f"need 0 <= lo < hi, got [{lo}, {hi})")
    order, scores = _ranked_order(index, q)
    band = order[lo:min(hi, len(index))]
    return [(index.ids[int(i)], float(scores[int(i)])) for i in band]


def save_params(params: EncoderParams, path) -> None:
    """Versioned binary: magic, version, vocab size, dim, row-major float64."""
    table = np.ascontiguousarray(params.table, dtype=np.float64)
    with Path(path).open("wb") as fh:
        fh.write(_PARAMS_MAGIC)
        fh.write(struct.pack("<IQQ", _FORMAT_VERSION, table.shape[0], table.shape[1]))
        fh.write(table.tobytes())


def load_params(path) -> EncoderParams:
    with Path(path).open("rb") as fh:
        magic = fh.read(4)
        if magic != _PARAMS_MAGIC:
            raise ValueError(f"not an encoder parameter file: magic {magic!r}")
        version, vocab, dim = struct.unpack("<IQQ", fh.read(20))
        if version != _FORMAT_VERSION:
            raise ValueError(f"unsupported parameter file version {version}")
        data = np.frombuffer(fh.read(vocab * dim * 8), dtype=np.float64)
    return EncoderParams(table=data.reshape(vocab, dim).copy())


def save_index(index: EmbeddingIndex, path) -> None:
    vectors = np.ascontiguousarray(index.vectors, dtype=np.float64)
    with Path(path).open("wb") as fh:
        fh.write(_INDEX_MAGIC)
        kind_flag = 0 if index.payload_kind == "item" else 1
        has_tags = 1 if index.tags is not None else 0
        fh.write(struct.pack("<IBBQQ", _FORMAT_VERSION, kind_flag, has_tags,
                             len(index.ids), index.dim if len(index.ids) else 0))
        for i, ident in enumerate(index.ids):
            raw = ident.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            if index.tags is not None:
                raw_tag = index.tags[i].encode("utf-8")
                fh.write(struct.pack("<I", len(raw_tag)))
                fh.write(raw_tag)
        fh.write(vectors.tobytes())


def load_index(path) -> EmbeddingIndex:
    with Path(path).open("rb") as fh:
        magic = fh.read(4)
        if magic != _INDEX_MAGIC:
            raise ValueError(f"not an index file: magic {magic!r}")
        version, kind_flag, has_tags, n, dim = struct.unpack("<IBBQQ", fh.read(22))
        if version != _FORMAT_VERSION:
            raise ValueError(f"unsupported index file version {version}")
        ids, tags = [], []
        for _ in range(n):
            (id_len,) = struct.unpack("<I", fh.read(4))
            ids.append(fh.read(id_len).decode("utf-8"))
            if has_tags:
                (tag_len,) = struct.unpack("<I", fh.read(4))
                tags.append(fh.read(tag_len).decode("utf-8"))
        data = np.frombuffer(fh.read(n * dim * 8), dtype=np.float64)
    vectors = data.reshape(n, dim).copy() if n else np.zeros((0, dim))
    return EmbeddingIndex(
        ids=tuple(ids),
        vectors=vectors,
        payload_kind="item" if kind_flag == 0 else "collection",
        tags=tuple(tags) if has_tags else None,
    )
