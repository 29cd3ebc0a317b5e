"""Biased random walk over the collection embedding space.

Each conversation-to-be starts from a target collection vector and an
initial user vector sampled from the target's mid-range neighbors. Every
turn samples a nearby collection of a random type, then moves the user
vector to the unit-norm linear combination of itself and the collection
vector that is closest to the target. The combination weights have a
closed form; the sign ambiguity is resolved by evaluating all feasible
candidates and keeping the best, which also guarantees the target
similarity never decreases (staying put is always a candidate).

A positive collection weight means the turn expresses a positive
preference and the slate is the collection itself; otherwise the slate is
rebuilt from item neighbors of the updated user vector and the preference
is negative. The first turn is always labeled "init".
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Corpus, ItemCollection
from .embedder import EmbeddingIndex, neighbor_range, nearest

COLLINEAR_TOL = 1e-6
FEASIBLE_TOL = 1e-9
RENORM_TOL = 1e-6

PTYPE_INIT = "init"
PTYPE_MORE = "more"
PTYPE_LESS = "less"


class SeqGenError(Exception):
    pass


class NoCollectionsOfTypeError(SeqGenError):
    """No collection of the requested type exists in the index."""

    def __init__(self, ctype: str):
        self.ctype = ctype
        super().__init__(f"no collections of type {ctype!r} in index")


class DegenerateStepError(SeqGenError):
    """The sampled collection vector is collinear with the user vector."""


def _check_unit(name: str, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if abs(float(np.linalg.norm(v)) - 1.0) > RENORM_TOL:
        raise ValueError(f"{name} must be unit norm")
    return v


@dataclass(frozen=True)
class WalkState:
    user_vec: np.ndarray
    target_vec: np.ndarray
    turn: int

    def __post_init__(self):
        _check_unit("user_vec", self.user_vec)
        _check_unit("target_vec", self.target_vec)


@dataclass(frozen=True)
class WeightSolution:
    alpha: float
    beta: float
    degenerate: bool = False

    @property
    def positive(self) -> bool:
        return self.beta > 0.0


@dataclass(frozen=True)
class SlateTurn:
    slate: tuple[str, ...]
    ptype: str
    source_collection: str
    alpha: float | None
    beta: float | None


@dataclass(frozen=True)
class WalkConfig:
    turns: int = 6
    neighborhood: int = 64
    tau: float = 0.1
    init_rank_lo: int = 64
    init_rank_hi: int = 128
    nn_slate_size: int = 10
    type_weights: dict[str, float] | None = None  # None: uniform over index types

    def __post_init__(self):
        if self.turns < 1:
            raise ValueError("turns must be >= 1")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if not (0 <= self.init_rank_lo < self.init_rank_hi):
            raise ValueError("need 0 <= init_rank_lo < init_rank_hi")


@dataclass(frozen=True)
class WalkResult:
    turns: tuple[SlateTurn, ...]
    target_collection: str
    target_vec: np.ndarray
    user_vecs: tuple[np.ndarray, ...]  # r_1 .. r_{T+1}
    init_fallback_used: bool = False


def solve_weights(r: np.ndarray, z: np.ndarray,
                  r_star: np.ndarray) -> WeightSolution:
    """Weights (alpha, beta) maximizing <alpha*r + beta*z, r_star> on the unit circle.

    All three inputs must be unit vectors. The closed form yields up to four
    sign candidates; infeasible ones (combination norm off 1 by more than
    1e-9) are discarded and the best remaining objective wins. Staying put,
    (1, 0), is always included as a candidate, so the returned objective is
    never below <r, r_star>.

    Collinear r and z admit no two-dimensional span; the result is then
    alpha = sign(<r, r_star>), beta = 0 with the degenerate flag set.
    """
    r = _check_unit("r", r)
    z = _check_unit("z", z)
    r_star = _check_unit("r_star", r_star)
    q = float(r @ z)
    v = float(z @ r_star)
    w = float(r @ r_star)

    if abs(q) >= 1.0 - COLLINEAR_TOL:
        alpha = 1.0 if w >= 0 else -1.0
        return WeightSolution(alpha=alpha, beta=0.0, degenerate=True)

    candidates = [(1.0, 0.0)]
    denom_sq = (q * q - 1.0) ** 2 * v * v - (w - q * v) ** 2 * (q * q - 1.0)
    if denom_sq > 0.0:
        a = (w - q * v) / np.sqrt(denom_sq)
        for alpha in (a, -a):
            radicand = max((alpha * q) ** 2 - alpha * alpha + 1.0, 0.0)
            root = float(np.sqrt(radicand))
            for beta in (-alpha * q + root, -alpha * q - root):
                candidates.append((float(alpha), float(beta)))

    best = None
    best_obj = -np.inf
    for alpha, beta in candidates:
        norm_sq = alpha * alpha + beta * beta + 2.0 * alpha * beta * q
        if abs(norm_sq - 1.0) > FEASIBLE_TOL:
            continue
        obj = alpha * w + beta * v
        if obj > best_obj:
            best_obj = obj
            best = (alpha, beta)
    assert best is not None  # (1, 0) is always feasible
    return WeightSolution(alpha=best[0], beta=best[1], degenerate=False)


def sample_target(collection_index: EmbeddingIndex,
                  rng: np.random.Generator) -> tuple[np.ndarray, str]:
    """Uniformly sample a collection vector to act as the walk target."""
    if len(collection_index) == 0:
        raise SeqGenError("collection index is empty")
    i = int(rng.integers(len(collection_index)))
    return collection_index.vectors[i].copy(), collection_index.ids[i]


def sample_initial(
    collection_index: EmbeddingIndex,
    r_star: np.ndarray,
    rank_range: tuple[int, int],
    rng: np.random.Generator,
) -> tuple[np.ndarray, bool]:
    """Uniform sample from the target's neighbors in the given rank band.

    When the index is too small for the band, the last available band of
    equal width is used instead and the fallback flag is set.
    """
    if len(collection_index) == 0:
        raise SeqGenError("collection index is empty")
    lo, hi = rank_range
    band = neighbor_range(collection_index, r_star, lo, hi)
    fallback = False
    if not band:
        width = hi - lo
        n = len(collection_index)
        band = neighbor_range(collection_index, r_star, max(0, n - width), n)
        fallback = True
    pick = band[int(rng.integers(len(band)))]
    row = collection_index.ids.index(pick[0])
    return collection_index.vectors[row].copy(), fallback


@dataclass(frozen=True)
class TypeSlice:
    rows: np.ndarray
    vectors: np.ndarray
    ids: np.ndarray  # aligned with rows

    def __len__(self) -> int:
        return len(self.rows)


def type_partition(collection_index: EmbeddingIndex) -> dict[str, TypeSlice]:
    """Per-type views of a tagged collection index, built once per walk batch."""
    if collection_index.tags is None:
        raise ValueError("collection index has no type tags")
    out: dict[str, TypeSlice] = {}
    tags = np.array(collection_index.tags)
    ids = np.array(collection_index.ids)
    for ctype in sorted(set(collection_index.tags)):
        rows = np.nonzero(tags == ctype)[0]
        out[ctype] = TypeSlice(rows=rows, vectors=collection_index.vectors[rows],
                               ids=ids[rows])
    return out


def sample_collection(
    collection_index: EmbeddingIndex,
    r_t: np.ndarray,
    r_star: np.ndarray,
    ctype: str,
    cfg: WalkConfig,
    rng: np.random.Generator,
    partition: dict[str, TypeSlice] | None = None,
) -> tuple[str, np.ndarray]:
    """Sample a collection of the given type from the user vector's neighborhood.

    Candidates are the top ``cfg.neighborhood`` collections of that type by
    similarity to the current user vector (type filtering happens before
    truncation); one is drawn with probability softmax of target similarity
    over cfg.tau. Fewer candidates than the neighborhood size means all are
    used.
    """
    if partition is None:
        partition = type_partition(collection_index)
    if ctype not in partition or len(partition[ctype]) == 0:
        raise NoCollectionsOfTypeError(ctype)
    piece = partition[ctype]
    cur_sims = piece.vectors @ np.asarray(r_t, dtype=np.float64)
    order = np.lexsort((piece.ids, -cur_sims))[: cfg.neighborhood]
    cand_rows = piece.rows[order]
    cand_vecs = piece.vectors[order]
    logits = (cand_vecs @ np.asarray(r_star, dtype=np.float64)) / cfg.tau
    logits -= logits.max()
    probs = np.exp(logits)
    probs /= probs.sum()
    pick = int(rng.choice(len(cand_rows), p=probs))
    row = int(cand_rows[pick])
    return collection_index.ids[row], collection_index.vectors[row].copy()


def step(
    state: WalkState,
    coll: ItemCollection,
    z_vec: np.ndarray,
    item_index: EmbeddingIndex,
    cfg: WalkConfig,
    allow_degenerate: bool = False,
) -> tuple[WalkState, SlateTurn]:
    """Advance the walk one turn using the sampled collection.

    The user vector moves to the renormalized optimal combination. A
    positive collection weight routes the slate to the collection's own
    items with preference "more"; otherwise the slate is the item
    neighborhood of the updated user vector with preference "less". Turn 1
    is labeled "init" regardless. A degenerate solve raises unless
    allow_degenerate is set, in which case the sign-corrected user vector is
    kept.
    """
    sol = solve_weights(state.user_vec, z_vec, state.target_vec)
    if sol.degenerate and not allow_degenerate:
        raise DegenerateStepError(
            f"collection {coll.id!r} is collinear with the user vector"
        )
    new_vec = sol.alpha * state.user_vec + sol.beta * np.asarray(z_vec, dtype=np.float64)
    norm = float(np.linalg.norm(new_vec))
    if norm == 0.0:
        raise SeqGenError("walk update collapsed to the zero vector")
    new_vec = new_vec / norm

    if sol.beta > 0.0:
        slate = tuple(coll.item_ids)
        ptype = PTYPE_MORE
    else:
        hits = nearest(item_index, new_vec, cfg.nn_slate_size)
        slate = tuple(h[0] for h in hits)
        ptype = PTYPE_LESS
    if state.turn == 1:
        ptype = PTYPE_INIT
    turn = SlateTurn(
        slate=slate,
        ptype=ptype,
        source_collection=coll.id,
        alpha=sol.alpha,
        beta=sol.beta,
    )
    new_state = WalkState(user_vec=new_vec, target_vec=state.target_vec,
                          turn=state.turn + 1)
    return new_state, turn


def _sample_ctype(cfg: WalkConfig, available: Sequence[str],
                  rng: np.random.Generator) -> str:
    if cfg.type_weights:
        names = sorted(cfg.type_weights)
        weights = np.array([cfg.type_weights[n] for n in names], dtype=np.float64)
        weights /= weights.sum()
        return names[int(rng.choice(len(names), p=weights))]
    return available[int(rng.integers(len(available)))]


def generate_sequence(
    corpus: Corpus,
    collection_index: EmbeddingIndex,
    item_index: EmbeddingIndex,
    cfg: WalkConfig,
    rng: np.random.Generator,
    partition: dict[str, TypeSlice] | None = None,
) -> WalkResult:
    """Run one full walk, producing a slate turn per configured turn.

    A degenerate collection draw (collinear with the user vector) is
    resampled up to five times; after that the degenerate sign step is
    accepted. An unavailable collection type is resampled as well.
    """
    if partition is None:
        partition = type_partition(collection_index)
    available_types = sorted(t for t, piece in partition.items() if len(piece))
    if not available_types:
        raise SeqGenError("no typed collections to sample from")

    target_vec, target_id = sample_target(collection_index, rng)
    r1, fallback = sample_initial(
        collection_index, target_vec, (cfg.init_rank_lo, cfg.init_rank_hi), rng
    )
    state = WalkState(user_vec=r1, target_vec=target_vec, turn=1)
    user_vecs = [state.user_vec]
    turns: list[SlateTurn] = []
    for _ in range(cfg.turns):
        for type_attempt in range(20):
            ctype = _sample_ctype(cfg, available_types, rng)
            try:
                cid, z_vec = sample_collection(
                    collection_index, state.user_vec, state.target_vec,
                    ctype, cfg, rng, partition,
                )
                break
            except NoCollectionsOfTypeError:
                continue
        else:
            raise SeqGenError("could not sample a collection of any configured type")
        coll = corpus.collections[cid]
        advanced = None
        for attempt in range(5):
            try:
                advanced = step(state, coll, z_vec, item_index, cfg)
                break
            except DegenerateStepError:
                cid, z_vec = sample_collection(
                    collection_index, state.user_vec, state.target_vec,
                    ctype, cfg, rng, partition,
                )
                coll = corpus.collections[cid]
        if advanced is None:
            advanced = step(state, coll, z_vec, item_index, cfg,
                            allow_degenerate=True)
        state, turn = advanced
        turns.append(turn)
        user_vecs.append(state.user_vec)
    return WalkResult(
        turns=tuple(turns),
        target_collection=target_id,
        target_vec=target_vec,
        user_vecs=tuple(user_vecs),
        init_fallback_used=fallback,
    )


def random_sequence(
    corpus: Corpus,
    collection_index: EmbeddingIndex,
    cfg: WalkConfig,
    rng: np.random.Generator,
) -> WalkResult:
    """Control generator: a uniformly random collection becomes each turn's slate.

    No walk takes place, so consecutive slates have no consistency between
    them. Preference types are "init" on the first turn and a coin flip
    between "more" and "less" afterwards; weights are not defined.
    """
    ids = collection_index.ids
    if not ids:
        raise SeqGenError("collection index is empty")
    target_vec, target_id = sample_target(collection_index, rng)
    turns = []
    for t in range(1, cfg.turns + 1):
        i = int(rng.integers(len(ids)))
        coll = corpus.collections[ids[i]]
        if t == 1:
            ptype = PTYPE_INIT
        else:
            ptype = PTYPE_MORE if rng.random() < 0.5 else PTYPE_LESS
        turns.append(SlateTurn(
            slate=tuple(coll.item_ids),
            ptype=ptype,
            source_collection=coll.id,
            alpha=None,
            beta=None,
        ))
    return WalkResult(
        turns=tuple(turns),
        target_collection=target_id,
        target_vec=target_vec,
        user_vecs=(),
    )
