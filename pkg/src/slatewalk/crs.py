"""Conversational retriever: query construction, training, retrieval.

A retrieval query is the current utterance followed by the history in
reverse chronological order, alternating slate text and utterance segments
with a literal separator token between adjacent segments. Truncation keeps
the head of the sequence, so the most recent context survives.

Training reuses the contrastive core of the embedder on (query, positive
item) pairs sampled from generated conversations, with two augmentations:
uniform truncation of the conversation to a prefix of turns, and uniform
truncation of each history slate. Checkpoints on a configurable step grid
are scored by top-10 hit rate on a development benchmark and the best one
is returned.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .corpus import Corpus, Item
from .embedder import (
    DEFAULT_MAX_LEN,
    SEP_ID,
    EmbeddingIndex,
    EncoderParams,
    TrainConfig,
    contrastive_loss,
    contrastive_loss_grad,
    encode,
    featurize_item,
    index_corpus_items,
    init_params,
    item_text,
    nearest,
    tokenize,
    truncate,
)
from .uttgen import Conversation

SEP_TEXT = "[SEP]"

# One history turn: the user utterance and the items of the slate shown
# for it, most recent last.
History = Sequence[tuple[str, Sequence[Item]]]


@dataclass(frozen=True)
class CrsQuery:
    text: str
    tokens: np.ndarray
    cap: int


def slate_text(items: Sequence[Item], cap: int) -> str:
    """Concatenated item texts for the first ``cap`` slate items."""
    return " ".join(item_text(it) for it in items[:cap])


def build_query(history: History, u_t: str, cap: int = 3,
                max_len: int = DEFAULT_MAX_LEN) -> CrsQuery:
    """Query layout: u_t, then per earlier turn (newest first) the slate
    text and the utterance, separated by single separator tokens."""
    if cap < 0:
        raise ValueError(f"cap must be >= 0, got {cap}")
    segments = [u_t]
    for utterance, items in reversed(list(history)):
        segments.append(slate_text(items, cap))
        segments.append(utterance)
    text = f" {SEP_TEXT} ".join(segments)
    token_parts: list[np.ndarray] = []
    sep = np.array([SEP_ID], dtype=np.int64)
    for i, seg in enumerate(segments):
        if i > 0:
            token_parts.append(sep)
        token_parts.append(tokenize(seg))
    tokens = np.concatenate(token_parts) if token_parts else np.zeros(0, dtype=np.int64)
    if len(tokens) == 0:
        tokens = np.array([SEP_ID], dtype=np.int64)
    return CrsQuery(text=text, tokens=truncate(tokens, max_len), cap=cap)


@dataclass(frozen=True)
class TrainingExample:
    query: CrsQuery
    positive_id: str
    conversation_id: str


def _resolve_slate(slate: Sequence[str], corpus: Corpus) -> list[Item]:
    return [corpus.items[i] for i in slate if i in corpus.items]


def _sample_example(conv: Conversation, corpus: Corpus,
                    rng: np.random.Generator, cap: int,
                    max_len: int) -> TrainingExample:
    t = int(rng.integers(len(conv.turns))) + 1
    history = []
    for prev in conv.turns[: t - 1]:
        items = _resolve_slate(prev.slate, corpus)
        if items:
            keep = int(rng.integers(len(items))) + 1
            items = items[:keep]
        history.append((prev.utterance, items))
    turn = conv.turns[t - 1]
    positive = turn.slate[int(rng.integers(len(turn.slate)))]
    query = build_query(history, turn.utterance, cap=cap, max_len=max_len)
    return TrainingExample(query=query, positive_id=positive,
                           conversation_id=conv.id)


def augment(conversations: Sequence[Conversation], corpus: Corpus,
            rng: np.random.Generator, cap: int = 3,
            max_len: int = DEFAULT_MAX_LEN,
            per_conversation: int = 1) -> Iterator[TrainingExample]:
    """Training examples with random turn and slate truncation.

    Each example picks a uniform turn t, builds the query from the turns
    before it (each history slate independently truncated to a uniform
    prefix), and samples its positive uniformly from turn t's slate.
    """
    if not conversations:
        raise ValueError("no conversations to augment")
    for conv in conversations:
        if not conv.turns:
            continue
        for _ in range(per_conversation):
            yield _sample_example(conv, corpus, rng, cap, max_len)


@dataclass(frozen=True)
class CrsTrainConfig(TrainConfig):
    """Retriever training defaults at desk scale.

    The checkpoint grid scales with the step budget; a large-budget run
    would use a grid like (25_000, 50_000, 75_000, 100_000) instead.
    """

    cap: int = 3
    checkpoints: tuple[int, ...] = (500, 1000, 1500, 2000)
    dev_k: int = 10

    def __post_init__(self):
        if not self.checkpoints:
            raise ValueError("need at least one checkpoint step")
        if sorted(self.checkpoints) != list(self.checkpoints):
            raise ValueError("checkpoint steps must be ascending")


@dataclass
class SelectionReport:
    checkpoint_scores: list[tuple[int, float]]
    selected_step: int
    dev_k: int
    initial_probe_loss: float = float("nan")
    final_probe_loss: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "dev_k": self.dev_k,
            "checkpoints": [
                {"step": s, "hits": h, "selected": s == self.selected_step}
                for s, h in self.checkpoint_scores
            ],
            "selected_step": self.selected_step,
            "initial_probe_loss": self.initial_probe_loss,
            "final_probe_loss": self.final_probe_loss,
        }


def train_crs(
    dataset: Sequence[Conversation],
    corpus: Corpus,
    config: CrsTrainConfig,
    dev_bench: Sequence,
) -> tuple[EncoderParams, SelectionReport]:
    """Contrastively train the retriever and select the best checkpoint.

    The development benchmark is scored with top-``dev_k`` hit rate at every
    step in the checkpoint grid; the highest-scoring checkpoint wins, with
    ties going to the earliest step.
    """
    from . import evalharness  # runtime import; evalharness imports this module

    usable = [c for c in dataset if c.turns]
    if not usable:
        raise ValueError("dataset has no conversations with turns")
    rng = np.random.default_rng(config.seed)
    params = init_params(config.dim, seed=config.seed, scale=config.init_scale)
    item_tokens = {i.id: featurize_item(i, config.max_len) for i in corpus.item_list()}

    probe_picks = rng.integers(len(usable), size=min(config.batch_size, len(usable)))
    probe = [_sample_example(usable[int(i)], corpus, rng, config.cap,
                             config.max_len) for i in probe_picks]
    probe_q = [b.query.tokens for b in probe]
    probe_x = [item_tokens[b.positive_id] for b in probe]
    initial_probe = contrastive_loss(params, probe_q, probe_x, config.tau)

    total_steps = config.checkpoints[-1]
    snapshots: list[tuple[int, EncoderParams]] = []
    checkpoint_set = set(config.checkpoints)
    for step_no in range(1, total_steps + 1):
        picks = rng.integers(len(usable), size=config.batch_size)
        batch = [_sample_example(usable[int(i)], corpus, rng, config.cap,
                                 config.max_len) for i in picks]
        q_seqs = [b.query.tokens for b in batch]
        x_seqs = [item_tokens[b.positive_id] for b in batch]
        _, row_ids, row_grads = contrastive_loss_grad(params, q_seqs, x_seqs,
                                                      config.tau)
        params.table[row_ids] -= config.lr * row_grads
        if step_no in checkpoint_set:
            snapshots.append((step_no, params.copy()))
    final_probe = contrastive_loss(params, probe_q, probe_x, config.tau)

    scores = []
    for step_no, snap in snapshots:
        item_index = index_corpus_items(snap, corpus, config.max_len)
        report = evalharness.run_eval(
            "crs", dev_bench, ks=(config.dev_k,), corpus=corpus,
            params=snap, item_index=item_index, cap=config.cap,
            max_len=config.max_len,
        )
        scores.append((step_no, report.macro[config.dev_k]))
    best_step, _ = max(scores, key=lambda sh: (sh[1], -sh[0]))
    selected = next(snap for step_no, snap in snapshots if step_no == best_step)
    return selected, SelectionReport(checkpoint_scores=scores,
                                     selected_step=best_step,
                                     dev_k=config.dev_k,
                                     initial_probe_loss=initial_probe,
                                     final_probe_loss=final_probe)


def retrieve(
    params: EncoderParams,
    item_index: EmbeddingIndex,
    history: History,
    u_t: str,
    k: int,
    cap: int = 3,
    max_len: int = DEFAULT_MAX_LEN,
) -> list[tuple[str, float]]:
    """Top-k items for the query built from the utterance and history."""
    query = build_query(history, u_t, cap=cap, max_len=max_len)
    return nearest(item_index, encode(params, query.tokens), k)
