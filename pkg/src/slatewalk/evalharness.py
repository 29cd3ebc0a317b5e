"""Offline evaluation: turn examples with gold history, macro hit rates,
a bag-of-words baseline, and the ablation and data-scaling experiment
runners.

Every system is scored per turn against the same recorded ("gold")
history, never against its own predictions. The target slate at a turn is
every liked item of the conversation that has not yet been seen in the
cleaned history, so liked items that never entered the history (leftovers)
stay in later targets. Turns whose target ends up empty are excluded from
averaging and counted in the report.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import crs
from .corpus import Corpus, Item
from .embedder import (
    DEFAULT_MAX_LEN,
    EmbeddingIndex,
    EncoderParams,
    TrainConfig,
    index_corpus_items,
    init_params,
    item_text,
    train_dual_encoder,
)
from .seqgen import WalkConfig
from .uttgen import (
    MODE_TEMPLATE,
    Conversation,
    DatasetStats,
    FilterRules,
    generate_dataset,
)

KNOWN_SYSTEMS = ("crs", "bm25", "untrained-encoder", "collection-trained-encoder",
                 "random")


class EvalError(Exception):
    pass


class EmptyTargetError(EvalError):
    """hits_at_k was called with an empty target slate."""


@dataclass(frozen=True)
class BenchmarkTurn:
    query: str
    results: tuple[tuple[str, bool], ...]  # (item id, liked)
    history_items: tuple[str, ...] | None = None  # None: all liked results
    flags: tuple[str, ...] = ()

    def liked_ids(self) -> tuple[str, ...]:
        return tuple(i for i, liked in self.results if liked)


@dataclass(frozen=True)
class BenchmarkConversation:
    id: str
    turns: tuple[BenchmarkTurn, ...]


def load_benchmark(path) -> list[BenchmarkConversation]:
    """Read line-delimited benchmark conversations.

    Each line is {"id", "turns": [{"query", "results": [{"item_id",
    "liked"}], "history_items"?, "flags"?}]}. Unknown fields are ignored.
    """
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            turns = []
            for t in record["turns"]:
                results = tuple(
                    (str(r["item_id"]), bool(r["liked"])) for r in t["results"]
                )
                history = t.get("history_items")
                turns.append(BenchmarkTurn(
                    query=str(t["query"]),
                    results=results,
                    history_items=tuple(history) if history is not None else None,
                    flags=tuple(t.get("flags", ())),
                ))
            out.append(BenchmarkConversation(id=str(record["id"]),
                                             turns=tuple(turns)))
    return out


def save_benchmark(benchmark: Sequence[BenchmarkConversation], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for conv in benchmark:
            record = {
                "id": conv.id,
                "turns": [
                    {
                        "query": t.query,
                        "results": [
                            {"item_id": i, "liked": liked} for i, liked in t.results
                        ],
                        **({"history_items": list(t.history_items)}
                           if t.history_items is not None else {}),
                        **({"flags": list(t.flags)} if t.flags else {}),
                    }
                    for t in conv.turns
                ],
            }
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")


def benchmark_from_conversations(
    conversations: Sequence[Conversation],
    corpus: Corpus,
) -> list[BenchmarkConversation]:
    """Turn generated conversations into a benchmark.

    An item shown in a slate counts as liked exactly when it belongs to the
    conversation's target collection, since that collection stands for what
    the simulated user was after.
    """
    out = []
    for conv in conversations:
        if conv.target_collection is None:
            raise EvalError(f"conversation {conv.id} has no target collection")
        target_items = set(corpus.collections[conv.target_collection].item_ids)
        turns = []
        for t in conv.turns:
            results = tuple((i, i in target_items) for i in t.slate)
            turns.append(BenchmarkTurn(query=t.utterance, results=results))
        out.append(BenchmarkConversation(id=conv.id, turns=tuple(turns)))
    return out


@dataclass(frozen=True)
class EvalExample:
    history: tuple[tuple[str, tuple[str, ...]], ...]  # (query, liked item ids)
    query: str
    target: frozenset[str]
    turn_index: int  # 1-based
    flags: tuple[str, ...] = ()


def build_turn_examples(conv: BenchmarkConversation,
                        skip_flagged: bool = False) -> list[EvalExample]:
    """One scored example per turn with a non-empty target.

    History drops disliked items; the target is every liked item of the
    conversation minus items already seen in that cleaned history.
    ``skip_flagged`` additionally excludes turns carrying flags from
    scoring (their slates still feed the history).
    """
    all_liked: set[str] = set()
    for t in conv.turns:
        all_liked.update(t.liked_ids())
    examples = []
    seen: set[str] = set()
    history: list[tuple[str, tuple[str, ...]]] = []
    for idx, turn in enumerate(conv.turns, start=1):
        target = frozenset(all_liked - seen)
        if target and not (skip_flagged and turn.flags):
            examples.append(EvalExample(
                history=tuple(history),
                query=turn.query,
                target=target,
                turn_index=idx,
                flags=turn.flags,
            ))
        liked = set(turn.liked_ids())
        if turn.history_items is not None:
            entered = tuple(i for i in turn.history_items if i in liked)
        else:
            entered = tuple(sorted(liked))
        history.append((turn.query, entered))
        seen.update(entered)
    return examples


def hits_at_k(ranked: Sequence[str], target: frozenset[str] | set[str],
              k: int) -> int:
    """1 iff any of the top-k ranked ids is in the target slate."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not target:
        raise EmptyTargetError("target slate is empty; filter such turns first")
    return int(any(i in target for i in ranked[:k]))


def macro_hits(per_turn: Sequence[Sequence[int]]) -> float:
    """Mean over conversations of each conversation's mean turn hit rate."""
    if not per_turn:
        raise ValueError("no conversations to average")
    means = []
    for turns in per_turn:
        if not turns:
            raise ValueError("conversation has no scored turns")
        means.append(sum(turns) / len(turns))
    return float(sum(means) / len(means))


_TOKEN_RE = re.compile(r"[0-9a-z]+")


def _bm25_tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class Bm25Index:
    """Inverted index over item texts with standard BM25 scoring.

    Inverse document frequency is the classic log((N - df + 0.5) /
    (df + 0.5)) floored at zero; ranking ties break by ascending id.
    """

    def __init__(self, corpus: Corpus, k1: float = 1.2, b: float = 0.75):
        self.k1 = k1
        self.b = b
        self.ids = [i.id for i in corpus.item_list()]
        docs = [_bm25_tokens(item_text(i)) for i in corpus.item_list()]
        self.doc_lens = np.array([len(d) for d in docs], dtype=np.float64)
        self.avgdl = float(self.doc_lens.mean()) if len(docs) else 0.0
        self.postings: dict[str, list[tuple[int, int]]] = {}
        for doc_idx, doc in enumerate(docs):
            for term, tf in Counter(doc).items():
                self.postings.setdefault(term, []).append((doc_idx, tf))
        n_docs = len(docs)
        self.idf = {
            term: max(0.0, math.log((n_docs - len(plist) + 0.5) / (len(plist) + 0.5)))
            for term, plist in self.postings.items()
        }

    def rank(self, query_text: str) -> list[tuple[str, float]]:
        scores = np.zeros(len(self.ids))
        norm = self.k1 * (1.0 - self.b + self.b * self.doc_lens / (self.avgdl or 1.0))
        for term in _bm25_tokens(query_text):
            plist = self.postings.get(term)
            if not plist:
                continue
            idf = self.idf[term]
            for doc_idx, tf in plist:
                scores[doc_idx] += idf * tf * (self.k1 + 1.0) / (tf + norm[doc_idx])
        order = np.lexsort((np.array(self.ids), -scores))
        return [(self.ids[int(i)], float(scores[int(i)])) for i in order]


def bm25_rank(corpus: Corpus, query_text: str, k1: float = 1.2,
              b: float = 0.75) -> list[tuple[str, float]]:
    """Full BM25 ranking of the corpus items for the query text."""
    return Bm25Index(corpus, k1=k1, b=b).rank(query_text)


Ranker = Callable[[Sequence[tuple[str, Sequence[Item]]], str], list[str]]


def _dense_ranker(params: EncoderParams, item_index: EmbeddingIndex,
                  cap: int, max_len: int) -> Ranker:
    def rank(history, query_text):
        hits = crs.retrieve(params, item_index, history, query_text,
                            k=len(item_index), cap=cap, max_len=max_len)
        return [h[0] for h in hits]
    return rank


def make_system(
    tag: str,
    *,
    corpus: Corpus,
    params: EncoderParams | None = None,
    item_index: EmbeddingIndex | None = None,
    cap: int = 3,
    max_len: int = DEFAULT_MAX_LEN,
    seed: int = 0,
    train_config: TrainConfig | None = None,
) -> Ranker:
    """Build a ranking function for a registered system tag.

    "crs" requires trained params and their item index.
    "untrained-encoder" ranks with randomly initialized parameters;
    "collection-trained-encoder" trains the dual encoder on the corpus
    collections first. "bm25" concatenates the current and all previous
    user queries. "random" is a seeded random permutation per call.
    """
    if tag == "crs":
        if params is None or item_index is None:
            raise ValueError("crs system needs params and an item index")
        return _dense_ranker(params, item_index, cap, max_len)
    if tag == "untrained-encoder":
        cfg = train_config or TrainConfig()
        raw = init_params(cfg.dim, seed=seed, scale=cfg.init_scale)
        idx = index_corpus_items(raw, corpus, max_len)
        return _dense_ranker(raw, idx, cap, max_len)
    if tag == "collection-trained-encoder":
        cfg = train_config or TrainConfig()
        trained = train_dual_encoder(corpus, cfg)
        idx = index_corpus_items(trained, corpus, max_len)
        return _dense_ranker(trained, idx, cap, max_len)
    if tag == "bm25":
        index = Bm25Index(corpus)

        def rank(history, query_text):
            parts = [query_text] + [utt for utt, _ in history]
            return [r[0] for r in index.rank(" ".join(parts))]
        return rank
    if tag == "random":
        rng = np.random.default_rng(seed)
        ids = np.array(sorted(corpus.items))

        def rank(history, query_text):
            return list(rng.permutation(ids))
        return rank
    raise ValueError(f"unknown system {tag!r}; known: {KNOWN_SYSTEMS}")


@dataclass
class PerTurnStat:
    turn: int
    mean: float
    count: int


@dataclass
class EvalReport:
    system: str
    ks: tuple[int, ...]
    macro: dict[int, float]
    per_turn: dict[int, list[PerTurnStat]]
    per_conversation: dict[str, dict[int, list[int]]]
    conversations_scored: int
    turns_scored: int
    turns_excluded: int

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "ks": list(self.ks),
            "macro": {str(k): self.macro[k] for k in self.ks},
            "per_turn": {
                str(k): [
                    {"turn": s.turn, "mean": s.mean, "count": s.count}
                    for s in self.per_turn[k]
                ]
                for k in self.ks
            },
            "per_conversation": {
                cid: {str(k): hits for k, hits in by_k.items()}
                for cid, by_k in sorted(self.per_conversation.items())
            },
            "conversations_scored": self.conversations_scored,
            "turns_scored": self.turns_scored,
            "turns_excluded": self.turns_excluded,
        }

    def summary(self) -> str:
        lines = [f"system={self.system} conversations={self.conversations_scored} "
                 f"turns={self.turns_scored} excluded={self.turns_excluded}"]
        for k in self.ks:
            lines.append(f"  macro hits@{k}: {self.macro[k]:.4f}")
            per_turn = " ".join(
                f"t{s.turn}={s.mean:.3f}({s.count})" for s in self.per_turn[k]
            )
            lines.append(f"    per-turn: {per_turn}")
        return "\n".join(lines)


def run_eval(
    system: str | Ranker,
    benchmark: Sequence[BenchmarkConversation],
    ks: Sequence[int] = (10, 20, 100),
    *,
    corpus: Corpus,
    params: EncoderParams | None = None,
    item_index: EmbeddingIndex | None = None,
    cap: int = 3,
    max_len: int = DEFAULT_MAX_LEN,
    seed: int = 0,
    exclude_seen: bool = False,
    skip_flagged: bool = False,
    first_turns: int = 5,
    train_config: TrainConfig | None = None,
) -> EvalReport:
    """Score a system on a benchmark with macro and per-turn hit rates.

    ``exclude_seen`` removes items already present in the gold history from
    each ranking before scoring; it is off by default so rankings are
    scored raw. ``skip_flagged`` (default off) excludes flagged benchmark
    turns from scoring.
    """
    if isinstance(system, str):
        tag = system
        ranker = make_system(tag, corpus=corpus, params=params,
                             item_index=item_index, cap=cap, max_len=max_len,
                             seed=seed, train_config=train_config)
    else:
        tag, ranker = getattr(system, "__name__", "custom"), system
    ks = tuple(ks)
    per_conversation: dict[str, dict[int, list[int]]] = {}
    turn_hits: dict[int, dict[int, list[int]]] = {k: {} for k in ks}
    turns_scored = 0
    turns_excluded = 0
    for conv in benchmark:
        examples = build_turn_examples(conv, skip_flagged=skip_flagged)
        turns_excluded += len(conv.turns) - len(examples)
        if not examples:
            continue
        by_k: dict[int, list[int]] = {k: [] for k in ks}
        for ex in examples:
            history = [
                (utt, [corpus.items[i] for i in ids if i in corpus.items])
                for utt, ids in ex.history
            ]
            ranked = ranker(history, ex.query)
            if exclude_seen:
                seen = {i for _, ids in ex.history for i in ids}
                ranked = [i for i in ranked if i not in seen]
            for k in ks:
                hit = hits_at_k(ranked, ex.target, k)
                by_k[k].append(hit)
                turn_hits[k].setdefault(ex.turn_index, []).append(hit)
            turns_scored += 1
        per_conversation[conv.id] = by_k
    if not per_conversation:
        raise EvalError("benchmark produced no scoreable conversations")
    macro = {
        k: macro_hits([per_conversation[cid][k] for cid in per_conversation])
        for k in ks
    }
    per_turn = {
        k: [
            PerTurnStat(turn=t, mean=float(np.mean(turn_hits[k][t])),
                        count=len(turn_hits[k][t]))
            for t in sorted(turn_hits[k])[:first_turns]
        ]
        for k in ks
    }
    return EvalReport(
        system=tag,
        ks=ks,
        macro=macro,
        per_turn=per_turn,
        per_conversation=per_conversation,
        conversations_scored=len(per_conversation),
        turns_scored=turns_scored,
        turns_excluded=turns_excluded,
    )


ABLATION_MODES = ("full", "random-sequence", "template-utterance")


def _generate_conversations(
    corpus: Corpus,
    collection_index: EmbeddingIndex,
    item_index: EmbeddingIndex,
    walk_cfg: WalkConfig,
    count: int,
    seed: int,
    sequence_mode: str = "walk",
    scramble_descriptions: bool = False,
    rules: FilterRules | None = None,
) -> list[Conversation]:
    stats = DatasetStats()
    return list(generate_dataset(
        corpus, collection_index, item_index, walk_cfg, MODE_TEMPLATE,
        np.random.default_rng(seed), count, rules=rules,
        sequence_mode=sequence_mode,
        scramble_descriptions=scramble_descriptions, stats=stats,
    ))


@dataclass
class AblationReport:
    budget: int
    seeds: tuple[int, ...]
    k: int
    scores: dict[str, dict[int, float]]  # mode -> seed -> macro hits
    medians: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "budget": self.budget,
            "seeds": list(self.seeds),
            "k": self.k,
            "scores": {m: {str(s): v for s, v in by_seed.items()}
                       for m, by_seed in self.scores.items()},
            "medians": dict(self.medians),
        }


def run_ablation(
    corpus: Corpus,
    collection_index: EmbeddingIndex,
    item_index: EmbeddingIndex,
    walk_cfg: WalkConfig,
    budget: int,
    train_config,
    bench: Sequence[BenchmarkConversation],
    seeds: Sequence[int] = (0, 1, 2),
    k: int = 100,
    modes: Sequence[str] = ABLATION_MODES,
) -> AblationReport:
    """Train one retriever per generation mode per seed and score them all
    on the same held-out benchmark.

    "full" is the walk pipeline with matched utterance descriptions;
    "random-sequence" replaces the walk with a uniformly random collection
    per turn; "template-utterance" keeps the walk but scrambles the
    description each utterance mentions, severing the utterance-slate link.
    """
    scores: dict[str, dict[int, float]] = {m: {} for m in modes}
    for mode in modes:
        if mode not in ABLATION_MODES:
            raise ValueError(f"unknown ablation mode {mode!r}")
        for seed in seeds:
            convs = _generate_conversations(
                corpus, collection_index, item_index, walk_cfg, budget, seed,
                sequence_mode="random" if mode == "random-sequence" else "walk",
                scramble_descriptions=(mode == "template-utterance"),
            )
            cfg = _reseed(train_config, seed)
            params, _ = crs.train_crs(convs, corpus, cfg, bench)
            idx = index_corpus_items(params, corpus, cfg.max_len)
            report = run_eval("crs", bench, ks=(k,), corpus=corpus,
                              params=params, item_index=idx, cap=cfg.cap,
                              max_len=cfg.max_len)
            scores[mode][seed] = report.macro[k]
    medians = {m: float(np.median(list(by_seed.values())))
               for m, by_seed in scores.items()}
    return AblationReport(budget=budget, seeds=tuple(seeds), k=k,
                          scores=scores, medians=medians)


def _reseed(config, seed: int):
    from dataclasses import replace
    return replace(config, seed=seed)


@dataclass
class ScalingReport:
    sizes: tuple[int, ...]
    seeds: tuple[int, ...]
    k: int
    scores: dict[int, dict[int, float]]  # size -> seed -> macro hits
    medians: dict[int, float]

    def to_dict(self) -> dict:
        return {
            "sizes": list(self.sizes),
            "seeds": list(self.seeds),
            "k": self.k,
            "scores": {str(n): {str(s): v for s, v in by_seed.items()}
                       for n, by_seed in self.scores.items()},
            "medians": {str(n): v for n, v in self.medians.items()},
        }


def run_scaling_sweep(
    corpus: Corpus,
    collection_index: EmbeddingIndex,
    item_index: EmbeddingIndex,
    walk_cfg: WalkConfig,
    sizes: Sequence[int],
    train_config,
    bench: Sequence[BenchmarkConversation],
    seeds: Sequence[int] = (0,),
    k: int = 100,
) -> ScalingReport:
    """Train on nested prefixes of one generated dataset per seed.

    The size-n training set is by construction a prefix of the size-m set
    for n < m, so differences between sizes reflect data volume only.
    """
    sizes = tuple(sizes)
    if list(sizes) != sorted(sizes):
        raise ValueError("sizes must be ascending")
    scores: dict[int, dict[int, float]] = {n: {} for n in sizes}
    for seed in seeds:
        full = _generate_conversations(
            corpus, collection_index, item_index, walk_cfg, sizes[-1], seed,
        )
        for n in sizes:
            subset = [c for c in full if int(c.id[4:]) < n]
            cfg = _reseed(train_config, seed)
            params, _ = crs.train_crs(subset, corpus, cfg, bench)
            idx = index_corpus_items(params, corpus, cfg.max_len)
            report = run_eval("crs", bench, ks=(k,), corpus=corpus,
                              params=params, item_index=idx, cap=cfg.cap,
                              max_len=cfg.max_len)
            scores[n][seed] = report.macro[k]
    medians = {n: float(np.median(list(by_seed.values())))
               for n, by_seed in scores.items()}
    return ScalingReport(sizes=sizes, seeds=tuple(seeds), k=k,
                         scores=scores, medians=medians)
