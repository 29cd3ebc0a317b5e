"""Utterance generation: templated system responses, user utterances from an
external inpainter service or a built-in template bank, and post filters.

System responses are rendered from slate metadata purely to prompt the
utterance generator; they never appear in the emitted dataset. User
utterances come either from an inpainter endpoint (HTTP, one masked slot
per request, filled left to right) or from a small template bank. The
template bank doubles as the no-language-model control when measuring how
much utterance quality matters.

Four turn filters are applied before a conversation is emitted: artist
turns must mention the artist, no blocklisted terms, a length ceiling, and
a cap on verbatim overlap with the system response for the same turn.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import httpx
import numpy as np

from .corpus import Corpus, ItemCollection
from .embedder import EmbeddingIndex
from .seqgen import (
    PTYPE_INIT,
    PTYPE_LESS,
    PTYPE_MORE,
    SlateTurn,
    WalkConfig,
    generate_sequence,
    random_sequence,
    type_partition,
)

PLACEHOLDER = "<description>"

MODE_TEMPLATE = "template"
MODE_INPAINT = "inpaint"

SEQUENCE_WALK = "walk"
SEQUENCE_RANDOM = "random"

ENV_INPAINT_TIMEOUT = "SLATEWALK_INPAINT_TIMEOUT"
ENV_INPAINT_RETRIES = "SLATEWALK_INPAINT_RETRIES"


class UttGenError(Exception):
    pass


class MissingTemplateError(UttGenError):
    def __init__(self, key: tuple[str, str], registered: Iterable[tuple[str, str]]):
        self.key = key
        self.registered = sorted(registered)
        super().__init__(
            f"no template for {key!r}; registered keys: {self.registered}"
        )


class InpainterError(UttGenError):
    pass


class InpainterTransportError(InpainterError):
    def __init__(self, endpoint: str, attempts: int, cause: Exception):
        self.endpoint = endpoint
        self.attempts = attempts
        self.cause = cause
        super().__init__(
            f"inpainter at {endpoint} unreachable after {attempts} attempts: {cause}"
        )


class InpainterProtocolError(InpainterError):
    pass


class InpainterCountError(InpainterError):
    def __init__(self, expected: int, got: int):
        self.expected = expected
        self.got = got
        super().__init__(f"expected {expected} utterances, got {got}")


@dataclass(frozen=True)
class ResponseTemplate:
    ptype: str
    ctype: str
    pattern: str

    def __post_init__(self):
        if self.pattern.count(PLACEHOLDER) != 1:
            raise ValueError(
                f"template for ({self.ptype}, {self.ctype}) must contain exactly "
                f"one {PLACEHOLDER}"
            )

    def render(self, description: str) -> str:
        return self.pattern.replace(PLACEHOLDER, description)


DEFAULT_SYSTEM_TEMPLATES: dict[tuple[str, str], ResponseTemplate] = {
    (p, c): ResponseTemplate(p, c, pattern)
    for (p, c), pattern in {
        (PTYPE_INIT, "theme"):
            f"Sure! To start, here are some songs described as {PLACEHOLDER}. What else?",
        (PTYPE_INIT, "artist"):
            f"Sure! To start, here are some songs by {PLACEHOLDER}. What else?",
        (PTYPE_MORE, "theme"):
            f"Of course! Let me add some songs described as {PLACEHOLDER}. What else?",
        (PTYPE_MORE, "artist"):
            f"Of course! Let me add some songs by {PLACEHOLDER}. What else?",
        (PTYPE_LESS, "theme"):
            f"Got it! Let me remove some songs described as {PLACEHOLDER}. What else?",
        (PTYPE_LESS, "artist"):
            f"Got it! Let me remove some songs by {PLACEHOLDER}. What else?",
    }.items()
}

# User-side template bank; three variants per key so template-mode data is
# not degenerate. Every pattern mentions the description.
USER_TEMPLATES: dict[tuple[str, str], tuple[str, ...]] = {
    (PTYPE_INIT, "theme"): (
        "I want to make a playlist with some {d}.",
        "Let's start with songs described as {d}.",
        "Can you start me off with some {d}?",
    ),
    (PTYPE_INIT, "artist"): (
        "I want to start a playlist with some {d}.",
        "Can you put on some {d} to get going?",
        "Let's kick things off with {d}.",
    ),
    (PTYPE_MORE, "theme"): (
        "How about adding some {d}?",
        "Can you add songs described as {d}?",
        "More {d} would be great.",
    ),
    (PTYPE_MORE, "artist"): (
        "Can you add some {d}?",
        "More {d} please!",
        "I'd love to hear more {d}.",
    ),
    (PTYPE_LESS, "theme"): (
        "Fewer songs like {d}, please.",
        "Can you cut back on the {d}?",
        "The {d} ones aren't working for me, fewer of those.",
    ),
    (PTYPE_LESS, "artist"): (
        "Fewer {d} tracks, please.",
        "Can you take out some of the {d} songs?",
        "Not feeling {d} right now, fewer of those.",
    ),
}


def collection_description(coll: ItemCollection) -> str:
    """Display description: artist collections are described by artist name."""
    if coll.ctype == "artist":
        return coll.title
    return coll.description or coll.title


def render_system_response(
    ptype: str,
    ctype: str,
    description: str,
    templates: dict[tuple[str, str], ResponseTemplate] | None = None,
) -> str:
    templates = templates if templates is not None else DEFAULT_SYSTEM_TEMPLATES
    key = (ptype, ctype)
    if key not in templates:
        raise MissingTemplateError(key, templates.keys())
    return templates[key].render(description)


@dataclass(frozen=True)
class PartialConversation:
    """Alternating (role, text) turns; user slots are None until filled."""

    turns: tuple[tuple[str, str | None], ...]

    def __post_init__(self):
        for i, (role, text) in enumerate(self.turns):
            expected = "user" if i % 2 == 0 else "system"
            if role != expected:
                raise ValueError(f"turn {i} has role {role!r}, expected {expected!r}")
            if role == "system" and text is None:
                raise ValueError(f"system turn {i} is unfilled")

    @property
    def mask_count(self) -> int:
        return sum(1 for role, text in self.turns if role == "user" and text is None)


def build_partial_conversation(
    seq: Sequence[SlateTurn],
    corpus: Corpus,
    templates: dict[tuple[str, str], ResponseTemplate] | None = None,
) -> PartialConversation:
    """Masked user slots interleaved with rendered system responses."""
    turns: list[tuple[str, str | None]] = []
    for st in seq:
        coll = corpus.collections[st.source_collection]
        response = render_system_response(
            st.ptype, coll.ctype, collection_description(coll), templates
        )
        turns.append(("user", None))
        turns.append(("system", response))
    return PartialConversation(turns=tuple(turns))


@dataclass
class InpainterClient:
    """HTTP client for an external utterance inpainter.

    Requests carry the conversation so far with a single null-text turn
    marking the slot to fill; responses carry {"text": utterance}. Timeout
    and retry count fall back to the SLATEWALK_INPAINT_TIMEOUT and
    SLATEWALK_INPAINT_RETRIES environment variables.
    """

    endpoint: str
    timeout: float | None = None
    retries: int | None = None

    def __post_init__(self):
        if self.timeout is None:
            self.timeout = float(os.environ.get(ENV_INPAINT_TIMEOUT, "10"))
        if self.retries is None:
            self.retries = int(os.environ.get(ENV_INPAINT_RETRIES, "2"))

    def fill_one(self, turns: list[dict]) -> str:
        body = {"turns": turns}
        last_exc: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = httpx.post(self.endpoint, json=body, timeout=self.timeout)
                resp.raise_for_status()
                payload = resp.json()
                break
            except (httpx.TransportError, httpx.TimeoutException) as exc:
                last_exc = exc
                if attempt < self.retries:
                    time.sleep(min(0.2 * (attempt + 1), 1.0))
            except (httpx.HTTPStatusError, json.JSONDecodeError, ValueError) as exc:
                raise InpainterProtocolError(f"bad inpainter response: {exc}") from exc
        else:
            raise InpainterTransportError(self.endpoint, self.retries + 1, last_exc)
        if not isinstance(payload, dict) or "text" not in payload:
            raise InpainterProtocolError(
                f"inpainter response missing 'text': {payload!r}"
            )
        return payload["text"]


def inpaint(client: InpainterClient, partial: PartialConversation) -> list[str]:
    """Fill every masked user slot, left to right, one request per slot.

    Each request contains the turns up to and including the system response
    that follows the mask, with earlier masks already replaced by their
    generated utterances. An empty or missing utterance counts against the
    expected total and raises a count error.
    """
    filled: list[str] = []
    expected = partial.mask_count
    turns = list(partial.turns)
    for i, (role, text) in enumerate(turns):
        if role != "user" or text is not None:
            continue
        request_turns = []
        for j in range(i + 2 if i + 1 < len(turns) else i + 1):
            r, t = turns[j]
            request_turns.append({"role": r, "text": None if j == i else t})
        utterance = client.fill_one(request_turns)
        if not isinstance(utterance, str) or not utterance:
            raise InpainterCountError(expected, len(filled))
        filled.append(utterance)
        turns[i] = ("user", utterance)
    if len(filled) != expected:
        raise InpainterCountError(expected, len(filled))
    return filled


def template_utterances(
    seq: Sequence[SlateTurn],
    corpus: Corpus,
    rng: np.random.Generator,
    templates: dict[tuple[str, str], tuple[str, ...]] | None = None,
    descriptions: Sequence[str] | None = None,
) -> list[str]:
    """User utterances from the template bank, one per turn.

    ``descriptions`` overrides the per-turn description strings, which is
    how the scrambled-description control corrupts the utterances while
    keeping the slate sequence intact.
    """
    templates = templates if templates is not None else USER_TEMPLATES
    out = []
    for t, st in enumerate(seq):
        coll = corpus.collections[st.source_collection]
        key = (st.ptype, coll.ctype)
        if key not in templates:
            raise MissingTemplateError(key, templates.keys())
        variants = templates[key]
        pattern = variants[int(rng.integers(len(variants)))]
        desc = descriptions[t] if descriptions is not None else collection_description(coll)
        out.append(pattern.format(d=desc))
    return out


@dataclass(frozen=True)
class FilterRules:
    require_artist_mention: bool = True
    blocklist: frozenset[str] = frozenset()
    max_len: int = 450
    max_overlap: int = 50

    def __post_init__(self):
        if self.max_len <= 0 or self.max_overlap <= 0:
            raise ValueError("filter thresholds must be positive")


def load_filter_rules(path) -> FilterRules:
    """Read filter rules from a JSON file; absent fields keep their defaults."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    defaults = FilterRules()
    return FilterRules(
        require_artist_mention=raw.get("require_artist_mention",
                                       defaults.require_artist_mention),
        blocklist=frozenset(str(t).lower() for t in raw.get("blocklist", ())),
        max_len=raw.get("max_len", defaults.max_len),
        max_overlap=raw.get("max_overlap", defaults.max_overlap),
    )


RULE_ARTIST = "artist-mention"
RULE_BLOCKLIST = "blocklist"
RULE_LENGTH = "length"
RULE_OVERLAP = "overlap"


def _has_common_substring(a: str, b: str, k: int) -> bool:
    """True when a and b share a contiguous substring of length k."""
    if k <= 0:
        return True
    if k > len(a) or k > len(b):
        return False
    grams = {a[i:i + k] for i in range(len(a) - k + 1)}
    return any(b[j:j + k] in grams for j in range(len(b) - k + 1))


def longest_common_substring_len(a: str, b: str) -> int:
    """Exact length of the longest common contiguous substring.

    Binary search over the answer; a shared substring of length L implies
    shared substrings of every shorter length, so the predicate is monotone.
    """
    lo, hi = 0, min(len(a), len(b))
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if _has_common_substring(a, b, mid):
            lo = mid
        else:
            hi = mid - 1
    return lo


def _word_in(term: str, text_lower: str) -> bool:
    # Word-boundary containment without regex escaping concerns.
    import re
    return re.search(rf"\b{re.escape(term)}\b", text_lower) is not None


@dataclass(frozen=True)
class ConvTurn:
    utterance: str
    slate: tuple[str, ...]
    ptype: str
    source_collection: str
    # Assembly-time context so filtering needs no corpus access.
    artist_names: tuple[str, ...] = ()
    source_ctype: str = "theme"


@dataclass(frozen=True)
class Conversation:
    id: str
    turns: tuple[ConvTurn, ...]
    provenance: str  # "inpainted" | "templated"
    target_collection: str | None = None
    dropped_turn_flags: tuple[tuple[int, tuple[str, ...]], ...] = ()
    system_responses: tuple[str, ...] = ()  # scaffolding; never serialized


def assemble_conversation(
    conv_id: str,
    seq: Sequence[SlateTurn],
    utterances: Sequence[str],
    corpus: Corpus,
    provenance: str,
    target_collection: str | None = None,
    templates: dict[tuple[str, str], ResponseTemplate] | None = None,
) -> Conversation:
    """Pair utterances with slate turns and keep the rendered system
    responses around for overlap filtering."""
    if len(seq) != len(utterances):
        raise ValueError(
            f"got {len(utterances)} utterances for {len(seq)} turns"
        )
    turns = []
    responses = []
    for st, utt in zip(seq, utterances):
        coll = corpus.collections[st.source_collection]
        artist_names = {coll.title} if coll.ctype == "artist" else set()
        for item_id in coll.item_ids:
            artist_names.update(corpus.items[item_id].artists)
        turns.append(ConvTurn(
            utterance=utt,
            slate=st.slate,
            ptype=st.ptype,
            source_collection=st.source_collection,
            artist_names=tuple(sorted(artist_names)),
            source_ctype=coll.ctype,
        ))
        responses.append(render_system_response(
            st.ptype, coll.ctype, collection_description(coll), templates
        ))
    return Conversation(
        id=conv_id,
        turns=tuple(turns),
        provenance=provenance,
        target_collection=target_collection,
        system_responses=tuple(responses),
    )


def turn_violations(turn: ConvTurn, system_response: str,
                    rules: FilterRules) -> tuple[str, ...]:
    """Names of every filter rule the turn violates."""
    fired = []
    text = turn.utterance
    lower = text.lower()
    if (rules.require_artist_mention and turn.source_ctype == "artist"
            and not any(a.lower() in lower for a in turn.artist_names)):
        fired.append(RULE_ARTIST)
    if rules.blocklist and any(_word_in(term, lower) for term in sorted(rules.blocklist)):
        fired.append(RULE_BLOCKLIST)
    if len(text) > rules.max_len:
        fired.append(RULE_LENGTH)
    if longest_common_substring_len(text, system_response) > rules.max_overlap:
        fired.append(RULE_OVERLAP)
    return tuple(fired)


def filter_conversation(conv: Conversation, rules: FilterRules) -> Conversation:
    """Drop turns violating any rule; record which rules fired per drop.

    Requires the conversation to still carry its system responses (assembly
    keeps them) since the overlap rule compares against the response for
    the same turn.
    """
    if conv.turns and len(conv.system_responses) != len(conv.turns):
        raise ValueError("conversation is missing its system responses")
    kept_turns, kept_responses, flags = [], [], []
    for i, turn in enumerate(conv.turns):
        fired = turn_violations(turn, conv.system_responses[i], rules)
        if fired:
            flags.append((i, fired))
        else:
            kept_turns.append(turn)
            kept_responses.append(conv.system_responses[i])
    return replace(
        conv,
        turns=tuple(kept_turns),
        system_responses=tuple(kept_responses),
        dropped_turn_flags=tuple(flags),
    )


@dataclass
class DatasetStats:
    """Generation accounting: drop rates per rule and wall-clock cost."""

    conversations_generated: int = 0
    conversations_emitted: int = 0
    turns_total: int = 0
    turns_kept: int = 0
    drops_by_rule: dict[str, int] = field(default_factory=dict)
    sequence_seconds: float = 0.0
    utterance_seconds: float = 0.0
    filter_seconds: float = 0.0

    def record_drop(self, rule: str) -> None:
        self.drops_by_rule[rule] = self.drops_by_rule.get(rule, 0) + 1

    @property
    def turns_dropped(self) -> int:
        return self.turns_total - self.turns_kept

    def to_dict(self) -> dict:
        return {
            "conversations_generated": self.conversations_generated,
            "conversations_emitted": self.conversations_emitted,
            "turns_total": self.turns_total,
            "turns_kept": self.turns_kept,
            "turns_dropped": self.turns_dropped,
            "drops_by_rule": dict(sorted(self.drops_by_rule.items())),
            "sequence_seconds": round(self.sequence_seconds, 3),
            "utterance_seconds": round(self.utterance_seconds, 3),
            "filter_seconds": round(self.filter_seconds, 3),
        }


def generate_dataset(
    corpus: Corpus,
    collection_index: EmbeddingIndex,
    item_index: EmbeddingIndex,
    walk_cfg: WalkConfig,
    mode: str,
    rng: np.random.Generator,
    count: int,
    rules: FilterRules | None = None,
    inpainter: InpainterClient | None = None,
    sequence_mode: str = SEQUENCE_WALK,
    scramble_descriptions: bool = False,
    stats: DatasetStats | None = None,
) -> Iterator[Conversation]:
    """Stream ``count`` generated-and-filtered conversations.

    Each conversation gets its own child random stream, so the first n
    conversations of a run are identical regardless of the total count.
    Conversations whose every turn was filtered away are not emitted but
    still count toward the generation total in ``stats``.
    """
    if mode not in (MODE_TEMPLATE, MODE_INPAINT):
        raise ValueError(f"unknown utterance mode {mode!r}")
    if mode == MODE_INPAINT and inpainter is None:
        raise ValueError("inpaint mode requires an inpainter client")
    if scramble_descriptions and mode != MODE_TEMPLATE:
        raise ValueError("scramble_descriptions applies to template mode only")
    if sequence_mode not in (SEQUENCE_WALK, SEQUENCE_RANDOM):
        raise ValueError(f"unknown sequence mode {sequence_mode!r}")
    rules = rules if rules is not None else FilterRules()
    stats = stats if stats is not None else DatasetStats()
    partition = type_partition(collection_index)
    all_coll_ids = collection_index.ids

    children = rng.spawn(count)
    for i in range(count):
        child = children[i]
        t0 = time.perf_counter()
        if sequence_mode == SEQUENCE_WALK:
            walk = generate_sequence(corpus, collection_index, item_index,
                                     walk_cfg, child, partition)
        else:
            walk = random_sequence(corpus, collection_index, walk_cfg, child)
        t1 = time.perf_counter()

        descriptions = None
        if scramble_descriptions:
            picks = child.integers(len(all_coll_ids), size=len(walk.turns))
            descriptions = [
                collection_description(corpus.collections[all_coll_ids[int(p)]])
                for p in picks
            ]
        if mode == MODE_TEMPLATE:
            utterances = template_utterances(walk.turns, corpus, child,
                                             descriptions=descriptions)
            provenance = "templated"
        else:
            partial = build_partial_conversation(walk.turns, corpus)
            utterances = inpaint(inpainter, partial)
            provenance = "inpainted"
        t2 = time.perf_counter()

        conv = assemble_conversation(
            f"conv{i:06d}", walk.turns, utterances, corpus, provenance,
            target_collection=walk.target_collection,
        )
        filtered = filter_conversation(conv, rules)
        t3 = time.perf_counter()

        stats.conversations_generated += 1
        stats.turns_total += len(conv.turns)
        stats.turns_kept += len(filtered.turns)
        for _, fired in filtered.dropped_turn_flags:
            for rule in fired:
                stats.record_drop(rule)
        stats.sequence_seconds += t1 - t0
        stats.utterance_seconds += t2 - t1
        stats.filter_seconds += t3 - t2
        if filtered.turns:
            stats.conversations_emitted += 1
            yield filtered


def conversation_to_record(conv: Conversation) -> dict:
    """Serializable dataset record; system responses are scaffolding and
    deliberately excluded."""
    return {
        "id": conv.id,
        "provenance": conv.provenance,
        "target_collection": conv.target_collection,
        "dropped_turn_flags": [
            {"turn": i, "rules": list(rules)} for i, rules in conv.dropped_turn_flags
        ],
        "turns": [
            {
                "utterance": t.utterance,
                "slate": list(t.slate),
                "ptype": t.ptype,
                "source_collection": t.source_collection,
            }
            for t in conv.turns
        ],
    }


def conversation_from_record(record: dict, corpus: Corpus | None = None) -> Conversation:
    turns = []
    for t in record["turns"]:
        source = t["source_collection"]
        artist_names: tuple[str, ...] = ()
        ctype = "theme"
        if corpus is not None and source in corpus.collections:
            coll = corpus.collections[source]
            ctype = coll.ctype
            names = {coll.title} if ctype == "artist" else set()
            for item_id in coll.item_ids:
                names.update(corpus.items[item_id].artists)
            artist_names = tuple(sorted(names))
        turns.append(ConvTurn(
            utterance=t["utterance"],
            slate=tuple(t["slate"]),
            ptype=t["ptype"],
            source_collection=source,
            artist_names=artist_names,
            source_ctype=ctype,
        ))
    return Conversation(
        id=record["id"],
        turns=tuple(turns),
        provenance=record.get("provenance", "templated"),
        target_collection=record.get("target_collection"),
        dropped_turn_flags=tuple(
            (f["turn"], tuple(f["rules"]))
            for f in record.get("dropped_turn_flags", ())
        ),
    )


def save_dataset(conversations: Iterable[Conversation], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for conv in conversations:
            fh.write(json.dumps(conversation_to_record(conv), sort_keys=True))
            fh.write("\n")


def load_dataset(path, corpus: Corpus | None = None) -> list[Conversation]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(conversation_from_record(json.loads(line), corpus))
    return out
