"""Live pairwise evaluation: team-draft interleaving, rating sessions over
an HTTP API, per-system credit, and a paired permutation test.

Two registered ranking systems serve every session. Each user utterance
runs both systems on the session's own transcript, merges their slates
with team-draft interleaving, and shows the combined slate without team
labels. Users rate every shown item; a closed session reveals which team
contributed each liked item and aggregates per-system hit rates. Session
events are appended to a JSONL log so any report can be regenerated from
disk.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from pydantic import BaseModel

from .corpus import Corpus

TEAM_A = "A"
TEAM_B = "B"

STATUS_OPEN = "open"
STATUS_AWAITING = "awaiting-ratings"
STATUS_CLOSED = "closed"

DEFAULT_GREETING_STOPLIST = frozenset({
    "hello", "hi", "hey", "thanks", "thank you", "bye", "goodbye", "ok",
    "okay", "yes", "no",
})


class SessionError(Exception):
    pass


class UnknownSessionError(SessionError):
    pass


class OrderingError(SessionError):
    """A call arrived while the session was in the wrong state."""


class RatingError(SessionError):
    pass


@dataclass(frozen=True)
class InterleavedSlate:
    items: tuple[str, ...]
    teams: tuple[str, ...]  # per-item TEAM_A | TEAM_B
    source_ranks: tuple[int, ...]  # rank in the contributing team's slate

    def __post_init__(self):
        if len(set(self.items)) != len(self.items):
            raise ValueError("interleaved slate contains duplicates")
        counts = (self.teams.count(TEAM_A), self.teams.count(TEAM_B))
        if abs(counts[0] - counts[1]) > 1:
            raise ValueError(f"team counts differ by more than 1: {counts}")


def team_draft_interleave(
    slate_a: Sequence[str],
    slate_b: Sequence[str],
    k: int,
    rng: np.random.Generator,
) -> InterleavedSlate:
    """Classic team-draft merge of two rankings.

    Before every pick pair a coin decides which team drafts first; each
    team drafts its highest-ranked item not yet in the combined slate.
    Drafting stops at k items, or as soon as a team cannot pick, keeping
    the team counts within one of each other.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(set(slate_a)) != len(slate_a) or len(set(slate_b)) != len(slate_b):
        raise ValueError("input slates must be duplicate-free")
    items: list[str] = []
    teams: list[str] = []
    ranks: list[int] = []
    chosen: set[str] = set()
    pos = {TEAM_A: 0, TEAM_B: 0}
    slates = {TEAM_A: list(slate_a), TEAM_B: list(slate_b)}

    def draft(team: str) -> bool:
        lst = slates[team]
        i = pos[team]
        while i < len(lst) and lst[i] in chosen:
            i += 1
        pos[team] = i
        if i >= len(lst):
            return False
        items.append(lst[i])
        teams.append(team)
        ranks.append(i)
        chosen.add(lst[i])
        pos[team] = i + 1
        return True

    while len(items) < k:
        first = TEAM_A if rng.random() < 0.5 else TEAM_B
        second = TEAM_B if first == TEAM_A else TEAM_A
        took_first = draft(first)
        if len(items) >= k:
            break
        took_second = draft(second)
        if not took_first and not took_second:
            break
        if not (took_first and took_second):
            # One side exhausted mid-pair; stop to keep counts within one.
            break
    return InterleavedSlate(items=tuple(items), teams=tuple(teams),
                            source_ranks=tuple(ranks))


def credit(slate: InterleavedSlate,
           ratings: Mapping[str, str]) -> tuple[int, int]:
    """Per-system hit indicators: 1 when any of that team's items was liked.

    Every shown item must be rated.
    """
    for item in slate.items:
        if item not in ratings:
            raise RatingError(f"item {item!r} was shown but not rated")
    hit_a = hit_b = 0
    for item, team in zip(slate.items, slate.teams):
        if ratings[item] == "like":
            if team == TEAM_A:
                hit_a = 1
            else:
                hit_b = 1
    return hit_a, hit_b


def significance(
    hits_a: Sequence[float],
    hits_b: Sequence[float],
    resamples: int = 100_000,
    seed: int = 0,
) -> float:
    """Two-sided paired permutation test over sign flips of the differences.

    Zero differences are invariant under flipping and drop out. The p-value
    uses the add-one convention, so identical inputs give exactly 1.0.
    """
    if len(hits_a) != len(hits_b):
        raise ValueError(
            f"paired lists must have equal length, got {len(hits_a)} and {len(hits_b)}"
        )
    if len(hits_a) == 0:
        raise ValueError("need at least one pair")
    diffs = np.asarray(hits_a, dtype=np.float64) - np.asarray(hits_b, dtype=np.float64)
    nonzero = diffs[diffs != 0.0]
    if len(nonzero) == 0:
        return 1.0
    observed = abs(float(nonzero.sum()))
    rng = np.random.default_rng(seed)
    exceed = 0
    chunk = max(1, min(resamples, 8_000_000 // max(len(nonzero), 1)))
    done = 0
    while done < resamples:
        n = min(chunk, resamples - done)
        signs = rng.integers(0, 2, size=(n, len(nonzero))).astype(np.float64) * 2.0 - 1.0
        stats = np.abs(signs @ nonzero)
        exceed += int(np.count_nonzero(stats >= observed - 1e-12))
        done += n
    return (exceed + 1) / (resamples + 1)


@dataclass(frozen=True)
class SessionConfig:
    min_rounds: int = 5
    slate_size: int = 10
    min_words: int = 4
    greeting_stoplist: frozenset[str] = DEFAULT_GREETING_STOPLIST


def _flag_utterance(text: str, config: SessionConfig) -> tuple[str, ...]:
    flags = []
    normalized = " ".join(text.lower().split()).strip(".,!? ")
    if normalized in config.greeting_stoplist:
        flags.append("greeting")
    if len(text.split()) < config.min_words:
        flags.append("short-utterance")
    return tuple(flags)


@dataclass
class Round:
    utterance: str
    slate: InterleavedSlate
    ratings: dict[str, str] | None = None
    flags: tuple[str, ...] = ()


@dataclass
class Session:
    id: str
    system_pair: tuple[str, str]
    seed: int
    rounds: list[Round] = field(default_factory=list)
    status: str = STATUS_OPEN
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    rng: np.random.Generator | None = None  # set at creation

    @property
    def completed_rounds(self) -> int:
        return sum(1 for r in self.rounds if r.ratings is not None)


# A ranker maps (history, utterance) to a ranked list of item ids, where
# history pairs each previous utterance with the items actually shown.
Ranker = Callable[[Sequence[tuple[str, Sequence]], str], list[str]]


class EvalService:
    """Session manager pairing two ranking systems behind one transcript.

    Both systems are conditioned on the session's real transcript: the
    utterances plus the interleaved slates the user actually saw. State is
    kept in memory and mirrored to an append-only event log.
    """

    def __init__(
        self,
        systems: Mapping[str, Ranker],
        pair: tuple[str, str],
        corpus: Corpus,
        log_dir=None,
        config: SessionConfig = SessionConfig(),
        seed: int = 0,
    ):
        if pair[0] not in systems or pair[1] not in systems:
            raise ValueError(f"pair {pair} not found among systems {sorted(systems)}")
        self.systems = dict(systems)
        self.pair = (pair[0], pair[1])
        self.corpus = corpus
        self.config = config
        self.seed = seed
        self.sessions: dict[str, Session] = {}
        self._registry_lock = threading.Lock()
        self._log_lock = threading.Lock()
        self._session_counter = 0
        self.log_path = None
        if log_dir is not None:
            log_dir = Path(log_dir)
            log_dir.mkdir(parents=True, exist_ok=True)
            self.log_path = log_dir / "sessions.jsonl"

    def _log(self, event: dict) -> None:
        if self.log_path is None:
            return
        with self._log_lock:
            with self.log_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(event, sort_keys=True))
                fh.write("\n")

    def _get(self, session_id: str) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise UnknownSessionError(f"unknown session {session_id!r}")
        return session

    def create_session(self, session_id: str | None = None) -> Session:
        with self._registry_lock:
            self._session_counter += 1
            counter = self._session_counter
        sid = session_id or uuid.uuid4().hex[:12]
        session = Session(
            id=sid,
            system_pair=self.pair,
            seed=self.seed + counter,
            rng=np.random.default_rng(self.seed + counter),
        )
        with self._registry_lock:
            if sid in self.sessions:
                raise SessionError(f"session {sid!r} already exists")
            self.sessions[sid] = session
        self._log({"event": "create", "session": sid,
                   "pair": list(self.pair), "seed": session.seed})
        return session

    def _display_items(self, slate: InterleavedSlate) -> list[dict]:
        out = []
        for item_id in slate.items:
            item = self.corpus.items.get(item_id)
            out.append({
                "item_id": item_id,
                "title": item.title if item else item_id,
                "artists": list(item.artists) if item else [],
            })
        return out

    def post_utterance(self, session_id: str, text: str) -> list[dict]:
        """Run both systems, interleave, and return the display slate.

        Team labels are withheld from the response; they only appear in
        closed-session reports.
        """
        session = self._get(session_id)
        with session.lock:
            if session.status == STATUS_CLOSED:
                raise OrderingError("session is closed")
            if session.status == STATUS_AWAITING:
                raise OrderingError("previous slate still awaits ratings")
            history = [
                (r.utterance, [self.corpus.items[i] for i in r.slate.items
                               if i in self.corpus.items])
                for r in session.rounds
            ]
            name_a, name_b = session.system_pair
            ranked_a = self.systems[name_a](history, text)
            ranked_b = self.systems[name_b](history, text)
            slate = team_draft_interleave(ranked_a, ranked_b,
                                          self.config.slate_size, session.rng)
            flags = _flag_utterance(text, self.config)
            session.rounds.append(Round(utterance=text, slate=slate, flags=flags))
            session.status = STATUS_AWAITING
            self._log({
                "event": "utterance", "session": session.id, "text": text,
                "items": list(slate.items), "teams": list(slate.teams),
                "source_ranks": list(slate.source_ranks), "flags": list(flags),
            })
            return self._display_items(slate)

    def post_ratings(self, session_id: str, ratings: Mapping[str, str]) -> dict:
        session = self._get(session_id)
        with session.lock:
            if session.status != STATUS_AWAITING:
                raise OrderingError("no slate awaits ratings")
            current = session.rounds[-1]
            shown = set(current.slate.items)
            extra = set(ratings) - shown
            if extra:
                raise RatingError(f"ratings for items never shown: {sorted(extra)}")
            missing = shown - set(ratings)
            if missing:
                raise RatingError(f"unrated items: {sorted(missing)}")
            for item, value in ratings.items():
                if value not in ("like", "dislike"):
                    raise RatingError(f"invalid rating {value!r} for {item!r}")
            current.ratings = dict(ratings)
            session.status = STATUS_OPEN
            self._log({"event": "ratings", "session": session.id,
                       "ratings": dict(sorted(ratings.items()))})
            return {"completed_rounds": session.completed_rounds,
                    "min_rounds": self.config.min_rounds}

    def close_session(self, session_id: str) -> dict:
        session = self._get(session_id)
        with session.lock:
            if session.status == STATUS_CLOSED:
                raise OrderingError("session is already closed")
            if session.status == STATUS_AWAITING:
                raise OrderingError("current slate still awaits ratings")
            if session.completed_rounds < self.config.min_rounds:
                raise OrderingError(
                    f"need at least {self.config.min_rounds} completed rounds, "
                    f"have {session.completed_rounds}"
                )
            session.status = STATUS_CLOSED
            report = _session_report(session, self.pair)
            self._log({"event": "close", "session": session.id})
            return report

    def get_session(self, session_id: str) -> dict:
        """Client view for rehydration; no team labels before close."""
        session = self._get(session_id)
        with session.lock:
            rounds = []
            for r in session.rounds:
                rounds.append({
                    "utterance": r.utterance,
                    "items": self._display_items(r.slate),
                    "ratings": dict(sorted(r.ratings.items())) if r.ratings else None,
                })
            return {
                "session_id": session.id,
                "status": session.status,
                "rounds": rounds,
                "completed_rounds": session.completed_rounds,
                "min_rounds": self.config.min_rounds,
            }


def _session_report(session: Session, pair: tuple[str, str]) -> dict:
    rounds = []
    credits = []
    for turn_no, r in enumerate(session.rounds, start=1):
        if r.ratings is None:
            continue
        hit_a, hit_b = credit(r.slate, r.ratings)
        included = not r.flags
        if included:
            credits.append((hit_a, hit_b))
        rounds.append({
            "turn": turn_no,
            "utterance": r.utterance,
            "items": list(r.slate.items),
            "teams": list(r.slate.teams),
            "ratings": dict(sorted(r.ratings.items())),
            "credit": {pair[0]: hit_a, pair[1]: hit_b},
            "flags": list(r.flags),
            "included": included,
        })
    n = len(credits)
    hit_rate_a = sum(c[0] for c in credits) / n if n else 0.0
    hit_rate_b = sum(c[1] for c in credits) / n if n else 0.0
    return {
        "session_id": session.id,
        "systems": list(pair),
        "rounds": rounds,
        "included_rounds": n,
        "excluded_rounds": sum(1 for r in rounds if not r["included"]),
        "hit_rates": {pair[0]: hit_rate_a, pair[1]: hit_rate_b},
        "credits": {pair[0]: [c[0] for c in credits],
                    pair[1]: [c[1] for c in credits]},
    }


def report_from_log(log_path, session_id: str) -> dict:
    """Rebuild a closed session's report from the event log alone."""
    pair = None
    seed = 0
    rounds: list[Round] = []
    with Path(log_path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            event = json.loads(line)
            if event.get("session") != session_id:
                continue
            kind = event["event"]
            if kind == "create":
                pair = tuple(event["pair"])
                seed = event["seed"]
            elif kind == "utterance":
                slate = InterleavedSlate(
                    items=tuple(event["items"]),
                    teams=tuple(event["teams"]),
                    source_ranks=tuple(event["source_ranks"]),
                )
                rounds.append(Round(utterance=event["text"], slate=slate,
                                    flags=tuple(event.get("flags", ()))))
            elif kind == "ratings":
                rounds[-1].ratings = dict(event["ratings"])
    if pair is None:
        raise UnknownSessionError(f"session {session_id!r} not in log")
    session = Session(id=session_id, system_pair=pair, seed=seed,
                      rounds=rounds, status=STATUS_CLOSED,
                      rng=np.random.default_rng(seed))
    return _session_report(session, pair)


def aggregate_reports(reports: Sequence[dict], resamples: int = 100_000,
                      seed: int = 0) -> dict:
    """Pool per-round credits across sessions and test the paired difference."""
    if not reports:
        raise ValueError("no session reports to aggregate")
    name_a, name_b = reports[0]["systems"]
    hits_a: list[int] = []
    hits_b: list[int] = []
    for rep in reports:
        hits_a.extend(rep["credits"][name_a])
        hits_b.extend(rep["credits"][name_b])
    n = len(hits_a)
    result = {
        "systems": [name_a, name_b],
        "rounds": n,
        "hit_rates": {
            name_a: sum(hits_a) / n if n else 0.0,
            name_b: sum(hits_b) / n if n else 0.0,
        },
    }
    if n:
        result["p_value"] = significance(hits_a, hits_b, resamples=resamples,
                                         seed=seed)
    return result


# Request bodies for the HTTP API. Module scope so FastAPI can resolve the
# postponed annotations.
class UtteranceBody(BaseModel):
    text: str


class RatingEntry(BaseModel):
    item_id: str
    rating: str


class RatingsBody(BaseModel):
    ratings: list[RatingEntry]


def build_app(service: EvalService):
    """FastAPI app exposing the session API.

    POST /sessions, POST /sessions/{id}/utterance, POST
    /sessions/{id}/ratings, POST /sessions/{id}/close, GET /sessions/{id}.
    """
    from fastapi import FastAPI, HTTPException

    app = FastAPI(title="slatewalk live evaluation")

    def _wrap(fn, *args):
        try:
            return fn(*args)
        except UnknownSessionError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except (OrderingError, RatingError) as exc:
            raise HTTPException(status_code=409, detail=str(exc))

    @app.post("/sessions")
    def create_session():
        session = service.create_session()
        return {"session_id": session.id,
                "min_rounds": service.config.min_rounds}

    @app.post("/sessions/{session_id}/utterance")
    def post_utterance(session_id: str, body: UtteranceBody):
        items = _wrap(service.post_utterance, session_id, body.text)
        return {"session_id": session_id, "items": items}

    @app.post("/sessions/{session_id}/ratings")
    def post_ratings(session_id: str, body: RatingsBody):
        ratings = {r.item_id: r.rating for r in body.ratings}
        return _wrap(service.post_ratings, session_id, ratings)

    @app.post("/sessions/{session_id}/close")
    def close_session(session_id: str):
        return _wrap(service.close_session, session_id)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return _wrap(service.get_session, session_id)

    return app
