"""Dialogue records, corpus I/O and the append-only similarity store."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from collections.abc import Callable, Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

NORM_TOL = 1e-6


class DialogueError(ValueError):
    """A dialogue violates the corpus invariants."""


class StoreError(RuntimeError):
    pass


class CorpusFormatError(ValueError):
    """Corpus file failed schema validation; ``line`` is 1-based."""

    def __init__(self, path: str | os.PathLike, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


def parse_time(value: str) -> datetime:
    try:
        return datetime.fromisoformat(value.replace("Z", "+00:00"))
    except (TypeError, ValueError, AttributeError) as exc:
        raise DialogueError(f"invalid ISO-8601 timestamp: {value!r}") from exc


@dataclass(frozen=True)
class Utterance:
    utterance_id: str
    dialogue_id: str
    speaker: str
    text: str
    turn_index: int
    embedding: np.ndarray | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Participant:
    name: str
    status: str = ""


@dataclass(frozen=True)
class Dialogue:
    dialogue_id: str
    time: datetime
    location: str
    participants: tuple[Participant, Participant]
    utterances: tuple[Utterance, ...]

    @classmethod
    def build(
        cls,
        dialogue_id: str,
        time: datetime | str,
        location: str,
        participants: Sequence[Participant | tuple[str, str] | str],
        turns: Sequence[tuple[str, str]],
    ) -> Dialogue:
        """Construct from plain ``(speaker, text)`` turns, assigning ids."""
        if isinstance(time, str):
            time = parse_time(time)
        parts = []
        for p in participants:
            if isinstance(p, Participant):
                parts.append(p)
            elif isinstance(p, str):
                parts.append(Participant(p))
            else:
                parts.append(Participant(*p))
        utts = tuple(
            Utterance(f"{dialogue_id}:{i}", dialogue_id, speaker, text, i)
            for i, (speaker, text) in enumerate(turns)
        )
        return cls(dialogue_id, time, location, tuple(parts), utts)  # type: ignore[arg-type]

    @property
    def names(self) -> tuple[str, str]:
        return (self.participants[0].name, self.participants[1].name)

    def status_of(self, name: str) -> str:
        for p in self.participants:
            if p.name == name:
                return p.status
        raise KeyError(name)

    def partner_of(self, name: str) -> str:
        a, b = self.names
        if name == a:
            return b
        if name == b:
            return a
        raise KeyError(name)

    def validate(self, min_utterances: int = 2) -> None:
        if not self.dialogue_id:
            raise DialogueError("dialogue_id must be non-empty")
        if len(self.participants) != 2:
            raise DialogueError(f"{self.dialogue_id}: expected exactly 2 participants")
        names = self.names
        if names[0] == names[1]:
            raise DialogueError(f"{self.dialogue_id}: participants must be distinct")
        if len(self.utterances) < min_utterances:
            raise DialogueError(
                f"{self.dialogue_id}: {len(self.utterances)} utterance(s), need >= {min_utterances}"
            )
        for i, u in enumerate(self.utterances):
            if u.turn_index != i:
                raise DialogueError(f"{self.dialogue_id}: turn_index not consecutive at {i}")
            if u.speaker not in names:
                raise DialogueError(
                    f"{self.dialogue_id}: speaker {u.speaker!r} is not a participant"
                )
            if not u.text.strip():
                raise DialogueError(f"{self.dialogue_id}: empty utterance at turn {i}")
            if u.dialogue_id != self.dialogue_id:
                raise DialogueError(f"{self.dialogue_id}: utterance {u.utterance_id} has wrong parent")

    def render(self) -> str:
        return "\n".join(f"{u.speaker}: {u.text}" for u in self.utterances)

    def to_json(self) -> dict:
        return {
            "dialogue_id": self.dialogue_id,
            "time": self.time.isoformat(),
            "location": self.location,
            "participants": [{"name": p.name, "status": p.status} for p in self.participants],
            "utterances": [{"speaker": u.speaker, "text": u.text} for u in self.utterances],
        }

    @classmethod
    def from_json(cls, obj: dict) -> Dialogue:
        if not isinstance(obj, dict):
            raise DialogueError("dialogue record must be a JSON object")
        for key in ("dialogue_id", "time", "location", "participants", "utterances"):
            if key not in obj:
                raise DialogueError(f"missing field {key!r}")
        parts = obj["participants"]
        if not isinstance(parts, list) or len(parts) != 2:
            raise DialogueError("participants must be a list of exactly 2 objects")
        try:
            participants = [Participant(str(p["name"]), str(p.get("status", ""))) for p in parts]
            turns = [(str(u["speaker"]), str(u["text"])) for u in obj["utterances"]]
        except (KeyError, TypeError) as exc:
            raise DialogueError(f"malformed participant/utterance entry: {exc}") from exc
        return cls.build(str(obj["dialogue_id"]), str(obj["time"]), str(obj["location"]),
                         participants, turns)


def load_corpus(path: str | os.PathLike, min_utterances: int = 2) -> list[Dialogue]:
    """Read a corpus JSONL file.

    Dialogues shorter than ``min_utterances`` are skipped with a warning; any
    structural problem raises :class:`CorpusFormatError` carrying the line.
    """
    dialogues: list[Dialogue] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = Dialogue.from_json(json.loads(line))
                d.validate(min_utterances=1)
            except (json.JSONDecodeError, DialogueError) as exc:
                raise CorpusFormatError(path, lineno, str(exc)) from exc
            if d.dialogue_id in seen:
                raise CorpusFormatError(path, lineno, f"duplicate dialogue_id {d.dialogue_id!r}")
            seen.add(d.dialogue_id)
            if len(d.utterances) < min_utterances:
                log.warning("%s:%d: skipping %s (%d utterance)", path, lineno,
                            d.dialogue_id, len(d.utterances))
                continue
            dialogues.append(d)
    return dialogues


def dump_corpus(dialogues: Iterable[Dialogue], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(json.dumps(d.to_json(), ensure_ascii=False) + "\n" for d in dialogues)


class EmbeddingCache:
    """Sidecar JSONL cache of ``{"hash", "vector"}`` records."""

    def __init__(self, path: str | os.PathLike | None = None, namespace: str = ""):
        self.path = Path(path) if path else None
        self.namespace = namespace
        self._vectors: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._vectors[rec["hash"]] = np.asarray(rec["vector"], dtype=float)

    def key(self, text: str) -> str:
        return hashlib.sha256(f"{self.namespace}\x00{text}".encode()).hexdigest()

    def get_or_compute(self, text: str, embed: Callable[[str], np.ndarray]) -> np.ndarray:
        h = self.key(text)
        with self._lock:
            hit = self._vectors.get(h)
        if hit is not None:
            return hit
        vec = np.asarray(embed(text), dtype=float)
        with self._lock:
            if h not in self._vectors:
                self._vectors[h] = vec
                if self.path:
                    with open(self.path, "a", encoding="utf-8") as fh:
                        fh.write(json.dumps({"hash": h, "vector": vec.tolist()}) + "\n")
        return vec

    def __len__(self) -> int:
        return len(self._vectors)


@dataclass(frozen=True)
class SimilarityHit:
    utterance: Utterance
    score: float
    same_speaker: bool
    same_dialogue: bool

    def to_json(self) -> dict:
        return {
            "utterance_id": self.utterance.utterance_id,
            "dialogue_id": self.utterance.dialogue_id,
            "speaker": self.utterance.speaker,
            "text": self.utterance.text,
            "score": round(self.score, 6),
            "same_speaker": self.same_speaker,
            "same_dialogue": self.same_dialogue,
        }


def _unit(vec: np.ndarray, what: str) -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    n = float(np.linalg.norm(vec))
    if n == 0.0 or not np.isfinite(n):
        raise StoreError(f"zero or non-finite embedding for {what}")
    if abs(n - 1.0) > NORM_TOL:
        vec = vec / n
    return vec


def rank_hits(scores: np.ndarray, order_keys: Sequence[tuple], k: int) -> list[int]:
    """Indices of the top ``k`` scores; ties go to the smaller order key (older)."""
    idx = sorted(range(len(scores)), key=lambda i: (-float(scores[i]), order_keys[i]))
    return idx[:k]


class DialogueStore:
    """Append-only dialogue store with an exact cosine-similarity index.

    ``embedder`` is anything with ``embed(text) -> vector``. ``on_read`` is an
    optional audit hook receiving the dialogue ids each read returns.
    """

    def __init__(self, embedder, cache: EmbeddingCache | None = None,
                 on_read: Callable[[str, list[str]], None] | None = None):
        self.embedder = embedder
        self.cache = cache
        self.on_read = on_read
        self._lock = threading.RLock()
        self._dialogues: dict[str, Dialogue] = {}
        self._utts: list[Utterance] = []
        self._times: list[datetime] = []
        self._matrix: np.ndarray | None = None
        self._rows: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self._dialogues)

    def __contains__(self, dialogue_id: str) -> bool:
        return dialogue_id in self._dialogues

    def __iter__(self) -> Iterator[Dialogue]:
        with self._lock:
            return iter(sorted(self._dialogues.values(), key=lambda d: d.time))

    @property
    def utterance_count(self) -> int:
        return len(self._utts)

    def embed(self, text: str) -> np.ndarray:
        if self.cache is not None:
            vec = self.cache.get_or_compute(text, self.embedder.embed)
        else:
            vec = self.embedder.embed(text)
        return _unit(vec, repr(text[:40]))

    def insert_dialogue(self, d: Dialogue) -> str:
        d.validate()
        with self._lock:
            if d.dialogue_id in self._dialogues:
                raise StoreError(f"duplicate dialogue_id {d.dialogue_id!r}")
        try:
            vectors = [self.embed(u.text) for u in d.utterances]
        except Exception as exc:
            raise StoreError(f"embedding failed for dialogue {d.dialogue_id}: {exc}") from exc
        utts = tuple(
            Utterance(u.utterance_id, u.dialogue_id, u.speaker, u.text, u.turn_index, v)
            for u, v in zip(d.utterances, vectors)
        )
        stored = Dialogue(d.dialogue_id, d.time, d.location, d.participants, utts)
        with self._lock:
            if d.dialogue_id in self._dialogues:
                raise StoreError(f"duplicate dialogue_id {d.dialogue_id!r}")
            self._dialogues[d.dialogue_id] = stored
            for u in utts:
                self._utts.append(u)
                self._times.append(d.time)
                self._rows.append(u.embedding)
            self._matrix = None
        return d.dialogue_id

    def get(self, dialogue_id: str) -> Dialogue:
        with self._lock:
            try:
                d = self._dialogues[dialogue_id]
            except KeyError:
                raise KeyError(f"unknown dialogue {dialogue_id!r}") from None
        self._audit("get", [dialogue_id])
        return d

    def _snapshot(self) -> tuple[list[Utterance], list[datetime], np.ndarray]:
        with self._lock:
            if self._matrix is None:
                self._matrix = (np.vstack(self._rows) if self._rows else np.zeros((0, 0)))
            return list(self._utts), list(self._times), self._matrix

    def _audit(self, op: str, ids: list[str]) -> None:
        if self.on_read is not None and ids:
            self.on_read(op, ids)

    def scan(self, vector: np.ndarray, before: datetime | None = None,
             exclude: set[str] | None = None) -> tuple[list[Utterance], list[datetime], np.ndarray]:
        """All eligible utterances and their cosine scores against ``vector``."""
        utts, times, matrix = self._snapshot()
        if not utts:
            return [], [], np.zeros(0)
        scores = matrix @ vector
        keep = [
            i for i, u in enumerate(utts)
            if (before is None or times[i] < before)
            and not (exclude and u.utterance_id in exclude)
        ]
        return [utts[i] for i in keep], [times[i] for i in keep], scores[keep]

    def query_similar(self, text: str, k: int, exclude: set[str] | None = None, *,
                      speaker: str | None = None, dialogue_id: str | None = None,
                      before: datetime | None = None) -> list[SimilarityHit]:
        """Top-``k`` stored utterances by cosine similarity to ``text``.

        ``speaker``/``dialogue_id`` only set the hit flags; ``before`` restricts
        to dialogues strictly earlier than that time.
        """
        if k <= 0:
            raise ValueError("k must be positive")
        if not self._utts:
            return []
        vec = self.embed(text)
        utts, times, scores = self.scan(vec, before, exclude)
        order = [(times[i], u.dialogue_id, u.turn_index) for i, u in enumerate(utts)]
        top = rank_hits(scores, order, k)
        hits = [
            SimilarityHit(utts[i], float(scores[i]),
                          speaker is not None and utts[i].speaker == speaker,
                          dialogue_id is not None and utts[i].dialogue_id == dialogue_id)
            for i in top
        ]
        self._audit("query_similar", sorted({h.utterance.dialogue_id for h in hits}))
        return hits

    def dialogues_involving(self, agent: str, before: datetime | None = None) -> list[Dialogue]:
        with self._lock:
            found = [d for d in self._dialogues.values()
                     if agent in d.names and (before is None or d.time < before)]
        found.sort(key=lambda d: (d.time, d.dialogue_id))
        self._audit("dialogues_involving", [d.dialogue_id for d in found])
        return found

    def scoped(self, dialogue_id: str, time: datetime,
               participants: Sequence[Participant], location: str = "") -> ScopedStore:
        return ScopedStore(self, dialogue_id, time, tuple(participants), location)


class ScopedStore:
    """Read view of a base store as seen from one in-progress dialogue.

    The base is visible only strictly before ``time``; the dialogue's own
    committed turns live here and are searchable alongside it. Nothing is ever
    written back to the base store.
    """

    def __init__(self, base: DialogueStore, dialogue_id: str, time: datetime,
                 participants: tuple[Participant, ...], location: str = ""):
        self.base = base
        self.dialogue_id = dialogue_id
        self.time = time
        self.participants = participants
        self.location = location
        self._utts: list[Utterance] = []
        self._rows: list[np.ndarray] = []

    @property
    def utterances(self) -> tuple[Utterance, ...]:
        return tuple(self._utts)

    def append(self, speaker: str, text: str) -> Utterance:
        """Commit a turn of the in-progress dialogue."""
        names = [p.name for p in self.participants]
        if speaker not in names:
            raise DialogueError(f"{speaker!r} is not a participant of {self.dialogue_id}")
        if not text.strip():
            raise DialogueError("cannot commit an empty utterance")
        vec = self.base.embed(text)
        i = len(self._utts)
        u = Utterance(f"{self.dialogue_id}:{i}", self.dialogue_id, speaker, text, i, vec)
        self._utts.append(u)
        self._rows.append(vec)
        return u

    def current(self) -> Dialogue:
        return Dialogue(self.dialogue_id, self.time, self.location,
                        self.participants, tuple(self._utts))  # type: ignore[arg-type]

    def render_current(self) -> str:
        return "\n".join(f"{u.speaker}: {u.text}" for u in self._utts)

    def query_similar(self, text: str, k: int, speaker: str | None = None,
                      exclude: set[str] | None = None) -> list[SimilarityHit]:
        if k <= 0:
            raise ValueError("k must be positive")
        if not self._utts and not self.base.utterance_count:
            return []
        vec = self.base.embed(text)
        utts, times, scores = self.base.scan(vec, self.time, exclude)
        utts = list(utts)
        keys = [(0, t, u.dialogue_id, u.turn_index) for t, u in zip(times, utts)]
        score_list = list(scores)
        for u, row in zip(self._utts, self._rows):
            if exclude and u.utterance_id in exclude:
                continue
            utts.append(u)
            keys.append((1, self.time, u.dialogue_id, u.turn_index))
            score_list.append(float(row @ vec))
        top = rank_hits(np.asarray(score_list), keys, k)
        hits = [
            SimilarityHit(utts[i], float(score_list[i]),
                          speaker is not None and utts[i].speaker == speaker,
                          utts[i].dialogue_id == self.dialogue_id)
            for i in top
        ]
        self.base._audit("query_similar",
                         sorted({h.utterance.dialogue_id for h in hits} - {self.dialogue_id}))
        return hits

    def dialogues_involving(self, agent: str) -> list[Dialogue]:
        return self.base.dialogues_involving(agent, before=self.time)

    def get(self, dialogue_id: str) -> Dialogue:
        if dialogue_id == self.dialogue_id:
            return self.current()
        return self.base.get(dialogue_id)

    def last_dialogue_between(self, a: str, b: str) -> Dialogue | None:
        shared = [d for d in self.dialogues_involving(a) if b in d.names]
        return shared[-1] if shared else None
