"""Agent profiles: persona, timestamped memories, location and status."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

from .store import parse_time


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class Memory:
    time: datetime
    text: str


@dataclass(frozen=True)
class AgentProfile:
    name: str
    background: str
    memories: tuple[Memory, ...] = ()
    location: str = ""
    status: str = ""

    def __post_init__(self) -> None:
        if not self.name.strip():
            raise ProfileError("agent name must be non-empty")
        if not self.background.strip():
            raise ProfileError(f"{self.name}: background must be non-empty")

    @property
    def first_name(self) -> str:
        return self.name.split()[0]

    def memory_texts(self, limit: int, before: datetime | None = None) -> list[str]:
        """The most recent ``limit`` memories strictly before ``before``, oldest first."""
        if limit <= 0:
            return []
        mems = [m for m in self.memories if before is None or _naive(m.time) < _naive(before)]
        mems.sort(key=lambda m: _naive(m.time))
        return [m.text for m in mems[-limit:]]

    @classmethod
    def from_json(cls, obj: dict) -> AgentProfile:
        try:
            memories = tuple(Memory(parse_time(m["time"]), str(m["text"]))
                             for m in obj.get("memories", []))
            return cls(str(obj["name"]), str(obj["background"]), memories,
                       str(obj.get("location", "")), str(obj.get("status", "")))
        except (KeyError, TypeError) as exc:
            raise ProfileError(f"malformed agent profile: {exc}") from exc

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "background": self.background,
            "memories": [{"time": m.time.isoformat(), "text": m.text} for m in self.memories],
            "location": self.location,
            "status": self.status,
        }


def _naive(t: datetime) -> datetime:
    return t.replace(tzinfo=None)


@dataclass
class Roster:
    profiles: dict[str, AgentProfile] = field(default_factory=dict)

    def __contains__(self, name: str) -> bool:
        return name in self.profiles

    def __getitem__(self, name: str) -> AgentProfile:
        return self.profiles[name]

    def get(self, name: str) -> AgentProfile | None:
        return self.profiles.get(name)

    @property
    def names(self) -> list[str]:
        return sorted(self.profiles)

    def add(self, p: AgentProfile) -> None:
        if p.name in self.profiles:
            raise ProfileError(f"duplicate agent {p.name!r}")
        self.profiles[p.name] = p

    @classmethod
    def of(cls, profiles) -> Roster:
        r = cls()
        for p in profiles:
            r.add(p)
        return r


def load_roster(path: str | os.PathLike) -> Roster:
    """Load profiles from a directory of ``*.json`` files or one JSON file.

    A single file may hold one profile object or a list of them.
    """
    path = Path(path)
    files = sorted(path.glob("*.json")) if path.is_dir() else [path]
    roster = Roster()
    for f in files:
        try:
            with open(f, encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ProfileError(f"{f}: {exc}") from exc
        for obj in doc if isinstance(doc, list) else [doc]:
            try:
                roster.add(AgentProfile.from_json(obj))
            except ProfileError as exc:
                raise ProfileError(f"{f}: {exc}") from exc
    return roster
