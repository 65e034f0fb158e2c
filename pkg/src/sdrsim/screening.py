"""Per-candidate screening: repetition, inconsistency (NLI over triplets), hallucination."""

from __future__ import annotations

import logging
import re
import threading
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any

from .config import SdrConfig, dynamic_threshold
from .gateway import ChatRequest, JsonParseError, chat_json
from .prompts import (
    hallucination_prompt,
    render_evidence,
    selection_prompt,
    triplet_prompt,
)
from .store import Dialogue, ScopedStore, SimilarityHit

log = logging.getLogger(__name__)

PIPELINES = ("repetition", "inconsistency", "hallucination")
OUTCOMES = ("clean", "evidence", "force_regenerate", "flagged")


@dataclass(frozen=True)
class Candidate:
    text: str
    speaker: str
    listener: str


@dataclass(frozen=True)
class Triplet:
    subject: str
    relation: str
    object: str
    source_dialogue_id: str | None = None
    source_agent: str | None = None

    def __post_init__(self) -> None:
        if not (self.subject.strip() and self.relation.strip() and self.object.strip()):
            raise ValueError("triplet parts must be non-empty")


@dataclass(frozen=True)
class ScreeningReport:
    pipeline: str
    outcome: str
    evidence: tuple[str, ...] = ()
    score: int | None = None
    mentioned_agent: str | None = None
    trigger: SimilarityHit | None = None
    details: tuple = ()
    note: str = ""

    def __post_init__(self) -> None:
        if self.pipeline not in PIPELINES or self.outcome not in OUTCOMES:
            raise ValueError(f"bad report {self.pipeline}/{self.outcome}")
        if self.outcome == "evidence" and (not self.evidence
                                           or len(set(self.evidence)) != len(self.evidence)):
            raise ValueError("evidence must be non-empty and deduplicated")
        if self.outcome == "flagged" and (self.pipeline != "hallucination" or self.score is None
                                          or self.mentioned_agent is None):
            raise ValueError("flagged needs hallucination pipeline, score and agent")
        if self.outcome == "force_regenerate" and (self.pipeline != "repetition"
                                                   or self.trigger is None):
            raise ValueError("force_regenerate needs repetition pipeline and a trigger hit")

    @property
    def triggered(self) -> bool:
        return self.outcome != "clean"

    def to_json(self) -> dict:
        out: dict[str, Any] = {"pipeline": self.pipeline, "outcome": self.outcome}
        if self.evidence:
            out["evidence"] = list(self.evidence)
        if self.score is not None:
            out["score"] = self.score
        if self.mentioned_agent is not None:
            out["mentioned_agent"] = self.mentioned_agent
        if self.trigger is not None:
            out["trigger"] = self.trigger.to_json()
        if self.details:
            out["details"] = [list(d) for d in self.details]
        if self.note:
            out["note"] = self.note
        return out


def clean(pipeline: str, note: str = "") -> ScreeningReport:
    return ScreeningReport(pipeline, "clean", note=note)


def parse_score(value: Any) -> int:
    """A 1-10 integer score, accepting numeric strings like ``"8"``."""
    if isinstance(value, bool):
        raise ValueError(f"not a score: {value!r}")
    if isinstance(value, str):
        value = value.strip()
        if not re.fullmatch(r"\d+(\.0+)?", value):
            raise ValueError(f"not a score: {value!r}")
        value = float(value)
    if isinstance(value, float):
        if not value.is_integer():
            raise ValueError(f"score must be an integer: {value}")
        value = int(value)
    if not isinstance(value, int) or not 1 <= value <= 10:
        raise ValueError(f"score outside 1-10: {value!r}")
    return value


# -- repetition -----------------------------------------------------------------


def screen_repetition(cand: Candidate, view: ScopedStore, cfg: SdrConfig) -> ScreeningReport:
    if len(cand.text.split()) < cfg.min_words_repetition:
        return clean("repetition", "short utterance exempt")
    hits = view.query_similar(cand.text, cfg.k_sim, speaker=cand.speaker)
    if not hits:
        return clean("repetition")
    top = max(hits, key=lambda h: h.score)
    if top.score > cfg.theta_force:
        return ScreeningReport("repetition", "force_regenerate", trigger=top)
    over = [h for h in hits if h.score > dynamic_threshold(cfg, h.same_speaker, h.same_dialogue)]
    if len(over) <= 1:
        return clean("repetition")
    evidence: list[str] = []
    for h in over:
        if h.utterance.dialogue_id not in evidence:
            evidence.append(h.utterance.dialogue_id)
    details = tuple((h.utterance.utterance_id, round(h.score, 6)) for h in over)
    return ScreeningReport("repetition", "evidence", tuple(evidence[: cfg.k_sim]), details=details)


# -- triplets ---------------------------------------------------------------------


def textualize(t: Triplet) -> str:
    parts = [" ".join(p.split()) for p in (t.subject, t.relation, t.object)]
    sentence = " ".join(parts)
    if sentence[-1] not in ".!?":
        sentence += "."
    return sentence


def parse_triplets(raw: Any, source_dialogue_id: str | None = None,
                   agents: Sequence[str] = ()) -> tuple[list[Triplet], int]:
    """Valid triplets and the number of malformed entries dropped."""
    if not isinstance(raw, list):
        return [], 1
    out, dropped = [], 0
    for entry in raw:
        if (isinstance(entry, (list, tuple)) and len(entry) == 3
                and all(isinstance(p, str) and p.strip() for p in entry)):
            subj, rel, obj = (p.strip() for p in entry)
            out.append(Triplet(subj, rel, obj, source_dialogue_id,
                               subj if subj in agents else None))
        else:
            dropped += 1
    return out, dropped


class TripletExtractor:
    """LLM triplet extraction with a per-dialogue cache.

    Dialogue requests carry a fixed seed and zero temperature so the cache can
    be shared across parallel runs without changing what a mock returns.
    """

    def __init__(self, chat, cache: dict[str, list[Triplet]] | None = None):
        self.chat = chat
        self.cache = cache if cache is not None else {}
        self.dropped = 0
        self._lock = threading.Lock()
        self._key_locks: dict[str, threading.Lock] = {}

    def with_chat(self, chat) -> TripletExtractor:
        other = TripletExtractor(chat, self.cache)
        other._lock, other._key_locks = self._lock, self._key_locks
        return other

    def _extract(self, prompt: str, source: str | None, agents: Sequence[str]) -> list[Triplet]:
        req = ChatRequest(prompt, temperature=0.0, seed=0, expect_json=True, max_output_tokens=1024)
        try:
            raw = chat_json(self.chat, req, expect=list)
        except JsonParseError:
            log.warning("triplet extraction unparseable for %s", source or "utterance")
            with self._lock:
                self.dropped += 1
            return []
        triplets, dropped = parse_triplets(raw, source, agents)
        if dropped:
            log.warning("dropped %d malformed triplet(s) from %s", dropped, source or "utterance")
            with self._lock:
                self.dropped += dropped
        return triplets

    def for_dialogue(self, d: Dialogue) -> list[Triplet]:
        with self._lock:
            if d.dialogue_id in self.cache:
                return self.cache[d.dialogue_id]
            key_lock = self._key_locks.setdefault(d.dialogue_id, threading.Lock())
        with key_lock:
            with self._lock:
                if d.dialogue_id in self.cache:
                    return self.cache[d.dialogue_id]
            triplets = self._extract(triplet_prompt(d.render(), True), d.dialogue_id, d.names)
            with self._lock:
                self.cache[d.dialogue_id] = triplets
        return triplets

    def for_text(self, text: str, speaker: str | None = None) -> list[Triplet]:
        agents = (speaker,) if speaker else ()
        body = f"{speaker}: {text}" if speaker else text
        return self._extract(triplet_prompt(body, False), None, agents)


def extract_triplets(chat, source: Dialogue | str) -> list[Triplet]:
    ex = TripletExtractor(chat)
    if isinstance(source, Dialogue):
        return ex.for_dialogue(source)
    return ex.for_text(source)


# -- inconsistency ----------------------------------------------------------------


@dataclass
class Suspicion:
    prior: Triplet
    candidate: Triplet
    contradiction: float


def _prior_dialogues(view: ScopedStore, agents: Sequence[str]) -> list[Dialogue]:
    seen: dict[str, Dialogue] = {}
    for a in agents:
        for d in view.dialogues_involving(a):
            seen.setdefault(d.dialogue_id, d)
    return sorted(seen.values(), key=lambda d: (d.time, d.dialogue_id))


def screen_inconsistency(cand: Candidate, involved: Sequence[str], view: ScopedStore,
                         extractor: TripletExtractor, nli, chat, cfg: SdrConfig, *,
                         candidate_triplets: list[Triplet] | None = None) -> ScreeningReport:
    """NLI-over-triplets screening against the involved agents' earlier dialogues.

    Prior triplet text is the premise, candidate triplet text the hypothesis.
    """
    priors = _prior_dialogues(view, involved)
    if not priors:
        return clean("inconsistency", "no prior dialogues")
    if candidate_triplets is None:
        candidate_triplets = extractor.for_text(cand.text, cand.speaker)
    if not candidate_triplets:
        return clean("inconsistency", "no candidate triplets")
    hyps = [(t, textualize(t)) for t in candidate_triplets]
    memo: dict[tuple[str, str], float] = {}
    suspicious: list[Suspicion] = []
    by_id = {d.dialogue_id: d for d in priors}
    for d in priors:
        for pt in extractor.for_dialogue(d):
            premise = textualize(pt)
            for ct, hyp in hyps:
                key = (premise, hyp)
                if key not in memo:
                    memo[key] = nli.nli(premise, hyp).contradiction
                if memo[key] > cfg.theta_nlig:
                    suspicious.append(Suspicion(pt, ct, memo[key]))
    if not suspicious:
        return clean("inconsistency")

    best: dict[str, float] = {}
    for s in suspicious:
        did = s.prior.source_dialogue_id
        best[did] = max(best.get(did, 0.0), s.contradiction)
    ranked = sorted(best, key=lambda did: (-best[did], by_id[did].time, did))
    limit = min(cfg.k_nlig, len(ranked))

    listing = "\n".join(
        f"[{s.prior.source_dialogue_id}] {textualize(s.prior)} => {textualize(s.candidate)}"
        for s in suspicious
    )
    dialogues = "\n\n".join(f"Dialogue id: {did}\n" + render_evidence([by_id[did]])
                            for did in ranked)
    chosen: list[str] = []
    try:
        raw = chat_json(chat, ChatRequest(selection_prompt(listing, dialogues, cfg.k_nlig),
                                          expect_json=True))
        ids = raw.get("dialogue_ids", [])
        if not isinstance(ids, list):
            raise JsonParseError("dialogue_ids is not a list")
        for did in ids:
            did = str(did)
            if did not in best:
                log.warning("selection returned unknown dialogue id %r; dropped", did)
            elif did not in chosen:
                chosen.append(did)
    except JsonParseError as exc:
        log.warning("evidence selection unparseable (%s); ranking by contradiction", exc)
    chosen = chosen[:limit]
    for did in ranked:
        if len(chosen) >= limit:
            break
        if did not in chosen:
            chosen.append(did)
    details = tuple((s.prior.source_dialogue_id, textualize(s.prior), textualize(s.candidate),
                     round(s.contradiction, 6)) for s in suspicious)
    return ScreeningReport("inconsistency", "evidence", tuple(chosen), details=details)


# -- hallucination ------------------------------------------------------------------


def _name_pattern(name: str) -> re.Pattern:
    return re.compile(r"(?<![\w])" + re.escape(name) + r"(?![\w])")


def detect_third_party_mentions(text: str, speaker: str, listener: str,
                                roster: Sequence[str]) -> list[str]:
    """Roster members other than speaker/listener named in ``text``.

    Full names are matched first and masked, then first and last names are
    matched whole-word and case-sensitively on what remains; a shared surname
    or first name reports every roster member carrying it.
    """
    found: set[str] = set()
    masked = text
    for name in sorted(roster, key=len, reverse=True):
        pat = _name_pattern(name)
        if pat.search(masked):
            found.add(name)
            masked = pat.sub(lambda m: " " * len(m.group(0)), masked)
    for name in roster:
        if name in found:
            continue
        parts = name.split()
        if len(parts) < 2:
            continue
        if any(_name_pattern(p).search(masked) for p in (parts[0], parts[-1])):
            found.add(name)
    return [n for n in roster if n in found and n not in (speaker, listener)]


def screen_hallucination(cand: Candidate, mentions: Sequence[str], view: ScopedStore | None,
                         chat, cfg: SdrConfig) -> ScreeningReport:
    if not mentions:
        return clean("hallucination", "no third-party mentions")
    dialogue = view.render_current() if view is not None else ""
    scores: list[tuple[str, int, str]] = []
    for name in mentions:
        prompt = hallucination_prompt(cand.speaker, cand.listener, name, dialogue, cand.text)
        raw = chat_json(chat, ChatRequest(prompt, expect_json=True))
        try:
            score = parse_score(raw.get("score"))
        except ValueError as exc:
            raise JsonParseError(f"hallucination score: {exc}") from exc
        scores.append((name, score, str(raw.get("reason", ""))))
    name, score, _ = max(scores, key=lambda s: s[1])
    details = tuple((n, s) for n, s, _ in scores)
    if score > cfg.theta_fact:
        return ScreeningReport("hallucination", "flagged", score=score, mentioned_agent=name,
                               details=details)
    return ScreeningReport("hallucination", "clean", details=details)
