"""Comment filtering, suggestion integration, revision and the bounded SDR loop."""

from __future__ import annotations

import logging
import random
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

from .config import SdrConfig
from .diagnosis import DiagnosisComment, diagnose_agreement, diagnose_with_evidence
from .gateway import BackendError, ChatRequest, JsonParseError, Services, chat_json
from .profiles import Roster
from .prompts import (
    ENDS_KEY,
    PromptInfo,
    Revision,
    integration_prompt,
    persona_prompt,
    task_prompt,
)
from .screening import (
    Candidate,
    ScreeningReport,
    TripletExtractor,
    clean,
    detect_third_party_mentions,
    screen_hallucination,
    screen_inconsistency,
    screen_repetition,
)
from .store import ScopedStore, StoreError

log = logging.getLogger(__name__)

PERSONA = "persona_narrative"
TASK = "structured_task"
VARIANTS = (PERSONA, TASK)
FORCED_SUGGESTION = ("Say something new that moves the conversation forward instead of "
                     "repeating an earlier utterance, or end the conversation.")

# failures a single pipeline may absorb without aborting the turn
RECOVERABLE = (BackendError, StoreError, ValueError, KeyError)


class RegenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class RevisionContext:
    info: PromptInfo
    candidate: str
    retained: tuple[DiagnosisComment, ...]
    reasons: tuple[str, ...]
    suggestion: str
    round: int


def filter_comments(comments: Sequence[DiagnosisComment], cfg: SdrConfig) -> list[DiagnosisComment]:
    """Keep scored comments at or above ``theta_regen`` and every disagreement."""
    kept = []
    for c in comments:
        if c.score is not None and c.score >= cfg.theta_regen or c.agreed is False:
            kept.append(c)
    return kept


def integrate_comments(retained: Sequence[DiagnosisComment], cand: Candidate,
                       dialogue_context: str, chat) -> str:
    if not retained:
        raise ValueError("nothing to integrate")
    reasons = [c.reason for c in retained]
    listing = "\n".join(f"- ({c.pipeline}) {c.reason}" for c in retained)
    try:
        text = chat.chat(ChatRequest(integration_prompt(cand.speaker, cand.text,
                                                        dialogue_context, listing)))
        if text.strip():
            return text.strip()
    except BackendError as exc:
        log.warning("comment integration failed (%s); using raw reasons", exc)
    return "\n".join(reasons)


def pick_variant(rng: random.Random) -> str:
    return rng.choice(VARIANTS)


def render_variant(info: PromptInfo, variant: str, revision: Revision | None = None) -> str:
    if variant == PERSONA:
        return persona_prompt(info, revision)
    if variant == TASK:
        return task_prompt(info, revision)
    raise ValueError(f"unknown prompt variant {variant!r}")


def parse_turn(raw: dict, speaker: str) -> tuple[str, bool]:
    """Read ``Response`` and the ends-conversation flag from a generation reply."""
    text = raw.get("Response", raw.get("response"))
    if text is None:
        text = ""
    if not isinstance(text, str):
        raise JsonParseError(f"Response is not a string: {text!r}")
    ends: Any = raw.get(ENDS_KEY.format(speaker=speaker))
    if ends is None:
        for k, v in raw.items():
            if k.lower().startswith("the conversation ends") or k.lower() == "ends":
                ends = v
                break
    if isinstance(ends, str):
        ends = ends.strip().lower() == "true"
    return text.strip(), bool(ends)


def regenerate(rev: RevisionContext, variant: str, chat, cfg: SdrConfig) -> tuple[str, bool]:
    prompt = render_variant(rev.info, variant, Revision(rev.candidate, rev.reasons, rev.suggestion))
    req = ChatRequest(prompt, temperature=cfg.gen_temperature, expect_json=True,
                      frequency_penalty=cfg.frequency_penalty,
                      presence_penalty=cfg.presence_penalty)
    try:
        raw = chat_json(chat, req)
    except JsonParseError as exc:
        raise RegenerationError(str(exc)) from exc
    return parse_turn(raw, rev.info.speaker)


@dataclass
class TurnContext:
    """Everything the SDR loop needs for one candidate turn."""

    view: ScopedStore
    speaker: str
    listener: str
    info: PromptInfo
    roster: Roster
    services: Services
    extractor: TripletExtractor
    variant_policy: str = "mixed"


@dataclass
class RoundTrace:
    round: int
    candidate: str
    reports: list[ScreeningReport] = field(default_factory=list)
    comments: list[DiagnosisComment] = field(default_factory=list)
    retained: list[DiagnosisComment] = field(default_factory=list)
    forced: bool = False
    suggestion: str | None = None
    variant: str | None = None
    revision: str | None = None
    ends: bool = False
    failed: bool = False
    degraded: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "round": self.round,
            "candidate": self.candidate,
            "reports": [r.to_json() for r in self.reports],
            "comments": [c.to_json() for c in self.comments],
            "retained": [c.to_json() for c in self.retained],
            "forced": self.forced,
            "suggestion": self.suggestion,
            "variant": self.variant,
            "revision": self.revision,
            "ends": self.ends,
            "failed": self.failed,
            "degraded": self.degraded,
        }


@dataclass
class SdrTrace:
    speaker: str
    initial: str
    rounds: list[RoundTrace] = field(default_factory=list)
    final: str = ""
    ends: bool = False

    @property
    def revisions(self) -> int:
        return sum(1 for r in self.rounds if r.revision is not None)

    @property
    def degradations(self) -> int:
        return sum(len(r.degraded) for r in self.rounds)

    def to_json(self) -> dict:
        return {
            "speaker": self.speaker,
            "initial": self.initial,
            "final": self.final,
            "ends": self.ends,
            "revisions": self.revisions,
            "rounds": [r.to_json() for r in self.rounds],
        }


def _guard(rt: RoundTrace, pipeline: str, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except RECOVERABLE as exc:
        log.warning("%s degraded to clean: %s", pipeline, exc)
        rt.degraded.append(f"{pipeline}: {exc}")
        return None


def screen_all(cand: Candidate, ctx: TurnContext, cfg: SdrConfig, rt: RoundTrace) -> list[ScreeningReport]:
    """Run the three screenings; a force-regenerate verdict short-circuits the rest."""
    svc = ctx.services
    rep = _guard(rt, "repetition", screen_repetition, cand, ctx.view, cfg) or clean("repetition", "degraded")
    if rep.outcome == "force_regenerate":
        return [rep]
    inc = _guard(rt, "inconsistency", screen_inconsistency, cand, (ctx.speaker, ctx.listener),
                 ctx.view, ctx.extractor, svc.nli, svc.chat, cfg) or clean("inconsistency", "degraded")
    mentions = detect_third_party_mentions(cand.text, ctx.speaker, ctx.listener, ctx.roster.names)
    hal = _guard(rt, "hallucination", screen_hallucination, cand, mentions, ctx.view, svc.chat,
                 cfg) or clean("hallucination", "degraded")
    return [rep, inc, hal]


def diagnose_all(cand: Candidate, reports: Sequence[ScreeningReport], ctx: TurnContext,
                 cfg: SdrConfig, rt: RoundTrace) -> list[DiagnosisComment]:
    svc = ctx.services
    speaker = ctx.roster.get(ctx.speaker)
    background = speaker.background if speaker else ""
    current = ctx.view.current()
    comments = []
    for r in reports:
        c = None
        if r.outcome == "evidence":
            evidence = [ctx.view.get(did) for did in r.evidence]
            c = _guard(rt, f"{r.pipeline} diagnosis", diagnose_with_evidence, r.pipeline, cand,
                       evidence, current, background, svc.chat, cfg)
        elif r.outcome == "flagged":
            last = ctx.view.last_dialogue_between(r.mentioned_agent, ctx.speaker)
            c = _guard(rt, "agreement diagnosis", diagnose_agreement, cand,
                       ctx.roster.get(r.mentioned_agent), last, svc.chat, cfg, ctx.view.time)
        if c is not None:
            comments.append(c)
    return comments


def sdr_loop(u_c0: str, ctx: TurnContext, cfg: SdrConfig,
             rng: random.Random, ends: bool = False) -> tuple[str, bool, SdrTrace]:
    """Screen, diagnose and revise a candidate for at most ``max_rounds`` rounds.

    ``ends`` is the end-of-conversation flag that came with ``u_c0``; it
    survives unless a revision replaces the candidate. Returns the text to
    commit (empty when the speaker withdrew the turn), whether the speaker
    ends the conversation, and the full trace.
    """
    trace = SdrTrace(ctx.speaker, u_c0)
    current = u_c0
    for r in range(1, cfg.max_rounds + 1):
        rt = RoundTrace(r, current)
        trace.rounds.append(rt)
        cand = Candidate(current, ctx.speaker, ctx.listener)
        rt.reports = screen_all(cand, ctx, cfg, rt)
        if rt.reports[0].outcome == "force_regenerate":
            hit = rt.reports[0].trigger
            rt.forced = True
            reasons = ((f"The response nearly repeats an earlier utterance by {hit.utterance.speaker}: "
                        f'"{hit.utterance.text}"'),)
            rt.suggestion = FORCED_SUGGESTION
        else:
            rt.comments = diagnose_all(cand, rt.reports, ctx, cfg, rt)
            rt.retained = filter_comments(rt.comments, cfg)
            if not rt.retained:
                break
            reasons = tuple(c.reason for c in rt.retained)
            rt.suggestion = integrate_comments(rt.retained, cand, ctx.view.render_current(),
                                               ctx.services.chat)
        rt.variant = (pick_variant(rng) if ctx.variant_policy == "mixed"
                      else {"persona": PERSONA, "task": TASK}.get(ctx.variant_policy, ctx.variant_policy))
        rev = RevisionContext(ctx.info, current, tuple(rt.retained), reasons, rt.suggestion, r)
        try:
            text, rt.ends = regenerate(rev, rt.variant, ctx.services.chat, cfg)
        except (RegenerationError, BackendError) as exc:
            log.warning("regeneration round %d failed: %s", r, exc)
            rt.failed = True
            continue
        rt.revision = text
        current, ends = text, rt.ends
        if not text:
            ends = True
            break
    trace.final, trace.ends = current, ends
    return current, ends, trace


def chat_call_bound(cfg: SdrConfig, mentions: int, rounds: int | None = None) -> int:
    """Upper bound on chat calls one candidate may cost inside :func:`sdr_loop`.

    Excludes one-off triplet extraction of prior dialogues (cached) and JSON
    repair re-prompts.
    """
    rounds = cfg.max_rounds if rounds is None else rounds
    return rounds * (2 + 3 * cfg.n_diag + mentions + 1 + 1)
