"""Multi-trial LLM adjudication of screened candidates."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

from .config import SdrConfig
from .gateway import ChatRequest, JsonParseError, chat_json
from .prompts import agreement_prompt, consistency_prompt, render_evidence, repetition_prompt
from .screening import Candidate, parse_score
from .store import Dialogue

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiagnosisComment:
    pipeline: str
    reason: str
    score: int | None = None
    agreed: bool | None = None

    def __post_init__(self) -> None:
        if not self.reason.strip():
            raise ValueError("reason must be non-empty")
        if self.pipeline == "hallucination":
            if self.agreed is None or self.score is not None:
                raise ValueError("hallucination comments carry agreed, not score")
        elif self.pipeline in ("repetition", "inconsistency"):
            if self.score is None or self.agreed is not None:
                raise ValueError(f"{self.pipeline} comments carry score, not agreed")
            if not 1 <= self.score <= 10:
                raise ValueError("score outside 1-10")
        else:
            raise ValueError(f"unknown pipeline {self.pipeline!r}")

    def to_json(self) -> dict:
        out = {"pipeline": self.pipeline, "reason": self.reason}
        if self.score is not None:
            out["score"] = self.score
        if self.agreed is not None:
            out["agreed"] = self.agreed
        return out


def select_trial(comments: Sequence[DiagnosisComment]) -> DiagnosisComment:
    """Highest score wins; ties go to the longer reason, then the earliest."""
    if not comments:
        raise ValueError("no comments to select from")
    if len({c.pipeline for c in comments}) != 1:
        raise ValueError("comments must share one pipeline")
    best = comments[0]
    for c in comments[1:]:
        if _severity(c) > _severity(best) or (
                _severity(c) == _severity(best) and len(c.reason) > len(best.reason)):
            best = c
    return best


def _severity(c: DiagnosisComment) -> int:
    # disagreement is the issue-positive outcome for the agreement check
    if c.score is not None:
        return c.score
    return 1 if c.agreed is False else 0


def _parse_scored(pipeline: str, raw: dict) -> DiagnosisComment:
    reason = raw.get("reason")
    if "score" in raw:
        score = parse_score(raw["score"])
    elif "Contradiction?" in raw:
        # boolean verdict form of the consistency check
        flag = _parse_bool(raw["Contradiction?"])
        score = 10 if flag else 1
        reason = reason or raw.get("Details")
    else:
        raise ValueError("no score in diagnosis output")
    if not isinstance(reason, str) or not reason.strip():
        raise ValueError("missing reason")
    return DiagnosisComment(pipeline, reason.strip(), score=score)


def _parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.strip().lower() in ("true", "false"):
        return value.strip().lower() == "true"
    raise ValueError(f"not a boolean: {value!r}")


def _run_trials(prompt: str, n: int, parse, chat, temperature: float) -> list[DiagnosisComment]:
    comments = []
    for trial in range(n):
        req = ChatRequest(prompt, temperature=temperature, expect_json=True, seed=trial)
        try:
            comments.append(parse(chat_json(chat, req)))
        except (JsonParseError, ValueError) as exc:
            log.warning("diagnosis trial %d unusable: %s", trial, exc)
    return comments


def diagnose_with_evidence(pipeline: str, cand: Candidate, evidence: Sequence[Dialogue],
                           current: Dialogue, background: str, chat,
                           cfg: SdrConfig) -> DiagnosisComment | None:
    """Run ``n_diag`` trials of the pipeline's check; ``None`` means treat as clean."""
    if pipeline not in ("repetition", "inconsistency"):
        raise ValueError(f"evidence diagnosis does not apply to {pipeline!r}")
    if not evidence:
        raise ValueError("evidence must be non-empty")
    ev = render_evidence(evidence)
    if pipeline == "repetition":
        prompt = repetition_prompt(cand.speaker, background, ev, cand.text)
    else:
        prompt = consistency_prompt(cand.speaker, cand.listener, background, ev,
                                    current.time.isoformat(sep=" "), current.render(), cand.text)
    comments = _run_trials(prompt, cfg.n_diag, lambda raw: _parse_scored(pipeline, raw),
                           chat, cfg.diag_temperature)
    if not comments:
        log.warning("all %d %s diagnosis trials failed; treating as clean", cfg.n_diag, pipeline)
        return None
    return select_trial(comments)


def _parse_agreement(raw: dict) -> DiagnosisComment:
    reason = raw.get("reason")
    if not isinstance(reason, str) or not reason.strip():
        raise ValueError("missing reason")
    return DiagnosisComment("hallucination", reason.strip(), agreed=_parse_bool(raw.get("agreed")))


def diagnose_agreement(cand: Candidate, mentioned, last_dialogue: Dialogue | None, chat,
                       cfg: SdrConfig, before=None) -> DiagnosisComment | None:
    """Ask whether the mentioned agent would agree with the candidate.

    ``mentioned`` is an agent profile (``name``, ``background``, ``memories``).
    """
    if mentioned is None:
        log.warning("mentioned agent unknown; agreement check skipped")
        return None
    memories = "\n".join(f"- {m}" for m in mentioned.memory_texts(cfg.max_memories, before))
    last = render_evidence([last_dialogue]) if last_dialogue is not None else ""
    prompt = agreement_prompt(mentioned.name, cand.speaker, mentioned.background, memories,
                              last, cand.text)
    comments = _run_trials(prompt, cfg.n_diag, _parse_agreement, chat, cfg.diag_temperature)
    if not comments:
        log.warning("all agreement trials failed for %s; treating as clean", mentioned.name)
        return None
    return select_trial(comments)

