"""Dialogue regeneration over a corpus schedule: context assembly, turn-taking, run modes."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import tempfile
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import SdrConfig
from .gateway import BackendError, ChatRequest, Services, chat_json
from .profiles import ProfileError, Roster
from .prompts import PromptInfo, best_of_prompt, origin_prompt, render_evidence
from .regeneration import (
    SdrTrace,
    TurnContext,
    parse_turn,
    render_variant,
    sdr_loop,
)
from .screening import TripletExtractor
from .store import Dialogue, DialogueStore, EmbeddingCache, Participant, ScopedStore, StoreError

log = logging.getLogger(__name__)

MODES = ("origin", "baseline_best_of_3", "sdr")
MODE_ALIASES = {"baseline": "baseline_best_of_3"}
VARIANT_POLICIES = ("mixed", "persona", "task")
PROMPT_INFO_CHOICES = ("all", "-background", "-memory", "-history", "-status")


class PreflightError(ValueError):
    """Inputs rejected before any model call."""


@dataclass(frozen=True)
class PromptFlags:
    background: bool = True
    memory: bool = True
    history: bool = True
    status: bool = True

    @classmethod
    def parse(cls, choice: str) -> PromptFlags:
        if choice not in PROMPT_INFO_CHOICES:
            raise ValueError(f"prompt info must be one of {PROMPT_INFO_CHOICES}")
        if choice == "all":
            return cls()
        return cls(**{choice[1:]: False})

    def label(self) -> str:
        off = [k for k, v in self.__dict__.items() if not v]
        return "all" if not off else ",".join(f"-{k}" for k in off)


DEFAULT_FLAGS = PromptFlags()


@dataclass(frozen=True)
class DialogueTask:
    dialogue_id: str
    time: datetime
    agents: tuple[str, str]
    location: str
    statuses: tuple[tuple[str, str], tuple[str, str]]
    history_ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.agents[0] == self.agents[1]:
            raise ValueError("task agents must be distinct")

    @classmethod
    def from_dialogue(cls, d: Dialogue, history: Sequence[Dialogue] = ()) -> DialogueTask:
        """Task regenerating ``d``; the original first speaker opens the dialogue."""
        first = d.utterances[0].speaker if d.utterances else d.names[0]
        agents = (first, d.partner_of(first))
        hist = tuple(h.dialogue_id for h in sorted(history, key=lambda h: h.time)
                     if set(h.names) == set(agents) and h.time < d.time)
        statuses = ((agents[0], d.status_of(agents[0])), (agents[1], d.status_of(agents[1])))
        return cls(d.dialogue_id, d.time, agents, d.location, statuses, hist)  # type: ignore[arg-type]

    def participants(self) -> tuple[Participant, ...]:
        return tuple(Participant(n, s) for n, s in self.statuses)


def build_prompt_info(task: DialogueTask, speaker: str, roster: Roster, view: ScopedStore,
                      flags: PromptFlags, cfg: SdrConfig) -> PromptInfo:
    profile = roster.get(speaker)
    if profile is None:
        raise ProfileError(f"no profile for agent {speaker!r}")
    listener = task.agents[1] if speaker == task.agents[0] else task.agents[0]
    history = None
    if flags.history and task.history_ids:
        dialogues = []
        for did in task.history_ids:
            try:
                dialogues.append(view.base.get(did))
            except KeyError:
                continue
        history = render_evidence(dialogues) or None
    memories = None
    if flags.memory:
        memories = tuple(profile.memory_texts(cfg.max_memories, task.time)) or None
    return PromptInfo(
        speaker=speaker,
        listener=listener,
        dialogue=view.render_current(),
        background=profile.background if flags.background else None,
        memories=memories,
        history=history,
        time=task.time.isoformat(sep=" "),
        location=task.location or None,
        statuses=task.statuses if flags.status else None,
    )


def assemble_context(task: DialogueTask, speaker: str, variant: str, flags: PromptFlags,
                     roster: Roster, view: ScopedStore, cfg: SdrConfig) -> str:
    """Generation prompt for ``speaker``'s next turn.

    ``variant`` is ``"origin"`` or one of the two revision-prompt styles.
    """
    info = build_prompt_info(task, speaker, roster, view, flags, cfg)
    if variant == "origin":
        return origin_prompt(info)
    return render_variant(info, variant)


def _gen_request(prompt: str, cfg: SdrConfig, seed: int | None = None) -> ChatRequest:
    return ChatRequest(prompt, temperature=cfg.gen_temperature, expect_json=True,
                       frequency_penalty=cfg.frequency_penalty,
                       presence_penalty=cfg.presence_penalty, seed=seed)


def _judge_index(reply: str, n: int) -> int | None:
    m = re.search(r"\d+", reply)
    if not m:
        return None
    idx = int(m.group(0))
    return idx if 1 <= idx <= n else None


def generate_candidate(info: PromptInfo, mode: str, chat, cfg: SdrConfig) -> tuple[str, bool]:
    """One candidate turn. Baseline mode samples three and asks the model to pick."""
    mode = MODE_ALIASES.get(mode, mode)
    prompt = origin_prompt(info)
    if mode in ("origin", "sdr"):
        return parse_turn(chat_json(chat, _gen_request(prompt, cfg)), info.speaker)
    if mode != "baseline_best_of_3":
        raise ValueError(f"unknown mode {mode!r}")
    options = [parse_turn(chat_json(chat, _gen_request(prompt, cfg, seed=i)), info.speaker)
               for i in range(3)]
    reply = chat.chat(ChatRequest(best_of_prompt(info.speaker, info.dialogue,
                                                 [t or "(ends the conversation)" for t, _ in options])))
    idx = _judge_index(reply, 3)
    if idx is None:
        log.warning("best-of-3 judge replied %r; using candidate 1", reply[:40])
        idx = 1
    return options[idx - 1]


@dataclass
class DialogueResult:
    dialogue: Dialogue
    mode: str
    turns: list[dict] = field(default_factory=list)
    failed: bool = False
    error: str | None = None

    @property
    def single_utterance(self) -> bool:
        return len(self.dialogue.utterances) < 2

    @property
    def traces(self) -> list[SdrTrace]:
        return [t["sdr"] for t in self.turns if t.get("sdr") is not None]

    def trace_json(self) -> dict:
        return {
            "dialogue_id": self.dialogue.dialogue_id,
            "mode": self.mode,
            "failed": self.failed,
            "error": self.error,
            "single_utterance": self.single_utterance,
            "turns": [
                {**{k: v for k, v in t.items() if k != "sdr"},
                 "sdr": t["sdr"].to_json() if t.get("sdr") is not None else None}
                for t in self.turns
            ],
        }


def run_dialogue(task: DialogueTask, mode: str, store: DialogueStore, roster: Roster,
                 services: Services, cfg: SdrConfig, rng: random.Random, *,
                 flags: PromptFlags = DEFAULT_FLAGS, variant_policy: str = "mixed",
                 extractor: TripletExtractor | None = None) -> DialogueResult:
    """Regenerate one dialogue turn by turn.

    The first agent opens and speakers alternate until a turn comes back empty
    or flagged as the last one, or ``max_turns`` turns have been committed.
    """
    mode = MODE_ALIASES.get(mode, mode)
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    view = store.scoped(task.dialogue_id, task.time, task.participants(), task.location)
    extractor = extractor or TripletExtractor(services.chat)
    result = DialogueResult(view.current(), mode)
    for turn in range(cfg.max_turns):
        speaker = task.agents[turn % 2]
        listener = task.agents[(turn + 1) % 2]
        try:
            info = build_prompt_info(task, speaker, roster, view, flags, cfg)
            text, ends = generate_candidate(info, mode, services.chat, cfg)
            record: dict = {"turn": turn, "speaker": speaker, "initial": text}
            if mode == "sdr" and text:
                ctx = TurnContext(view, speaker, listener, info, roster, services, extractor,
                                  variant_policy)
                text, ends, trace = sdr_loop(text, ctx, cfg, rng, ends)
                record["sdr"] = trace
            record.update(text=text, ends=ends)
            result.turns.append(record)
            if not text:
                break
            view.append(speaker, text)
        except (BackendError, ProfileError, StoreError) as exc:
            log.error("dialogue %s failed at turn %d: %s", task.dialogue_id, turn, exc)
            result.failed, result.error = True, f"turn {turn}: {exc}"
            break
        if ends:
            break
    result.dialogue = view.current()
    if result.single_utterance:
        log.info("dialogue %s has %d utterance(s); flagged for exclusion",
                 task.dialogue_id, len(result.dialogue.utterances))
    return result


def dialogue_seed(run_seed: int, dialogue_id: str) -> int:
    h = hashlib.sha256(f"{run_seed}\x00{dialogue_id}".encode()).digest()
    return int.from_bytes(h[:8], "big")


def preflight(corpus: Sequence[Dialogue], roster: Roster) -> None:
    problems = []
    for d in corpus:
        for name in d.names:
            if name not in roster:
                problems.append(f"dialogue {d.dialogue_id}: no profile for agent {name!r}")
    if problems:
        raise PreflightError("\n".join(problems))


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


@dataclass
class RunResult:
    out_dir: Path
    results: list[DialogueResult]
    manifest: dict


def run_corpus(corpus: Sequence[Dialogue], roster: Roster, mode: str, cfg: SdrConfig,
               seed: int, services: Services, out_dir: str | os.PathLike, *,
               parallelism: int = 1, flags: PromptFlags = DEFAULT_FLAGS,
               variant_policy: str = "mixed", cache: EmbeddingCache | None = None,
               store_hook=None) -> RunResult:
    """Regenerate every corpus dialogue as a standalone example.

    Outputs ``regenerated.jsonl``, ``traces.jsonl`` and ``manifest.json`` in
    ``out_dir``. Results are independent of ``parallelism``: each dialogue
    draws randomness and mock queues from a seed derived from the run seed
    and its id, and outputs are written in corpus order.
    """
    mode = MODE_ALIASES.get(mode, mode)
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if variant_policy not in VARIANT_POLICIES:
        raise ValueError(f"variant policy must be one of {VARIANT_POLICIES}")
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    preflight(corpus, roster)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()

    tasks = [DialogueTask.from_dialogue(d, corpus) for d in corpus]
    triplet_cache: dict = {}
    store = DialogueStore(services.embedder, cache, on_read=store_hook)

    def one(task: DialogueTask) -> DialogueResult:
        s = dialogue_seed(seed, task.dialogue_id)
        svc = services.fork(s)
        ex = TripletExtractor(svc.chat, triplet_cache)
        return run_dialogue(task, mode, store, roster, svc, cfg, random.Random(s), flags=flags,
                            variant_policy=variant_policy, extractor=ex)

    if cfg.history_source == "original":
        for d in corpus:
            store.insert_dialogue(d)
        if parallelism == 1:
            results = [one(t) for t in tasks]
        else:
            with ThreadPoolExecutor(max_workers=parallelism) as pool:
                results = list(pool.map(one, tasks))
    else:
        if parallelism > 1:
            log.warning("history_source=regenerated runs sequentially; ignoring parallelism")
        by_time = sorted(range(len(tasks)), key=lambda i: (tasks[i].time, i))
        results_by_index: dict[int, DialogueResult] = {}
        for i in by_time:
            res = one(tasks[i])
            results_by_index[i] = res
            if not res.single_utterance:
                store.insert_dialogue(res.dialogue)
        results = [results_by_index[i] for i in range(len(tasks))]

    _atomic_write(out / "regenerated.jsonl",
                  "".join(json.dumps(r.dialogue.to_json(), ensure_ascii=False) + "\n" for r in results))
    _atomic_write(out / "traces.jsonl",
                  "".join(json.dumps(r.trace_json(), ensure_ascii=False) + "\n" for r in results))

    counts = services.counter.snapshot()
    manifest = {
        "version": __version__,
        "mode": mode,
        "seed": seed,
        "parallelism": parallelism,
        "variant": variant_policy,
        "prompt_info": flags.label(),
        "config": cfg.to_dict(),
        "backend": services.identity,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "counts": {
            "dialogues": len(results),
            "failed": sum(r.failed for r in results),
            "single_utterance": sum(r.single_utterance for r in results),
            "utterances": sum(len(r.dialogue.utterances) for r in results),
            "chat_calls": counts.get("chat", 0),
            "chat_repairs": counts.get("chat_repair", 0),
            "embed_calls": counts.get("embed", 0),
            "nli_calls": counts.get("nli", 0),
            "regenerations": sum(t.revisions for r in results for t in r.traces),
            "degradations": sum(t.degradations for r in results for t in r.traces),
            "chat_by_tag": {k.split(":", 1)[1]: v for k, v in counts.items()
                            if k.startswith("chat:")},
        },
    }
    _atomic_write(out / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    return RunResult(out, results, manifest)

