"""Model backends: chat, embedding, NLI and summarization.

Every capability has a deterministic mock (for tests and demos) and an HTTP
implementation speaking the common hosted chat-completion/embedding shapes.
Prompts start with a ``[TAG]`` line; mocks route on it and the shared
:class:`CallCounter` tallies calls per tag.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol, runtime_checkable

import httpx
import numpy as np

log = logging.getLogger(__name__)

MOCK_DIM = 1024
JSON_REPAIR_SUFFIX = "\n\nOutput valid JSON only."
_TAG_RE = re.compile(r"^\s*\[([A-Z][A-Z0-9-]*)\]")
_TOKEN_RE = re.compile(r"[^0-9a-zA-Z]+")


class BackendError(RuntimeError):
    """Transport failure, exhausted retries or an empty completion."""


class JsonParseError(BackendError):
    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class MockScriptError(BackendError):
    pass


def prompt_tag(prompt: str) -> str:
    m = _TAG_RE.match(prompt)
    return m.group(1) if m else "UNTAGGED"


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN_RE.split(text.lower()) if t]


class CallCounter:
    """Thread-safe tallies of backend calls, keyed ``kind`` and ``kind:tag``."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._counts: Counter[str] = Counter()

    def add(self, key: str, n: int = 1) -> None:
        with self._lock:
            self._counts[key] += n

    def __getitem__(self, key: str) -> int:
        with self._lock:
            return self._counts[key]

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return dict(sorted(self._counts.items()))

    def reset(self) -> None:
        with self._lock:
            self._counts.clear()


@dataclass(frozen=True)
class ChatRequest:
    prompt: str
    temperature: float = 0.0
    max_output_tokens: int = 512
    frequency_penalty: float = 0.0
    presence_penalty: float = 0.0
    seed: int | None = None
    expect_json: bool = False
    system: str | None = None

    def __post_init__(self) -> None:
        if not self.prompt.strip():
            raise ValueError("prompt must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")


@dataclass(frozen=True)
class NliVerdict:
    entailment: float
    neutral: float
    contradiction: float

    def __post_init__(self) -> None:
        for name in ("entailment", "neutral", "contradiction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} probability {v} outside [0, 1]")
        if abs(self.entailment + self.neutral + self.contradiction - 1.0) > 1e-4:
            raise ValueError("NLI probabilities must sum to 1")


@dataclass
class BackendConfig:
    kind: str = "mock"
    endpoint_url: str | None = None
    api_key_env_var: str | None = None
    model_name: str | None = None
    timeout: float = 60.0
    max_retries: int = 3
    script_path: str | None = None
    requests_per_second: float | None = None
    retry_backoff: float = 0.5

    def __post_init__(self) -> None:
        if self.kind not in ("mock", "http"):
            raise ValueError(f"backend kind must be 'mock' or 'http', got {self.kind!r}")
        if self.kind == "http" and not (self.endpoint_url and self.model_name):
            raise ValueError("http backends require endpoint_url and model_name")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    @classmethod
    def from_dict(cls, d: dict[str, Any] | None) -> BackendConfig:
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown backend keys: {sorted(unknown)}")
        return cls(**d)

    def identity(self) -> str:
        if self.kind == "mock":
            return f"mock:{Path(self.script_path).name if self.script_path else '-'}"
        return f"http:{self.model_name}@{self.endpoint_url}"


@runtime_checkable
class ChatModel(Protocol):
    def chat(self, req: ChatRequest) -> str: ...

    def fork(self) -> ChatModel: ...


@runtime_checkable
class Embedder(Protocol):
    def embed(self, text: str) -> np.ndarray: ...


@runtime_checkable
class NliModel(Protocol):
    def nli(self, premise: str, hypothesis: str) -> NliVerdict: ...


class RateLimiter:
    """Token bucket; ``rate`` requests per second, burst of one second's worth."""

    def __init__(self, rate: float | None):
        self.rate = rate
        self.capacity = max(1.0, rate or 1.0)
        self._tokens = self.capacity
        self._last = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if not self.rate:
            return
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            time.sleep(wait)


def extract_json(text: str, expect: type = dict) -> Any:
    """Parse the first JSON value of type ``expect`` in ``text``.

    Tolerates markdown fences and prose around the payload.
    """
    text = text.strip()
    fenced = re.search(r"```(?:json)?\s*(.*?)```", text, re.DOTALL)
    candidates = [fenced.group(1).strip()] if fenced else []
    candidates.append(text)
    opener = "{" if expect is dict else "["
    decoder = json.JSONDecoder()
    for cand in candidates:
        try:
            value = json.loads(cand)
            if isinstance(value, expect):
                return value
        except json.JSONDecodeError:
            pass
        for m in re.finditer(re.escape(opener), cand):
            try:
                value, _ = decoder.raw_decode(cand[m.start():])
            except json.JSONDecodeError:
                continue
            if isinstance(value, expect):
                return value
    raise JsonParseError(f"no JSON {expect.__name__} found in completion", raw=text)


def chat_json(model: ChatModel, req: ChatRequest, expect: type = dict) -> Any:
    """Chat expecting JSON; one repair re-prompt, then :class:`JsonParseError`."""
    text = model.chat(req)
    try:
        return extract_json(text, expect)
    except JsonParseError:
        log.debug("repairing JSON for [%s]", prompt_tag(req.prompt))
    counter = getattr(model, "counter", None)
    if counter is not None:
        counter.add("chat_repair")
    repaired = ChatRequest(
        req.prompt + JSON_REPAIR_SUFFIX, req.temperature, req.max_output_tokens,
        req.frequency_penalty, req.presence_penalty, req.seed, True, req.system,
    )
    return extract_json(model.chat(repaired), expect)


# -- mocks ------------------------------------------------------------------


@dataclass
class ScriptEntry:
    marker: str
    responses: list[str]
    pattern: re.Pattern = field(init=False, repr=False)
    pick: str = "queue"

    def __post_init__(self) -> None:
        if not self.responses:
            raise MockScriptError(f"marker {self.marker!r} has no responses")
        if self.pick not in ("queue", "seeded"):
            raise MockScriptError(f"unknown pick mode {self.pick!r}")
        self.pattern = re.compile(self.marker, re.DOTALL)


def load_script(path: str | os.PathLike) -> list[ScriptEntry]:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                entries.append(ScriptEntry(rec["marker"], list(rec["responses"]),
                                           pick=rec.get("pick", "queue")))
            except (json.JSONDecodeError, KeyError, TypeError, re.error) as exc:
                raise MockScriptError(f"{path}:{lineno}: {exc}") from exc
    return entries


class MockChatModel:
    """Script-driven chat model.

    The first entry whose ``marker`` regex matches the prompt answers. Queue
    entries hand out responses in order and then repeat the last one; seeded
    entries pick by hashing (seed, prompt). A JSON repair prompt matches the
    same marker and so consumes the next queued response.
    """

    def __init__(self, script: list[ScriptEntry] | list[dict] | None = None,
                 seed: int = 0, counter: CallCounter | None = None,
                 fail_tags: set[str] | None = None):
        entries = []
        for e in script or []:
            entries.append(e if isinstance(e, ScriptEntry)
                           else ScriptEntry(e["marker"], list(e["responses"]), pick=e.get("pick", "queue")))
        self.script = entries
        self.seed = seed
        self.counter = counter or CallCounter()
        self.fail_tags = set(fail_tags or ())
        self._positions = [0] * len(entries)
        self._lock = threading.Lock()
        self.calls: list[ChatRequest] = []

    @classmethod
    def from_file(cls, path: str | os.PathLike, **kw) -> MockChatModel:
        return cls(load_script(path), **kw)

    def fork(self, seed: int | None = None) -> MockChatModel:
        """Fresh queues sharing the script and counter."""
        return MockChatModel(self.script, self.seed if seed is None else seed,
                             self.counter, self.fail_tags)

    def chat(self, req: ChatRequest) -> str:
        tag = prompt_tag(req.prompt)
        self.counter.add("chat")
        self.counter.add(f"chat:{tag}")
        with self._lock:
            self.calls.append(req)
            if tag in self.fail_tags:
                raise BackendError(f"mock transport failure for [{tag}]")
            for i, entry in enumerate(self.script):
                if entry.pattern.search(req.prompt):
                    if entry.pick == "seeded":
                        seed = req.seed if req.seed is not None else self.seed
                        h = hashlib.sha256(f"{seed}\x00{req.prompt}".encode()).digest()
                        text = entry.responses[int.from_bytes(h[:8], "big") % len(entry.responses)]
                    else:
                        pos = min(self._positions[i], len(entry.responses) - 1)
                        self._positions[i] += 1
                        text = entry.responses[pos]
                    break
            else:
                raise MockScriptError(f"no script marker matches prompt tagged [{tag}]")
        if not text.strip():
            raise BackendError(f"empty completion for [{tag}]")
        return text

    def calls_tagged(self, tag: str) -> list[ChatRequest]:
        return [c for c in self.calls if prompt_tag(c.prompt) == tag]


class MockEmbedder:
    """Hashed bag-of-words embedder.

    Tokens (lowercased, split on non-alphanumerics) are hashed with blake2b
    into ``dim`` buckets, counted and L2-normalised. ``overrides`` maps exact
    texts to fixed vectors for rigged tests.
    """

    def __init__(self, dim: int = MOCK_DIM, overrides: dict[str, Any] | None = None,
                 counter: CallCounter | None = None):
        self.dim = dim
        self.counter = counter or CallCounter()
        self.overrides = {k: self._norm(np.asarray(v, dtype=float)) for k, v in (overrides or {}).items()}

    @staticmethod
    def _norm(v: np.ndarray) -> np.ndarray:
        n = np.linalg.norm(v)
        if n == 0:
            raise ValueError("zero vector")
        return v / n

    def bucket(self, token: str) -> int:
        h = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(h, "big") % self.dim

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise ValueError("cannot embed empty text")
        self.counter.add("embed")
        if text in self.overrides:
            return self.overrides[text].copy()
        tokens = tokenize(text)
        if not tokens:
            raise ValueError(f"text has no alphanumeric tokens: {text!r}")
        vec = np.zeros(self.dim)
        for tok in tokens:
            vec[self.bucket(tok)] += 1.0
        return vec / np.linalg.norm(vec)


NLI_DEFAULT = NliVerdict(0.1, 0.8, 0.1)
NLI_IDENTITY = NliVerdict(0.9, 0.08, 0.02)


class MockNliModel:
    """Table-driven NLI scorer.

    Registered ``(premise, hypothesis)`` pairs return their verdict; identical
    texts are entailment-dominant; everything else gets a neutral default.
    """

    def __init__(self, table: dict[tuple[str, str], Any] | None = None,
                 counter: CallCounter | None = None):
        self.counter = counter or CallCounter()
        self.table: dict[tuple[str, str], NliVerdict] = {}
        self.calls: list[tuple[str, str]] = []
        self._lock = threading.Lock()
        for pair, v in (table or {}).items():
            self.register(*pair, v)

    @classmethod
    def from_file(cls, path: str | os.PathLike, **kw) -> MockNliModel:
        m = cls(**kw)
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    r = json.loads(line)
                    m.register(r["premise"], r["hypothesis"],
                               (r["entailment"], r["neutral"], r["contradiction"]))
        return m

    def register(self, premise: str, hypothesis: str, verdict: Any) -> None:
        if not isinstance(verdict, NliVerdict):
            verdict = NliVerdict(*verdict)
        self.table[(premise, hypothesis)] = verdict

    def contradicts(self, premise: str, hypothesis: str, score: float) -> None:
        """Register a pair with the given contradiction probability."""
        rest = 1.0 - score
        self.register(premise, hypothesis, NliVerdict(rest / 2, rest / 2, score))

    def nli(self, premise: str, hypothesis: str) -> NliVerdict:
        if not premise.strip() or not hypothesis.strip():
            raise ValueError("premise and hypothesis must be non-empty")
        self.counter.add("nli")
        with self._lock:
            self.calls.append((premise, hypothesis))
        hit = self.table.get((premise, hypothesis))
        if hit is not None:
            return hit
        if premise == hypothesis:
            return NLI_IDENTITY
        return NLI_DEFAULT


class MockSummarizer:
    """First clause (up to the first period) of every utterance, space-joined."""

    def __init__(self, counter: CallCounter | None = None):
        self.counter = counter or CallCounter()

    def summarize(self, d) -> str:
        if not d.utterances:
            raise ValueError("cannot summarize an empty dialogue")
        self.counter.add("summarize")
        clauses = []
        for u in d.utterances:
            head = u.text.split(".", 1)[0].strip()
            if head:
                clauses.append(head)
        if not clauses:
            raise ValueError("dialogue has no summarizable text")
        return " ".join(clauses)


SUMMARY_PROMPT = """[SUMMARIZE]
Summarize the following dialogue in one or two sentences. Focus on the topics discussed.

{dialogue}

Summary:"""


class ChatSummarizer:
    def __init__(self, chat: ChatModel, max_output_tokens: int = 120):
        self.chat = chat
        self.max_output_tokens = max_output_tokens

    def summarize(self, d) -> str:
        if not d.utterances:
            raise ValueError("cannot summarize an empty dialogue")
        text = self.chat.chat(ChatRequest(SUMMARY_PROMPT.format(dialogue=d.render()),
                                          max_output_tokens=self.max_output_tokens))
        return text.strip()


# -- HTTP ---------------------------------------------------------------------


class _HttpBase:
    def __init__(self, cfg: BackendConfig, counter: CallCounter | None = None,
                 client: httpx.Client | None = None, limiter: RateLimiter | None = None):
        if cfg.kind != "http":
            raise ValueError("HTTP backend needs kind=http")
        self.cfg = cfg
        self.counter = counter or CallCounter()
        self.client = client or httpx.Client(timeout=cfg.timeout)
        self.limiter = limiter or RateLimiter(cfg.requests_per_second)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.cfg.api_key_env_var:
            key = os.environ.get(self.cfg.api_key_env_var, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, payload: dict) -> dict:
        last: Exception | None = None
        for attempt in range(self.cfg.max_retries + 1):
            self.limiter.acquire()
            self.counter.add("http_request")
            try:
                resp = self.client.post(self.cfg.endpoint_url, json=payload, headers=self._headers())
                if resp.status_code == 429 or resp.status_code >= 500:
                    raise BackendError(f"HTTP {resp.status_code}")
                if resp.status_code >= 400:
                    # client errors will not improve on retry
                    raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                return resp.json()
            except (httpx.HTTPError, BackendError, ValueError) as exc:
                last = exc
                if isinstance(exc, BackendError) and str(exc).startswith("HTTP 4") and "429" not in str(exc):
                    break
                if attempt < self.cfg.max_retries:
                    time.sleep(self.cfg.retry_backoff * (2 ** attempt))
        raise BackendError(f"request to {self.cfg.endpoint_url} failed: {last}") from last


class HttpChatModel(_HttpBase):
    def fork(self) -> HttpChatModel:
        return self

    def chat(self, req: ChatRequest) -> str:
        messages = []
        if req.system:
            messages.append({"role": "system", "content": req.system})
        messages.append({"role": "user", "content": req.prompt})
        payload = {
            "model": self.cfg.model_name,
            "messages": messages,
            "temperature": req.temperature,
            "frequency_penalty": req.frequency_penalty,
            "presence_penalty": req.presence_penalty,
            "max_tokens": req.max_output_tokens,
        }
        self.counter.add("chat")
        self.counter.add(f"chat:{prompt_tag(req.prompt)}")
        body = self._post(payload)
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed chat response: {str(body)[:200]}") from exc
        if not text or not str(text).strip():
            raise BackendError("empty completion")
        return str(text)


class HttpEmbedder(_HttpBase):
    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise ValueError("cannot embed empty text")
        self.counter.add("embed")
        body = self._post({"model": self.cfg.model_name, "input": text})
        try:
            vec = np.asarray(body["data"][0]["embedding"], dtype=float)
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed embedding response: {str(body)[:200]}") from exc
        n = np.linalg.norm(vec)
        if n == 0:
            raise BackendError("zero embedding returned")
        return vec / n


class HttpNliModel(_HttpBase):
    """POST ``{"model", "premise", "hypothesis"}``.

    Accepts either ``{"entailment", "neutral", "contradiction"}`` or a
    classifier-style list of ``{"label", "score"}`` objects.
    """

    def nli(self, premise: str, hypothesis: str) -> NliVerdict:
        if not premise.strip() or not hypothesis.strip():
            raise ValueError("premise and hypothesis must be non-empty")
        self.counter.add("nli")
        body = self._post({"model": self.cfg.model_name, "premise": premise,
                           "hypothesis": hypothesis})
        if isinstance(body, list):
            if body and isinstance(body[0], list):
                body = body[0]
            body = {str(r["label"]).lower(): float(r["score"]) for r in body}
        try:
            probs = [float(body[k]) for k in ("entailment", "neutral", "contradiction")]
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed NLI response: {str(body)[:200]}") from exc
        total = sum(probs)
        if total <= 0:
            raise BackendError("NLI probabilities sum to zero")
        return NliVerdict(*(p / total for p in probs))


# -- assembly -------------------------------------------------------------------


@dataclass
class Services:
    """The backends one pipeline run talks to, plus their shared counter."""

    chat: Any
    embedder: Any
    nli: Any
    summarizer: Any
    counter: CallCounter
    judge: Any = None
    identity: dict[str, str] = field(default_factory=dict)

    def fork(self, seed: int | None = None) -> Services:
        chat = self.chat.fork(seed) if isinstance(self.chat, MockChatModel) else self.chat.fork()
        judge = None
        if self.judge is not None:
            judge = self.judge.fork(seed) if isinstance(self.judge, MockChatModel) else self.judge.fork()
        summarizer = self.summarizer
        if isinstance(summarizer, ChatSummarizer):
            summarizer = ChatSummarizer(chat, summarizer.max_output_tokens)
        return Services(chat, self.embedder, self.nli, summarizer, self.counter, judge,
                        self.identity)


def _resolve(base: Path | None, p: str | None) -> str | None:
    if p is None or base is None or os.path.isabs(p):
        return p
    return str(base / p)


def build_chat(cfg: BackendConfig, counter: CallCounter, base_dir: Path | None = None):
    if cfg.kind == "mock":
        path = _resolve(base_dir, cfg.script_path)
        if not path:
            raise ValueError("mock chat backend requires script_path")
        return MockChatModel.from_file(path, counter=counter)
    return HttpChatModel(cfg, counter)


def build_services(backends: dict[str, Any], base_dir: Path | None = None,
                   counter: CallCounter | None = None) -> Services:
    """Build from a ``{"chat", "embed", "nli", "summarizer", "judge"}`` mapping."""
    counter = counter or CallCounter()
    cfgs = {k: BackendConfig.from_dict(v) for k, v in backends.items() if v is not None}
    unknown = set(cfgs) - {"chat", "embed", "nli", "summarizer", "judge"}
    if unknown:
        raise ValueError(f"unknown backend roles: {sorted(unknown)}")
    chat = build_chat(cfgs["chat"], counter, base_dir) if "chat" in cfgs else None
    embed_cfg = cfgs.get("embed", BackendConfig())
    embedder = MockEmbedder(counter=counter) if embed_cfg.kind == "mock" else HttpEmbedder(embed_cfg, counter)
    nli_cfg = cfgs.get("nli", BackendConfig())
    if nli_cfg.kind == "mock":
        path = _resolve(base_dir, nli_cfg.script_path)
        nli = MockNliModel.from_file(path, counter=counter) if path else MockNliModel(counter=counter)
    else:
        nli = HttpNliModel(nli_cfg, counter)
    sum_cfg = cfgs.get("summarizer", BackendConfig())
    if sum_cfg.kind == "mock" and not sum_cfg.script_path:
        summarizer = MockSummarizer(counter)
    else:
        summarizer = ChatSummarizer(build_chat(sum_cfg, counter, base_dir))
    judge = build_chat(cfgs["judge"], counter, base_dir) if "judge" in cfgs else None
    identity = {k: c.identity() for k, c in sorted(cfgs.items())}
    return Services(chat, embedder, nli, summarizer, counter, judge, identity)


def seeded_rng(*parts: Any) -> random.Random:
    h = hashlib.sha256("\x00".join(map(str, parts)).encode()).digest()
    return random.Random(int.from_bytes(h[:8], "big"))
