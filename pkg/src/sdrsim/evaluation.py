"""Corpus metrics: diversity, LLM judging, error-rate trends, keyword spread, correlations."""

from __future__ import annotations

import itertools
import logging
import math
from collections import Counter, defaultdict
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field
from datetime import datetime
from typing import Protocol

import numpy as np
from scipy import stats

from .config import SdrConfig
from .gateway import ChatRequest, JsonParseError, chat_json, tokenize
from .prompts import judge_prompt, render_evidence
from .screening import Candidate, TripletExtractor, parse_score, screen_inconsistency
from .store import Dialogue, DialogueStore

log = logging.getLogger(__name__)

STOPWORDS = frozenset("""
a about above after again against all also am an and any are as at be because been before
being below between both but by can could did do does doing down during each few for from
further had has have having he her here hers herself him himself his how i if in into is it
its itself just let lets me more most my myself no nor not now of off on once only or other
our ours ourselves out over own really same she should so some such than that thats the
their theirs them themselves then there these they this those through to too under until up
us very was we well were what when where which while who whom why will with would yeah yes
you your yours yourself yourselves oh im ive id ill youre dont its s t ll re ve d m
""".split())


# -- diversity ---------------------------------------------------------------------


def distinct_n(summaries: Sequence[str], n: int) -> float:
    """Unique over total n-grams, pooled across summaries (n-grams never span two)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    total, unique = 0, set()
    for s in summaries:
        toks = tokenize(s)
        for i in range(len(toks) - n + 1):
            unique.add(tuple(toks[i:i + n]))
            total += 1
    if total == 0:
        raise ValueError(f"no {n}-grams in the given summaries")
    return len(unique) / total


def weighted_embedding(texts_and_vectors: Sequence[tuple[str, np.ndarray]]) -> np.ndarray:
    """Token-count-weighted mean of utterance embeddings, renormalised."""
    weights = np.array([len(tokenize(t)) for t, _ in texts_and_vectors], dtype=float)
    if weights.sum() == 0:
        raise ValueError("no tokens to weight")
    mat = np.vstack([v for _, v in texts_and_vectors])
    vec = weights @ mat / weights.sum()
    norm = np.linalg.norm(vec)
    if norm == 0:
        raise ValueError("degenerate dialogue embedding")
    return vec / norm


def dialogue_embedding(d: Dialogue, embedder, speaker: str | None = None) -> np.ndarray | None:
    utts = [u for u in d.utterances if speaker is None or u.speaker == speaker]
    if not utts:
        return None
    return weighted_embedding([(u.text, _unit(embedder.embed(u.text))) for u in utts])


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def semantic_distance_from_embeddings(vectors: Sequence[np.ndarray]) -> float:
    if len(vectors) < 2:
        raise ValueError("semantic distance needs at least 2 dialogues")
    mat = np.vstack([_unit(v) for v in vectors])
    sims = mat @ mat.T
    iu = np.triu_indices(len(vectors), k=1)
    return float(1.0 - sims[iu].mean())


def semantic_distance(dialogues: Sequence[Dialogue], embedder) -> float:
    """One minus the mean pairwise cosine between dialogue embeddings."""
    if len(dialogues) < 2:
        raise ValueError("semantic distance needs at least 2 dialogues")
    return semantic_distance_from_embeddings([dialogue_embedding(d, embedder) for d in dialogues])


@dataclass
class AgentDiversity:
    overall: float
    per_agent: dict[str, float]
    excluded: list[str]


def agent_diversity_from_embeddings(
        by_agent: Mapping[str, Mapping[str, Sequence[np.ndarray]]]) -> AgentDiversity:
    """``by_agent[agent][partner]`` lists the agent's dialogue embeddings with that partner."""
    per_agent: dict[str, float] = {}
    excluded: list[str] = []
    for agent in sorted(by_agent):
        partners = {p: np.vstack([_unit(v) for v in vs])
                    for p, vs in by_agent[agent].items() if len(vs)}
        if len(partners) < 2:
            excluded.append(agent)
            continue
        sims = [float((partners[p] @ partners[q].T).mean())
                for p, q in itertools.combinations(sorted(partners), 2)]
        per_agent[agent] = 1.0 - sum(sims) / len(sims)
    if not per_agent:
        raise ValueError("no agent has dialogues with at least 2 partners")
    overall = sum(per_agent.values()) / len(per_agent)
    return AgentDiversity(overall, per_agent, excluded)


def agent_diversity(corpus: Sequence[Dialogue], embedder) -> AgentDiversity:
    """Per agent, one minus the mean cross-partner similarity of its own speech."""
    by_agent: dict[str, dict[str, list[np.ndarray]]] = defaultdict(lambda: defaultdict(list))
    for d in corpus:
        for name in d.names:
            emb = dialogue_embedding(d, embedder, speaker=name)
            if emb is not None:
                by_agent[name][d.partner_of(name)].append(emb)
    return agent_diversity_from_embeddings(by_agent)


# -- judging -----------------------------------------------------------------------


@dataclass(frozen=True)
class JudgeScore:
    dialogue_id: str
    factualness: int
    consistency: int
    reasons: dict[str, str] = field(default_factory=dict)
    evidence: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for v in (self.factualness, self.consistency):
            if not 1 <= v <= 10:
                raise ValueError("judge scores must lie on the 1-10 scale")


def _judge_field(raw: dict, name: str) -> tuple[int, str]:
    val = raw.get(name, raw.get(name.capitalize()))
    if isinstance(val, dict):
        return parse_score(val.get("score")), str(val.get("reason", ""))
    return parse_score(val), str(raw.get(f"{name}_reason", ""))


def judge_dialogue(d: Dialogue, store: DialogueStore, judge_chat, extractor: TripletExtractor,
                   nli, cfg: SdrConfig) -> JudgeScore | None:
    """Score consistency and factualness given NLI-retrieved evidence.

    Evidence comes from the inconsistency screening run with the evaluation
    thresholds over the two participants' earlier dialogues; when nothing is
    suspicious the most recent earlier dialogues stand in.
    """
    ecfg = cfg.for_evaluation()
    view = store.scoped(d.dialogue_id, d.time, d.participants, d.location)
    cand = Candidate(d.render(), d.names[0], d.names[1])
    report = screen_inconsistency(cand, d.names, view, extractor, nli, judge_chat, ecfg,
                                  candidate_triplets=extractor.for_dialogue(d))
    if report.evidence:
        evidence = [store.get(i) for i in report.evidence]
    else:
        prior = {x.dialogue_id: x for n in d.names for x in view.dialogues_involving(n)}
        evidence = sorted(prior.values(), key=lambda x: x.time)[-ecfg.k_nlig:]
    prompt = judge_prompt(render_evidence(evidence), d.render(), d.time.isoformat(sep=" "), d.names)
    try:
        raw = chat_json(judge_chat, ChatRequest(prompt, expect_json=True))
        fact, fact_reason = _judge_field(raw, "factualness")
        cons, cons_reason = _judge_field(raw, "consistency")
    except (JsonParseError, ValueError) as exc:
        log.warning("dialogue %s unscored: %s", d.dialogue_id, exc)
        return None
    return JudgeScore(d.dialogue_id, fact, cons,
                      {"factualness": fact_reason, "consistency": cons_reason},
                      tuple(x.dialogue_id for x in evidence))


# -- error rates ---------------------------------------------------------------------


def error_rate(scores: Sequence[int], threshold: int = 8) -> float:
    """Fraction of scores strictly below ``threshold``."""
    if not scores:
        raise ValueError("no scores")
    return sum(1 for s in scores if s < threshold) / len(scores)


@dataclass
class Trend:
    sizes: list[int]
    rates: list[float]
    slope: float


def percentile_trend(scores: Sequence[int], bins: int = 10, threshold: int = 8) -> Trend:
    """Error rate in ``bins`` contiguous equal-count groups of time-ordered scores.

    Remainders go to the earliest groups. ``slope`` is the least-squares slope
    of rate against bin index.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if len(scores) < bins:
        raise ValueError(f"need at least {bins} scores, got {len(scores)}")
    q, r = divmod(len(scores), bins)
    sizes = [q + 1 if i < r else q for i in range(bins)]
    rates, start = [], 0
    for size in sizes:
        rates.append(error_rate(scores[start:start + size], threshold))
        start += size
    if bins == 1:
        return Trend(sizes, rates, 0.0)
    x = np.arange(bins, dtype=float)
    y = np.asarray(rates)
    slope = float(((x - x.mean()) * (y - y.mean())).sum() / ((x - x.mean()) ** 2).sum())
    return Trend(sizes, rates, slope)


# -- keywords ------------------------------------------------------------------------


def _mentions(text: str, root: str) -> bool:
    root = root.lower()
    if not root.isalnum():
        return root in text.lower()
    return any(root in tok for tok in tokenize(text))


@dataclass
class KeywordBin:
    index: int
    start: datetime
    end: datetime
    total: int
    matching: int

    @property
    def ratio(self) -> float:
        return self.matching / self.total if self.total else 0.0


@dataclass
class FirstMention:
    keyword: str
    dialogue_id: str
    time: datetime
    first_speaker: str
    partner: str


@dataclass
class KeywordSpread:
    bins: dict[str, list[KeywordBin]]
    dialogue_counts: dict[str, int]
    first_mentions: list[FirstMention]


def time_bins(times: Sequence[datetime], bins: int) -> list[int]:
    """Equal-width time bin index per timestamp; the last bin is closed."""
    lo, hi = min(times), max(times)
    span = (hi - lo).total_seconds()
    if span == 0:
        return [0] * len(times)
    return [min(int((t - lo).total_seconds() / span * bins), bins - 1) for t in times]


def keyword_spread(corpus: Sequence[Dialogue], keywords: Sequence[str], bins: int = 10) -> KeywordSpread:
    if not corpus:
        raise ValueError("empty corpus")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    ordered = sorted(corpus, key=lambda d: (d.time, d.dialogue_id))
    idx = time_bins([d.time for d in ordered], bins)
    lo, hi = ordered[0].time, ordered[-1].time
    width = (hi - lo) / bins
    totals = Counter(idx)
    out_bins: dict[str, list[KeywordBin]] = {}
    counts: dict[str, int] = {}
    firsts: list[FirstMention] = []
    for kw in keywords:
        matching = Counter()
        for d, b in zip(ordered, idx):
            first = next((u for u in d.utterances if _mentions(u.text, kw)), None)
            if first is None:
                continue
            matching[b] += 1
            firsts.append(FirstMention(kw, d.dialogue_id, d.time, first.speaker,
                                       d.partner_of(first.speaker)))
        out_bins[kw] = [KeywordBin(i, lo + width * i, lo + width * (i + 1), totals[i], matching[i])
                        for i in range(bins)]
        counts[kw] = sum(matching.values())
    return KeywordSpread(out_bins, counts, firsts)


def tfidf_keywords(corpus: Sequence[Dialogue], top_k: int,
                   stopwords: frozenset[str] = STOPWORDS) -> list[tuple[str, float]]:
    """Terms ranked by raw-count tf times ln(N/df), summed over dialogues."""
    if len(corpus) < 2:
        raise ValueError("tf-idf needs at least 2 dialogues")
    docs = [Counter(t for u in d.utterances for t in tokenize(u.text) if t not in stopwords)
            for d in corpus]
    df = Counter(t for doc in docs for t in doc)
    n = len(docs)
    scores: dict[str, float] = defaultdict(float)
    for doc in docs:
        for term, tf in doc.items():
            scores[term] += tf * math.log(n / df[term])
    ranked = sorted(((t, s) for t, s in scores.items() if s > 0), key=lambda ts: (-ts[1], ts[0]))
    return ranked[:top_k]


# -- correlations --------------------------------------------------------------------


@dataclass
class Correlation:
    pearson: float | None
    spearman: float | None


def correlate(x: Sequence[float], y: Sequence[float]) -> Correlation:
    """Pearson r and Spearman rho (average ranks); ``None`` when undefined."""
    if len(x) != len(y):
        raise ValueError("paired observations must have equal length")
    if len(x) < 3:
        raise ValueError("need at least 3 paired observations")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return Correlation(None, None)
    return Correlation(float(stats.pearsonr(x, y)[0]), float(stats.spearmanr(x, y)[0]))


def score_length_correlation(scores: Sequence[JudgeScore],
                             dialogues: Mapping[str, Dialogue]) -> dict[str, dict[str, Correlation]]:
    turns = [len(dialogues[s.dialogue_id].utterances) for s in scores]
    words = [sum(len(u.text.split()) for u in dialogues[s.dialogue_id].utterances) for s in scores]
    out = {}
    for dim in ("factualness", "consistency"):
        ys = [getattr(s, dim) for s in scores]
        out[dim] = {"turns": correlate(ys, turns), "words": correlate(ys, words)}
    return out


# -- corpus report -------------------------------------------------------------------


class FluencyScorer(Protocol):
    def perplexity(self, text: str) -> float: ...


METRICS = ("distinct", "distance", "agentdiv", "judge", "turns", "words")


@dataclass
class CorpusReport:
    dialogues: int
    distinct: dict[str, float] | None = None
    semantic_distance: float | None = None
    agent_div: float | None = None
    per_agent_div: dict[str, float] | None = None
    agent_div_excluded: list[str] | None = None
    mean_turns: float | None = None
    mean_words_per_turn: float | None = None
    factualness: dict | None = None
    consistency: dict | None = None
    judge_scores: list[dict] | None = None
    unscored: list[str] | None = None
    correlations: dict | None = None
    perplexity: float | None = None

    def to_json(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def _score_block(values: list[int], cfg: SdrConfig, bins: int) -> dict:
    block = {"mean": sum(values) / len(values),
             "error_rate": error_rate(values, cfg.error_threshold)}
    if len(values) >= bins:
        t = percentile_trend(values, bins, cfg.error_threshold)
        block["trend"] = {"sizes": t.sizes, "rates": t.rates, "slope": t.slope}
    return block


def evaluate_corpus(corpus: Sequence[Dialogue], metrics: Sequence[str], services,
                    cfg: SdrConfig, bins: int = 10,
                    fluency: FluencyScorer | None = None) -> CorpusReport:
    unknown = set(metrics) - set(METRICS)
    if unknown:
        raise ValueError(f"unknown metrics {sorted(unknown)}; valid: {', '.join(METRICS)}")
    corpus = sorted(corpus, key=lambda d: (d.time, d.dialogue_id))
    rep = CorpusReport(len(corpus))
    if "distinct" in metrics:
        summaries = [services.summarizer.summarize(d) for d in corpus]
        rep.distinct = {f"distinct_{n}": distinct_n(summaries, n) for n in (1, 2, 3)}
    if "distance" in metrics:
        rep.semantic_distance = semantic_distance(corpus, services.embedder)
    if "agentdiv" in metrics:
        ad = agent_diversity(corpus, services.embedder)
        rep.agent_div, rep.per_agent_div, rep.agent_div_excluded = ad.overall, ad.per_agent, ad.excluded
    if "turns" in metrics:
        rep.mean_turns = sum(len(d.utterances) for d in corpus) / len(corpus)
    if "words" in metrics:
        utts = [u for d in corpus for u in d.utterances]
        rep.mean_words_per_turn = sum(len(u.text.split()) for u in utts) / len(utts)
    if "judge" in metrics:
        if services.judge is None:
            raise ValueError("judge metric requires a judge backend")
        store = DialogueStore(services.embedder)
        for d in corpus:
            if len(d.utterances) >= 2:
                store.insert_dialogue(d)
        extractor = TripletExtractor(services.judge)
        scores, unscored = [], []
        for d in corpus:
            s = judge_dialogue(d, store, services.judge, extractor, services.nli, cfg)
            (scores.append(s) if s else unscored.append(d.dialogue_id))
        rep.unscored = unscored
        rep.judge_scores = [{"dialogue_id": s.dialogue_id, "factualness": s.factualness,
                             "consistency": s.consistency, "reasons": s.reasons,
                             "evidence": list(s.evidence)} for s in scores]
        if scores:
            rep.factualness = _score_block([s.factualness for s in scores], cfg, bins)
            rep.consistency = _score_block([s.consistency for s in scores], cfg, bins)
            if len(scores) >= 3:
                by_id = {d.dialogue_id: d for d in corpus}
                rep.correlations = {
                    dim: {k: asdict(c) for k, c in v.items()}
                    for dim, v in score_length_correlation(scores, by_id).items()
                }
    if fluency is not None:
        rep.perplexity = float(np.mean([fluency.perplexity(d.render()) for d in corpus]))
    return rep
