"""Brute-force reference implementations, written without numpy/scipy.

Each mirrors a package metric through a different code path (explicit
loops, pure-Python arithmetic) so agreement is evidence, not tautology.
"""

from __future__ import annotations

import math
import re


def toks(text: str) -> list[str]:
    return [t for t in re.split(r"[^0-9a-z]+", text.lower()) if t]


def cos(a, b) -> float:
    dot = sum(float(x) * float(y) for x, y in zip(a, b))
    na = math.sqrt(sum(float(x) ** 2 for x in a))
    nb = math.sqrt(sum(float(y) ** 2 for y in b))
    return dot / (na * nb)


def distinct_n(summaries, n: int) -> float:
    grams = []
    for s in summaries:
        t = toks(s)
        grams.extend(" ".join(t[i:i + n]) for i in range(len(t) - n + 1))
    seen = []
    for g in grams:
        if g not in seen:
            seen.append(g)
    return len(seen) / len(grams)


def top_k(query, entries, k):
    """``entries`` are (key, vector, order); highest cosine first, ties to smaller order."""
    scored = [(cos(query, v), order, key) for key, v, order in entries]
    scored.sort(key=lambda s: (-s[0], s[1]))
    return [(key, s) for s, _, key in scored[:k]]


def weighted(texts_vectors):
    total = 0
    acc = None
    for text, v in texts_vectors:
        w = len(toks(text))
        unit = [float(x) / math.sqrt(sum(float(y) ** 2 for y in v)) for x in v]
        acc = [w * u for u in unit] if acc is None else [a + w * u for a, u in zip(acc, unit)]
        total += w
    mean = [a / total for a in acc]
    norm = math.sqrt(sum(m * m for m in mean))
    return [m / norm for m in mean]


def semantic_distance(vectors) -> float:
    sims = []
    for i in range(len(vectors)):
        for j in range(i + 1, len(vectors)):
            sims.append(cos(vectors[i], vectors[j]))
    return 1 - sum(sims) / len(sims)


def agent_div(by_agent) -> tuple[float, dict]:
    """Cross-partner cosine averaged over every (p, q, a, b) quadruple."""
    per = {}
    for agent, partners in by_agent.items():
        targets = sorted(p for p, e in partners.items() if e)
        sims, pairs = 0.0, 0
        for x in range(len(targets)):
            for y in range(x + 1, len(targets)):
                ep, eq = partners[targets[x]], partners[targets[y]]
                s = 0.0
                for a in ep:
                    for b in eq:
                        s += cos(a, b)
                sims += s / (len(ep) * len(eq))
                pairs += 1
        if pairs:
            per[agent] = 1 - sims / pairs
    return sum(per.values()) / len(per), per


def error_rate(scores, threshold=8) -> float:
    bad = 0
    for s in scores:
        if s < threshold:
            bad += 1
    return bad / len(scores)


def percentile_trend(scores, bins, threshold=8):
    n = len(scores)
    sizes = []
    for i in range(bins):
        # remainder spread over the earliest bins
        sizes.append(n // bins + (1 if i < n % bins else 0))
    rates, pos = [], 0
    for size in sizes:
        rates.append(error_rate(scores[pos:pos + size], threshold))
        pos += size
    xs = list(range(bins))
    mx, my = sum(xs) / bins, sum(rates) / bins
    den = sum((x - mx) ** 2 for x in xs)
    slope = sum((x - mx) * (r - my) for x, r in zip(xs, rates)) / den if den else 0.0
    return sizes, rates, slope


def pearson(x, y) -> float:
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def ranks(values) -> list[float]:
    """Average ranks (1-based) for ties."""
    out = [0.0] * len(values)
    for i, v in enumerate(values):
        less = sum(1 for w in values if w < v)
        equal = sum(1 for w in values if w == v)
        out[i] = less + (equal + 1) / 2
    return out


def spearman(x, y) -> float:
    return pearson(ranks(x), ranks(y))


def tfidf(docs_tokens) -> dict[str, float]:
    n = len(docs_tokens)
    scores: dict[str, float] = {}
    for doc in docs_tokens:
        for term in set(doc):
            df = sum(1 for d in docs_tokens if term in d)
            scores[term] = scores.get(term, 0.0) + doc.count(term) * math.log(n / df)
    return scores


def threshold(theta, alpha, same_speaker, same_dialogue):
    # lookup table in integer hundredths
    t, a = round(theta * 100), round(alpha * 100)
    table = {(True, False): t + a, (True, True): t - a, (False, False): t, (False, True): t}
    return table[(same_speaker, same_dialogue)] / 100
