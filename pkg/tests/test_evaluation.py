import itertools
import json
import math

import numpy as np
import pytest
from scenarios import A1, A2, A3, B1, W_TRIPLETS, services, snippet_corpus, triplet_entries, world_dialogues

from sdrsim.config import SdrConfig
from sdrsim.evaluation import (
    JudgeScore,
    agent_diversity_from_embeddings,
    correlate,
    distinct_n,
    error_rate,
    evaluate_corpus,
    judge_dialogue,
    keyword_spread,
    percentile_trend,
    semantic_distance,
    semantic_distance_from_embeddings,
    tfidf_keywords,
)
from sdrsim.screening import TripletExtractor
from sdrsim.store import Dialogue, DialogueStore

CFG = SdrConfig()


# -- distinct-n ---------------------------------------------------------------------


def test_distinct_hand_counts():
    assert distinct_n(["a b a b"], 1) == 0.5
    assert distinct_n(["a b c"], 2) == 1.0
    # bigrams: (x y) (y z) | (x y) (y w) (w v) -> 4 unique of 5
    assert distinct_n(["x y z", "x y w v"], 2) == pytest.approx(4 / 5)


def test_distinct_ngrams_never_span_summaries():
    with pytest.raises(ValueError):
        distinct_n(["a", "b"], 2)
    with pytest.raises(ValueError):
        distinct_n(["a b"], 0)


def test_distinct_tokenizes_case_and_punctuation():
    assert distinct_n(["Hello, hello! HELLO"], 1) == pytest.approx(1 / 3)


# -- semantic distance / agent div ---------------------------------------------------


def test_semantic_distance_analytic():
    e = np.array([1.0, 0.0])
    assert semantic_distance_from_embeddings([e, e]) == pytest.approx(0.0)
    assert semantic_distance_from_embeddings([e, np.array([0.0, 1.0])]) == pytest.approx(1.0)
    diag = np.array([1.0, 1.0]) / math.sqrt(2)
    assert semantic_distance_from_embeddings([e, diag]) == pytest.approx(1 - 1 / math.sqrt(2))
    with pytest.raises(ValueError):
        semantic_distance_from_embeddings([e])


def test_semantic_distance_on_dialogues_identical_is_zero():
    d1 = Dialogue.build("a", "2024-01-01T00:00:00", "x", ["Ann Lee", "Bo Chan"],
                        [("Ann Lee", "red apples"), ("Bo Chan", "green pears")])
    d2 = Dialogue.build("b", "2024-01-02T00:00:00", "x", ["Ann Lee", "Bo Chan"],
                        [("Ann Lee", "red apples"), ("Bo Chan", "green pears")])
    assert semantic_distance([d1, d2], services().embedder) == pytest.approx(0.0, abs=1e-12)


def test_agent_div_identical_and_orthogonal():
    e1, e2 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    same = agent_diversity_from_embeddings({"A": {"p": [e1], "q": [e1]}})
    assert same.per_agent["A"] == pytest.approx(0.0)
    orth = agent_diversity_from_embeddings({"A": {"p": [e1], "q": [e2]}})
    assert orth.per_agent["A"] == pytest.approx(1.0)


def test_agent_div_excludes_single_partner_agents():
    e1 = np.array([1.0, 0.0])
    ad = agent_diversity_from_embeddings({"A": {"p": [e1], "q": [e1]}, "B": {"p": [e1]}})
    assert ad.excluded == ["B"] and set(ad.per_agent) == {"A"}
    with pytest.raises(ValueError):
        agent_diversity_from_embeddings({"B": {"p": [e1]}})


# -- judge --------------------------------------------------------------------------

EVAL_TEXT = "Ben, I moved to Denver last month and love it there already."


def _judge_setup(reply, contradiction=0.995):
    d = Dialogue.build("cur", "2024-03-01T12:00:00", "town", ["Ava Reed", "Ben Cole"],
                       [("Ava Reed", EVAL_TEXT), ("Ben Cole", "Denver sounds great.")])
    script = triplet_entries(W_TRIPLETS, {"r1": A1, "r2": B1, "r3": A2, "r4": A3})
    script += [{"marker": r"^\[TRIPLETS-DIALOGUE\].*moved to Denver",
                "responses": [json.dumps([["Ava Reed", "lives in", "Denver"]])]},
               {"marker": r"^\[NLIG-SELECT\]", "responses": ['{"dialogue_ids": ["r1"]}']},
               {"marker": r"^\[JUDGE-EVAL\]", "responses": [reply]}]
    svc = services(script, nli={("Ava Reed lives in Boston.", "Ava Reed lives in Denver."): contradiction})
    store = DialogueStore(svc.embedder)
    for x in [*world_dialogues(), d]:
        store.insert_dialogue(x)
    return d, store, svc


def _reply(fact, cons):
    return json.dumps({"factualness": {"score": fact, "reason": "f"},
                       "consistency": {"score": cons, "reason": "c"}})


def test_judge_scripted_scores():
    d, store, svc = _judge_setup(_reply(9, 8))
    s = judge_dialogue(d, store, svc.chat, TripletExtractor(svc.chat), svc.nli, CFG)
    assert (s.factualness, s.consistency) == (9, 8)
    assert s.evidence == ("r1",)


def test_judge_nli_only_over_participants_prior_dialogues():
    d, store, svc = _judge_setup(_reply(9, 8))
    judge_dialogue(d, store, svc.chat, TripletExtractor(svc.chat), svc.nli, CFG)
    premises = {p for p, _ in svc.nli.calls}
    assert premises <= {"Ava Reed lives in Boston.", "Dan Eliot works at the bakery.",
                        "Ava Reed has a dog named Biscuit."}
    assert "Ava Reed lives in Chicago." not in premises


def test_judge_eval_threshold_is_strict():
    # 0.99 does not clear the evaluation bar; evidence falls back to recent priors
    d, store, svc = _judge_setup(_reply(9, 8), contradiction=0.99)
    s = judge_dialogue(d, store, svc.chat, TripletExtractor(svc.chat), svc.nli, CFG)
    assert set(s.evidence) == {"r1", "r2", "r3"}
    assert svc.counter.snapshot().get("chat:NLIG-SELECT", 0) == 0


def test_judge_out_of_scale_is_unscored():
    d, store, svc = _judge_setup(_reply(11, 8))
    assert judge_dialogue(d, store, svc.chat, TripletExtractor(svc.chat), svc.nli, CFG) is None
    with pytest.raises(ValueError):
        JudgeScore("x", 0, 5)


# -- error rates --------------------------------------------------------------------


def test_error_rate_examples():
    assert error_rate([9, 8, 7, 10]) == 0.25
    assert error_rate([8] * 5) == 0.0
    assert error_rate([1] * 5) == 1.0
    with pytest.raises(ValueError):
        error_rate([])


def test_trend_group_sizes_and_slopes():
    t = percentile_trend([9] * 20, bins=10)
    assert t.sizes == [2] * 10 and t.slope == 0.0
    assert percentile_trend(list(range(1, 24)), bins=10).sizes == [3, 3, 3, 2, 2, 2, 2, 2, 2, 2]
    rates = percentile_trend([10 - i // 3 for i in range(30)], bins=10).rates
    assert rates == sorted(rates) and rates[0] < rates[-1]
    with pytest.raises(ValueError):
        percentile_trend([9] * 5, bins=10)


def test_trend_strictly_increasing_error_rate():
    # each bin of 4 has one more sub-threshold score than the last
    scores = []
    for b in range(5):
        scores += [5] * b + [9] * (4 - b)
    rates = percentile_trend(scores, bins=5).rates
    assert all(x < y for x, y in itertools.pairwise(rates))


# -- keywords -----------------------------------------------------------------------


def test_spread_snippets():
    s = keyword_spread(snippet_corpus(), ["collabora", "poetry", "zeppelin"], bins=2)
    assert s.dialogue_counts == {"collabora": 4, "poetry": 4, "zeppelin": 0}
    assert sum(b.matching for b in s.bins["collabora"]) == 4
    assert all(b.matching == 0 for b in s.bins["zeppelin"])
    firsts = [f for f in s.first_mentions if f.keyword == "poetry"]
    assert [f.dialogue_id for f in firsts] == ["snip1", "snip2", "snip3", "snip4"]
    assert firsts[0].first_speaker == "Carmen Ortiz"


def test_tfidf_distinctive_term_outranks_shared():
    a = Dialogue.build("a", "2024-01-01T00:00:00", "x", ["Ann Lee", "Bo Chan"],
                       [("Ann Lee", "kayak harbor"), ("Bo Chan", "harbor")])
    b = Dialogue.build("b", "2024-01-02T00:00:00", "x", ["Ann Lee", "Bo Chan"],
                       [("Ann Lee", "harbor"), ("Bo Chan", "bread")])
    ranked = tfidf_keywords([a, b], 10)
    terms = [t for t, _ in ranked]
    assert "harbor" not in terms  # in every document
    assert ranked == [("bread", pytest.approx(math.log(2))), ("kayak", pytest.approx(math.log(2)))]
    assert len(tfidf_keywords([a, b], 100)) == 2


# -- correlations -------------------------------------------------------------------


def test_correlation_examples():
    assert correlate([1, 2, 3], [2, 4, 6]).pearson == pytest.approx(1.0)
    c = correlate([1, 2, 3], [1, 4, 9])
    assert c.spearman == pytest.approx(1.0) and c.pearson < 1.0
    assert correlate([1, 1, 1], [1, 2, 3]) == correlate([1, 2, 3], [4, 4, 4])
    assert correlate([1, 1, 1], [1, 2, 3]).pearson is None


def test_correlation_hand_formula():
    x, y = [1.0, 2.0, 4.0, 5.0, 8.0], [2.0, 1.0, 5.0, 5.0, 9.0]
    mx, my = sum(x) / 5, sum(y) / 5
    r = sum((a - mx) * (b - my) for a, b in zip(x, y)) / math.sqrt(
        sum((a - mx) ** 2 for a in x) * sum((b - my) ** 2 for b in y))
    rx, ry = [1, 2, 3, 4, 5], [2, 1, 3.5, 3.5, 5]  # average ranks for the tie
    mrx, mry = 3.0, 3.0
    rho = sum((a - mrx) * (b - mry) for a, b in zip(rx, ry)) / math.sqrt(
        sum((a - mrx) ** 2 for a in rx) * sum((b - mry) ** 2 for b in ry))
    got = correlate(x, y)
    assert got.pearson == pytest.approx(r, abs=1e-12)
    assert got.spearman == pytest.approx(rho, abs=1e-12)


# -- report -------------------------------------------------------------------------


def test_report_diversity_only_has_no_judge_fields():
    svc = services()
    rep = evaluate_corpus(snippet_corpus(), ["distinct", "distance", "turns", "words"], svc, CFG)
    doc = rep.to_json()
    assert "factualness" not in doc and "judge_scores" not in doc
    assert doc["mean_turns"] == 2.0
    assert all(0 <= v <= 1 for v in doc["distinct"].values())


def test_report_rejects_unknown_metric_and_missing_judge():
    with pytest.raises(ValueError, match="agentdiv"):
        evaluate_corpus(snippet_corpus(), ["vibes"], services(), CFG)
    svc = services()
    svc.judge = None
    with pytest.raises(ValueError, match="judge"):
        evaluate_corpus(snippet_corpus(), ["judge"], svc, CFG)
