import json

import pytest
from scenarios import MAYOR_AGREE_REASON, MAYOR_CON_REASON, MAYOR_REP_REASON, mayor_context, mayor_roster

from sdrsim.config import SdrConfig
from sdrsim.diagnosis import DiagnosisComment, diagnose_agreement, diagnose_with_evidence, select_trial
from sdrsim.gateway import MockChatModel
from sdrsim.screening import Candidate

CFG = SdrConfig()
CAND = Candidate("I actually have a friend who's running for mayor, Jennifer Moore.", "John Lin", "Yuriko Yamamoto")


def rep(score, reason):
    return DiagnosisComment("repetition", reason, score=score)


def scripted(tag, replies):
    return MockChatModel([{"marker": rf"^\[{tag}\]", "responses": [json.dumps(r) for r in replies]}])


def test_select_trial_tie_goes_to_longer_reason():
    cs = [rep(6, "a" * 40), rep(8, "b" * 90), rep(8, "c" * 30)]
    assert select_trial(cs).reason == "b" * 90


def test_select_trial_single_and_all_equal():
    only = rep(4, "x")
    assert select_trial([only]) is only
    same = [rep(7, "abc"), rep(7, "def"), rep(7, "ghi")]
    assert select_trial(same) is same[0]


def test_select_trial_rejects_mixed_or_empty():
    with pytest.raises(ValueError):
        select_trial([])
    with pytest.raises(ValueError):
        select_trial([rep(5, "r"), DiagnosisComment("inconsistency", "r", score=5)])


def test_comment_shape_invariants():
    with pytest.raises(ValueError):
        DiagnosisComment("hallucination", "r", score=8)
    with pytest.raises(ValueError):
        DiagnosisComment("repetition", "r", agreed=False)
    with pytest.raises(ValueError):
        DiagnosisComment("repetition", " ", score=5)
    with pytest.raises(ValueError):
        DiagnosisComment("repetition", "r", score=11)


def _evidence():
    ctx, _ = mayor_context()
    return [ctx.view.get("mayor-p2")], ctx.view.current()


def test_trials_take_max_and_exactly_n_calls():
    chat = scripted("REP-DIAG", [{"reason": "three", "score": 3}, {"reason": "five", "score": 5},
                                 {"reason": "four", "score": 4}])
    ev, cur = _evidence()
    c = diagnose_with_evidence("repetition", CAND, ev, cur, "bg", chat, CFG)
    assert (c.score, c.reason) == (5, "five")
    assert chat.counter.snapshot()["chat:REP-DIAG"] == CFG.n_diag


def test_all_trials_invalid_is_none():
    chat = scripted("CON-DIAG", [{"reason": "no score"}])
    ev, cur = _evidence()
    assert diagnose_with_evidence("inconsistency", CAND, ev, cur, "bg", chat, CFG) is None


def test_boolean_contradiction_form():
    chat = scripted("CON-DIAG", [{"Contradiction?": "true", "Details": "Sam is the candidate."}])
    ev, cur = _evidence()
    c = diagnose_with_evidence("inconsistency", CAND, ev, cur, "bg", chat, CFG)
    assert (c.score, c.reason) == (10, "Sam is the candidate.")


def test_evidence_required():
    _, cur = _evidence()
    with pytest.raises(ValueError):
        diagnose_with_evidence("repetition", CAND, [], cur, "bg", scripted("X", [{}]), CFG)
    with pytest.raises(ValueError):
        diagnose_with_evidence("hallucination", CAND, [cur], cur, "bg", scripted("X", [{}]), CFG)


def test_agreement_all_true():
    chat = scripted("AGREE-DIAG", [{"agreed": True, "reason": "fine"}])
    c = diagnose_agreement(CAND, mayor_roster()["Jennifer Moore"], None, chat, CFG)
    assert c.agreed is True


def test_agreement_any_disagreement_wins():
    chat = scripted("AGREE-DIAG", [{"agreed": True, "reason": "plausible and long enough"},
                                   {"agreed": False, "reason": "short"},
                                   {"agreed": "false", "reason": "a noticeably longer objection"}])
    c = diagnose_agreement(CAND, mayor_roster()["Jennifer Moore"], None, chat, CFG)
    assert (c.agreed, c.reason) == (False, "a noticeably longer objection")


def test_agreement_unknown_agent_is_none():
    chat = scripted("AGREE-DIAG", [{"agreed": False, "reason": "x"}])
    assert diagnose_agreement(CAND, None, None, chat, CFG) is None
    assert chat.counter.snapshot() == {}


def test_mayor_trials_select_expected_reasons():
    from scenarios import run_mayor_replay
    _, _, trace, calls = run_mayor_replay()
    reasons = {c["pipeline"]: c["reason"] for c in trace["rounds"][0]["comments"]}
    assert reasons == {"repetition": MAYOR_REP_REASON, "inconsistency": MAYOR_CON_REASON,
                       "hallucination": MAYOR_AGREE_REASON}
    for tag in ("REP-DIAG", "CON-DIAG", "AGREE-DIAG"):
        assert calls[f"chat:{tag}"] == CFG.n_diag
