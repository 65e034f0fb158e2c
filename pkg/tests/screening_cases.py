"""Twenty-five rigged screening scenarios with hand-written expected reports.

Similarities are rigged through embedding overrides, NLI through the table
mock, and every LLM answer through the chat script. Expected values come
from applying the thresholds by hand, never from running the code.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from scenarios import (
    A1,
    A2,
    A3,
    A_CUR,
    B1,
    B2,
    C1,
    D1,
    W_ROSTER,
    W_TIME,
    W_TRIPLETS,
    rigged,
    services,
    triplet_entries,
    world_view,
)

from sdrsim.config import SdrConfig
from sdrsim.screening import (
    Candidate,
    TripletExtractor,
    detect_third_party_mentions,
    screen_hallucination,
    screen_inconsistency,
    screen_repetition,
)
from sdrsim.store import Dialogue

LONG = "Honestly I keep thinking the northern ridge trail is the finest hike near town."
TEN = "The ridge trail is the best hike near our town."
NINE = "The ridge trail is the best hike near town."
EIGHT = "The ridge trail is the best hike around."

MOVED = "I moved to Denver last month and I am still unpacking all the boxes."
DENVER = [["Ava Reed", "lives in", "Denver"]]
BOSTON_VS_DENVER = ("Ava Reed lives in Boston.", "Ava Reed lives in Denver.")

EXTRA_CITIES = {"x1": ("Austin", 0.99), "x2": ("Seattle", 0.995), "x3": ("Miami", 0.985),
                "x4": ("Omaha", 0.991), "x5": ("Tulsa", 0.999)}


def _extra_city_dialogues() -> list[Dialogue]:
    out = []
    for i, (did, (city, _)) in enumerate(sorted(EXTRA_CITIES.items())):
        out.append(Dialogue.build(did, f"2024-02-2{i}T10:00:00", "town", ["Ava Reed", "Cara Diaz"],
                                  [("Ava Reed", f"Greetings from my home in {city} today."),
                                   ("Cara Diaz", "Nice to hear from you.")]))
    return out


@dataclass
class Case:
    name: str
    pipeline: str
    text: str
    expected: tuple  # (outcome, evidence, score, mentioned_agent)
    sims: dict = field(default_factory=dict)
    nli: dict = field(default_factory=dict)
    cand_triplets: list = field(default_factory=list)
    script: list = field(default_factory=list)
    extra: tuple = ()
    bare: bool = False
    cfg: dict = field(default_factory=dict)


def _select(ids):
    return {"marker": r"^\[NLIG-SELECT\]", "responses": [json.dumps({"dialogue_ids": ids})]}


def _hallu(*scores):
    return {"marker": r"^\[HALLU-SCORE\]",
            "responses": [json.dumps({"reason": f"rated {s}", "score": s}) for s in scores]}


CASES = [
    # repetition: word-count exemption and force bypass
    Case("rep_8_words_exempt", "repetition", EIGHT, ("clean", (), None, None), sims={A1: 0.99}),
    Case("rep_9_words_exempt", "repetition", NINE, ("clean", (), None, None), sims={A1: 0.99}),
    Case("rep_10_words_force", "repetition", TEN, ("force_regenerate", (), None, None), sims={A1: 0.99}),
    Case("rep_force_096", "repetition", LONG, ("force_regenerate", (), None, None),
         sims={C1: 0.96, B1: 0.70}),
    Case("rep_0949_single_hit", "repetition", LONG, ("clean", (), None, None), sims={C1: 0.949}),
    # repetition: dynamic thresholds, 0 / 1 / >=2 hits over
    Case("rep_two_hits_evidence", "repetition", LONG, ("evidence", ("r1", "r2"), None, None),
         sims={A1: 0.91, D1: 0.86, B1: 0.60}),
    Case("rep_one_hit_clean", "repetition", LONG, ("clean", (), None, None), sims={A1: 0.91, D1: 0.84}),
    Case("rep_zero_hits_clean", "repetition", LONG, ("clean", (), None, None), sims={A1: 0.89, C1: 0.84}),
    Case("rep_same_dialogue_stricter", "repetition", LONG, ("evidence", ("r3", "cur"), None, None),
         sims={A_CUR: 0.81, B2: 0.86}),
    Case("rep_future_invisible", "repetition", LONG, ("clean", (), None, None), sims={A3: 0.99, A2: 0.86}),
    Case("rep_dedup_one_dialogue", "repetition", LONG, ("evidence", ("r1",), None, None),
         sims={A1: 0.92, C1: 0.90}),
    # inconsistency: theta_nlig boundary, vacuous cases, k_nlig cap, selection fallback
    Case("inc_099_suspicious", "inconsistency", MOVED, ("evidence", ("r1",), None, None),
         nli={BOSTON_VS_DENVER: 0.99}, cand_triplets=DENVER, script=[_select(["r1"])]),
    Case("inc_098_boundary_clean", "inconsistency", MOVED, ("clean", (), None, None),
         nli={BOSTON_VS_DENVER: 0.98}, cand_triplets=DENVER, script=[_select(["r1"])]),
    Case("inc_09801_suspicious", "inconsistency", MOVED, ("evidence", ("r1",), None, None),
         nli={BOSTON_VS_DENVER: 0.9801}, cand_triplets=DENVER, script=[_select(["r1"])]),
    Case("inc_no_priors", "inconsistency", MOVED, ("clean", (), None, None),
         nli={BOSTON_VS_DENVER: 0.99}, cand_triplets=DENVER, bare=True),
    Case("inc_cap_k3_padded", "inconsistency", MOVED, ("evidence", ("x2", "x5", "x4"), None, None),
         nli={(f"Ava Reed lives in {c}.", "Ava Reed lives in Denver."): p for c, p in EXTRA_CITIES.values()},
         cand_triplets=DENVER, script=[_select(["x2"])], extra=tuple(_extra_city_dialogues())),
    Case("inc_no_candidate_triplets", "inconsistency", MOVED, ("clean", (), None, None),
         nli={BOSTON_VS_DENVER: 0.99}, cand_triplets=[]),
    Case("inc_selection_unparseable", "inconsistency", MOVED, ("evidence", ("r3", "r1"), None, None),
         nli={BOSTON_VS_DENVER: 0.99, ("Ava Reed has a dog named Biscuit.", "Ava Reed has no pets."): 0.995},
         cand_triplets=DENVER + [["Ava Reed", "has", "no pets"]],
         script=[{"marker": r"^\[NLIG-SELECT\]", "responses": ["no idea"]}]),
    # hallucination: mentions and the strict theta_fact bar
    Case("hal_no_mention", "hallucination", "I might bake some bread this weekend with Ben.",
         ("clean", (), None, None)),
    Case("hal_personal_plan_3", "hallucination", "I plan to invite Cara Diaz to my pottery class.",
         ("clean", (), None, None), script=[_hallu(3)]),
    Case("hal_fact_claim_8", "hallucination", "Cara Diaz was fired from the library yesterday.",
         ("flagged", (), 8, "Cara Diaz"), script=[_hallu(8)]),
    Case("hal_score_6_boundary", "hallucination", "Cara Diaz is moving away next week.",
         ("clean", (), None, None), script=[_hallu(6)]),
    Case("hal_two_mentions_max", "hallucination", "Cara Diaz said Dan Eliot stole from the bakery.",
         ("flagged", (), 9, "Dan Eliot"), script=[_hallu(4, 9)]),
    Case("hal_shared_surname", "hallucination", "My cousin Reed told me she lost her job.",
         ("flagged", (), 7, "Eve Reed"), script=[_hallu(7)]),
    Case("hal_possessive", "hallucination", "Cara's shop went bankrupt last week, everyone knows.",
         ("flagged", (), 8, "Cara Diaz"), script=[_hallu(8)]),
]


def run_case(case: Case):
    """Build the rigged world for ``case`` and return (report, services)."""
    cfg = replace(SdrConfig(), **case.cfg)
    triplet_texts = {"r1": A1, "r2": B1, "r3": A2, "r4": A3}
    triplets = dict(W_TRIPLETS)
    for d in case.extra:
        triplet_texts[d.dialogue_id] = d.utterances[0].text
        city = EXTRA_CITIES[d.dialogue_id][0]
        triplets[d.dialogue_id] = [["Ava Reed", "lives in", city]]
    script = list(case.script) + triplet_entries(triplets, triplet_texts)
    script.append({"marker": r"^\[TRIPLETS-UTTERANCE\]", "responses": [json.dumps(case.cand_triplets)]})
    overrides = rigged(case.text, case.sims) if case.sims else None
    svc = services(script, overrides, case.nli)
    if case.bare:
        from sdrsim.store import DialogueStore, Participant, parse_time
        view = DialogueStore(svc.embedder).scoped(
            "cur", parse_time(W_TIME), (Participant("Ava Reed"), Participant("Ben Cole")))
    else:
        _, view = world_view(svc, case.extra)
    cand = Candidate(case.text, "Ava Reed", "Ben Cole")
    if case.pipeline == "repetition":
        report = screen_repetition(cand, view, cfg)
    elif case.pipeline == "inconsistency":
        report = screen_inconsistency(cand, ("Ava Reed", "Ben Cole"), view, TripletExtractor(svc.chat),
                                      svc.nli, svc.chat, cfg)
    else:
        mentions = detect_third_party_mentions(case.text, "Ava Reed", "Ben Cole", W_ROSTER)
        report = screen_hallucination(cand, mentions, view, svc.chat, cfg)
    return report, svc


def observed(report) -> tuple:
    return (report.outcome, tuple(report.evidence), report.score, report.mentioned_agent)
