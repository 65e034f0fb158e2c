"""Write the demo fixture: agents, a 20-dialogue corpus, mock scripts and a run config.

    python scripts/make_demo.py [--out demo] [--dialogues 20] [--seed 7]

Everything is drawn from a seeded RNG so the committed files can be
regenerated byte for byte.
"""

from __future__ import annotations

import argparse
import itertools
import json
import random
from datetime import datetime, timedelta
from pathlib import Path

AGENTS = {
    "Hana Sato": (("Hana Sato is a ceramicist who runs a small studio near the market square. "
                  "She is patient, curious and loves teaching beginners."), "studio"),
    "Omar Haddad": (("Omar Haddad owns the corner bakery and wakes up at four every morning. "
                    "He is cheerful and knows everyone in town."), "bakery"),
    "Lena Fischer": (("Lena Fischer is a librarian who writes poetry in her spare time. "
                     "She is organising a reading club for the autumn."), "library"),
    "Diego Alvarez": (("Diego Alvarez is a college student studying marine biology. "
                      "He volunteers at the harbour clean-up on weekends."), "dorm"),
    "Priya Nair": (("Priya Nair is a software developer working remotely for a climate start-up. "
                   "She enjoys hiking and board games."), "apartment"),
    "Marcus Bell": (("Marcus Bell is a retired history teacher who tends the community garden. "
                    "He likes long conversations about the town's past."), "garden"),
}

TOPICS = [
    "the autumn poetry reading at the library",
    "a possible collaboration on a pottery workshop for kids",
    "the harbour clean-up this Saturday morning",
    "new bread recipes for the winter market",
    "the history of the old lighthouse",
    "a board game night at the community hall",
    "planting bulbs in the community garden",
    "a hiking trip up the north ridge",
]

OPENERS = [
    "Good to see you! I have been meaning to ask you about {topic}.",
    "Hey, do you have a minute? I keep thinking about {topic}.",
    "Morning! Have you heard anything new about {topic}?",
]
REPLIES = [
    "That sounds wonderful, I would love to hear more about {topic} when you have time.",
    "I was just talking about {topic} with a neighbour yesterday, so your timing is perfect.",
    "Honestly I had not thought much about {topic}, but I am happy to help out.",
    "Let us meet later this week and make a proper plan for {topic}.",
    "I can bring some supplies if that helps with {topic}.",
    "Great, then it is settled. See you soon!",
]

GEN_POOL = [
    ("I have been thinking about starting a small collaboration with the library on a poetry evening.", False),
    ("Would you like to join me at the harbour clean-up this Saturday morning? We could use more hands.", False),
    ("I tried a new sourdough recipe this week and it finally came out with a crisp crust and soft crumb.", False),
    ("Lena Fischer told me she is moving away from town next month to take a job in the city.", False),
    ("Omar Haddad said the bakery will close for good after the winter market, which surprised me.", False),
    ("I think we should plan a board game night at the community hall sometime before the holidays.", False),
    ("The community garden needs new tulip bulbs before the first frost, so I might go to the nursery.", False),
    ("I have been thinking about starting a small collaboration with the library on a poetry evening.", False),
    ("It was really nice talking with you today, let us catch up again soon.", True),
    ("I need to head back to work now, but thanks for the chat and see you around.", True),
]
REVISE_POOL = [
    ("Actually, have you ever visited the old lighthouse museum? I went last week and learned a lot.", False),
    ("By the way, I am sketching designs for a mural on the bakery wall and would value your opinion.", False),
    ("I should let you go now, it was good to catch up with you today.", True),
    ("Something different: I started learning to play the cello, and my neighbours are very patient.", False),
]
REP_DIAG = [
    {"reason": "The response repeats an idea the speaker already shared in an earlier conversation.", "score": 9},
    {"reason": "The response adds a little but mostly restates what was said before.", "score": 6},
    {"reason": "The response is new information and fits the conversation.", "score": 2},
]
CON_DIAG = [
    {"reason": "No contradiction with earlier dialogues or the background.", "score": 1},
    {"reason": "The response conflicts with what the speaker said in a past dialogue.", "score": 8},
]
AGREE_DIAG = [
    {"agreed": False, "reason": "I never said anything like that and have no such plans."},
    {"agreed": True, "reason": "That matches what I told them recently."},
]
HALLU = [
    {"reason": "A personal opinion with little effect on the person mentioned.", "score": 3},
    {"reason": "States a checkable, consequential fact about the person mentioned.", "score": 8},
]
TRIPLETS = [
    [["Hana Sato", "runs", "a pottery studio"], ["Omar Haddad", "owns", "the corner bakery"]],
    [["Lena Fischer", "organises", "a reading club"]],
    [["Diego Alvarez", "volunteers at", "the harbour clean-up"]],
    [],
]
JUDGE_EVAL = [
    {"consistency": {"score": 9, "reason": "Coherent with earlier dialogues."},
     "factualness": {"score": 9, "reason": "No fabricated claims."}},
    {"consistency": {"score": 6, "reason": "Contradicts a past plan."},
     "factualness": {"score": 8, "reason": "Mostly grounded."}},
    {"consistency": {"score": 8, "reason": "Minor drift only."},
     "factualness": {"score": 5, "reason": "Makes up a fact about a neighbour."}},
]


def _gen(text: str, ends: bool) -> str:
    return json.dumps({"Response": text, "The conversation ends with the utterance": ends})


def chat_script() -> list[dict]:
    def seeded(marker, responses):
        return {"marker": marker, "pick": "seeded",
                "responses": [r if isinstance(r, str) else json.dumps(r) for r in responses]}
    return [
        seeded(r"^\[GEN\]", [_gen(t, e) for t, e in GEN_POOL]),
        seeded(r"^\[(GEN|REVISE)-(PERSONA|TASK)\]", [_gen(t, e) for t, e in REVISE_POOL]),
        seeded(r"^\[REP-DIAG\]", REP_DIAG),
        seeded(r"^\[CON-DIAG\]", CON_DIAG),
        seeded(r"^\[AGREE-DIAG\]", AGREE_DIAG),
        seeded(r"^\[HALLU-SCORE\]", HALLU),
        seeded(r"^\[TRIPLETS-(DIALOGUE|UTTERANCE)\]", TRIPLETS),
        seeded(r"^\[NLIG-SELECT\]", [{"dialogue_ids": []}]),
        seeded(r"^\[INTEGRATE\]", [("- Say something the listener has not heard before.\n"
                                   "- Avoid stating unverified facts about other people.")]),
        seeded(r"^\[JUDGE-BEST\]", ["1", "2", "3"]),
        seeded(r"^\[JUDGE-EVAL\]", JUDGE_EVAL),
        seeded(r"^\[SUMMARIZE\]", ["Two neighbours chat about plans in town."]),
    ]


def corpus(n: int, rng: random.Random) -> list[dict]:
    names = list(AGENTS)
    pairs = list(itertools.combinations(names, 2))
    t0 = datetime(2024, 2, 13, 8, 0)
    out = []
    for i in range(n):
        a, b = rng.choice(pairs)
        if rng.random() < 0.5:
            a, b = b, a
        topic = rng.choice(TOPICS)
        turns = [(a, rng.choice(OPENERS).format(topic=topic))]
        for j in range(rng.randint(3, 6)):
            turns.append((b if j % 2 == 0 else a, rng.choice(REPLIES).format(topic=topic)))
        t = t0 + timedelta(hours=5 * i + rng.randint(0, 3), minutes=rng.choice([0, 15, 30, 45]))
        out.append({
            "dialogue_id": f"d{i:03d}",
            "time": t.isoformat(),
            "location": rng.choice(["market square", "library", "bakery", "harbour", "garden"]),
            "participants": [{"name": a, "status": "chatting"}, {"name": b, "status": "chatting"}],
            "utterances": [{"speaker": s, "text": x} for s, x in turns],
        })
    return out


def profiles() -> list[dict]:
    out = []
    for name, (background, loc) in AGENTS.items():
        first = name.split()[0]
        out.append({
            "name": name,
            "background": background,
            "memories": [
                {"time": "2024-02-12T09:00:00", "text": f"{first} had breakfast at home."},
                {"time": "2024-02-12T18:30:00", "text": f"{first} spent the evening reading."},
                {"time": "2024-02-14T12:00:00", "text": f"{first} met a friend for lunch."},
            ],
            "location": loc,
            "status": "idle",
        })
    return out


BACKEND_YAML = """\
# Demo run config: every backend is a local mock.
sdr: {}
backends:
  chat: {kind: mock, script_path: mock_chat.jsonl}
  judge: {kind: mock, script_path: mock_chat.jsonl}
  embed: {kind: mock}
  nli: {kind: mock, script_path: mock_nli.jsonl}
  summarizer: {kind: mock}
"""


def write(out: Path, n: int, seed: int) -> None:
    rng = random.Random(seed)
    (out / "agents").mkdir(parents=True, exist_ok=True)
    for p in profiles():
        fname = p["name"].lower().replace(" ", "_") + ".json"
        (out / "agents" / fname).write_text(json.dumps(p, indent=2) + "\n", encoding="utf-8")
    (out / "corpus.jsonl").write_text(
        "".join(json.dumps(d) + "\n" for d in corpus(n, rng)), encoding="utf-8")
    (out / "mock_chat.jsonl").write_text(
        "".join(json.dumps(e) + "\n" for e in chat_script()), encoding="utf-8")
    # one planted contradiction so the inconsistency screen has something to find
    nli = {"premise": "Hana Sato runs a pottery studio.", "hypothesis": "Lena Fischer organises a reading club.",
           "entailment": 0.005, "neutral": 0.005, "contradiction": 0.99}
    (out / "mock_nli.jsonl").write_text(json.dumps(nli) + "\n", encoding="utf-8")
    (out / "backend.yaml").write_text(BACKEND_YAML, encoding="utf-8")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "demo"))
    ap.add_argument("--dialogues", type=int, default=20)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    write(Path(args.out), args.dialogues, args.seed)
    print(f"demo fixture written to {args.out}")


if __name__ == "__main__":
    main()
