"""Directional end-to-end check against a live chat backend.

    python scripts/directional_check.py --backend live.yaml [--runs 3] [--seed 0]

Builds a 10-dialogue toy corpus whose personas all keep returning to one
planted keyword, regenerates it in origin and sdr mode under the same seed,
and checks two directions per run:

* sdr leaves strictly fewer dialogues mentioning the keyword than origin;
* Distinct-2 over dialogue summaries is no lower for sdr than for origin.

A run passes when both hold; the check passes when at least 2 of the runs
do, since live sampling is noisy. Exit status 0 on pass, 1 otherwise.
"""

from __future__ import annotations

import argparse
import sys
import tempfile
from pathlib import Path

from sdrsim.config import load_run_config
from sdrsim.evaluation import distinct_n, keyword_spread
from sdrsim.gateway import build_services
from sdrsim.profiles import AgentProfile, Roster
from sdrsim.simulation import run_corpus
from sdrsim.store import Dialogue

KEYWORD = "lighthouse"
AGENTS = {
    "Mira Holt": "Mira Holt restores the old lighthouse and talks about the lighthouse to everyone she meets.",
    "Jonas Reyes": "Jonas Reyes runs lighthouse tours and brings up the lighthouse in every conversation.",
    "Tess Okafor": "Tess Okafor paints the lighthouse every morning and cannot stop describing it.",
    "Wim Larsen": "Wim Larsen is writing a book on the lighthouse and quotes it constantly.",
}


def toy_corpus(n: int = 10) -> list[Dialogue]:
    names = list(AGENTS)
    out = []
    for i in range(n):
        a, b = names[i % 4], names[(i + 1 + i // 4) % 4]
        if a == b:
            b = names[(i + 2) % 4]
        out.append(Dialogue.build(
            f"toy{i:02d}", f"2024-05-01T{8 + i:02d}:00:00", "harbour", [a, b],
            [(a, f"Have you been down to the {KEYWORD} lately?"),
             (b, f"Yes, the {KEYWORD} looked beautiful this morning.")]))
    return out


def toy_roster() -> Roster:
    return Roster.of(AgentProfile(n, bg) for n, bg in AGENTS.items())


def _measure(results, services) -> tuple[int, float]:
    dialogues = [r.dialogue for r in results if not r.single_utterance and not r.failed]
    spread = keyword_spread(dialogues, [KEYWORD], bins=1)
    summaries = [services.summarizer.summarize(d) for d in dialogues]
    return spread.dialogue_counts[KEYWORD], distinct_n(summaries, 2)


def run_checks(backend: str, runs: int = 3, seed: int = 0, verbose: bool = False) -> list[bool]:
    rc = load_run_config(backend)
    corpus, roster = toy_corpus(), toy_roster()
    passes = []
    for i in range(runs):
        measured = {}
        for mode in ("origin", "sdr"):
            services = build_services(rc.backends, rc.base_dir)
            with tempfile.TemporaryDirectory() as tmp:
                res = run_corpus(corpus, roster, mode, rc.sdr, seed + i, services, Path(tmp))
            measured[mode] = _measure(res.results, services)
        (k_o, d_o), (k_s, d_s) = measured["origin"], measured["sdr"]
        ok = k_s < k_o and d_s >= d_o
        passes.append(ok)
        if verbose:
            print(f"run {i}: keyword dialogues origin={k_o} sdr={k_s}; "
                  f"distinct-2 origin={d_o:.4f} sdr={d_s:.4f} -> {'pass' if ok else 'fail'}")
    return passes


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--backend", required=True, help="run config with a live chat backend")
    ap.add_argument("--runs", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    passes = run_checks(args.backend, args.runs, args.seed, verbose=True)
    need = 2 if args.runs >= 2 else 1
    print(f"{sum(passes)}/{len(passes)} runs passed (need {need})")
    return 0 if sum(passes) >= need else 1


if __name__ == "__main__":
    sys.exit(main())
