"""Command-line entry points: ``simulate``, ``evaluate`` and ``spread``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from collections.abc import Sequence
from importlib import resources
from pathlib import Path

from . import __version__
from .config import SdrConfig, load_run_config
from .evaluation import METRICS, evaluate_corpus, keyword_spread, percentile_trend, tfidf_keywords
from .gateway import BackendError, build_services
from .profiles import ProfileError, load_roster
from .simulation import (
    MODE_ALIASES,
    MODES,
    PROMPT_INFO_CHOICES,
    VARIANT_POLICIES,
    PreflightError,
    PromptFlags,
    run_corpus,
)
from .store import CorpusFormatError, EmbeddingCache, StoreError, load_corpus

log = logging.getLogger("sdrsim")

EXIT_OK, EXIT_PREFLIGHT, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    """Bad input detected before any work starts (exit 1)."""


def _fail(msg: str, code: int) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def _line_index(path: Path) -> dict[str, int]:
    # dialogue_id -> 1-based line, for error messages
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            try:
                out[str(json.loads(line)["dialogue_id"])] = lineno
            except (ValueError, KeyError, TypeError):
                continue
    return out


def _load_corpus(path: str) -> list:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"corpus file not found: {path}")
    try:
        return load_corpus(p)
    except CorpusFormatError as exc:
        raise UsageError(str(exc)) from exc


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# -- simulate ---------------------------------------------------------------

def cmd_simulate(args: argparse.Namespace) -> int:
    try:
        corpus = _load_corpus(args.corpus)
        try:
            roster = load_roster(args.agents)
        except (ProfileError, OSError) as exc:
            raise UsageError(f"agent profiles: {exc}") from exc
        missing = [(d.dialogue_id, n) for d in corpus for n in d.names if n not in roster]
        if missing:
            lines = _line_index(Path(args.corpus))
            raise UsageError("\n".join(
                f"{args.corpus}:{lines.get(did, '?')}: dialogue {did}: no profile for agent {name!r}"
                for did, name in missing))
        try:
            rc = load_run_config(args.backend)
            if "chat" not in rc.backends:
                raise ValueError(f"{args.backend}: no chat backend configured")
            services = build_services(rc.backends, rc.base_dir)
        except (OSError, ValueError, BackendError) as exc:
            raise UsageError(f"backend config: {exc}") from exc
        flags = PromptFlags.parse(args.prompt_info)
    except UsageError as exc:
        return _fail(str(exc), EXIT_PREFLIGHT)

    cache = EmbeddingCache(Path(args.out) / "embeddings.cache.jsonl", services.identity.get("embed", ""))\
        if args.embedding_cache else None
    try:
        res = run_corpus(corpus, roster, args.mode, rc.sdr, args.seed, services, args.out,
                         parallelism=args.parallelism, flags=flags, variant_policy=args.variant,
                         cache=cache)
    except PreflightError as exc:
        return _fail(str(exc), EXIT_PREFLIGHT)
    except (BackendError, StoreError, OSError, ValueError) as exc:
        return _fail(f"simulation failed: {exc}", EXIT_RUNTIME)
    c = res.manifest["counts"]
    print(f"regenerated {c['dialogues']} dialogues ({c['failed']} failed, "
          f"{c['chat_calls']} chat calls) -> {args.out}")
    return EXIT_OK


# -- evaluate ---------------------------------------------------------------

def _schema():
    return json.loads(resources.files("sdrsim").joinpath("schemas/corpus_report.schema.json")
                      .read_text(encoding="utf-8"))


def validate_report(doc: dict) -> None:
    import jsonschema

    jsonschema.validate(doc, _schema())


def cmd_evaluate(args: argparse.Namespace) -> int:
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = [m for m in metrics if m not in METRICS]
    if unknown or not metrics:
        return _fail(f"unknown metric(s) {unknown}; valid names: {', '.join(METRICS)}",
                     EXIT_PREFLIGHT)
    try:
        corpus = _load_corpus(args.corpus)
        if not corpus:
            raise UsageError(f"{args.corpus}: no dialogues to evaluate")
        backends = {}
        base_dir = None
        if args.backend:
            rc = load_run_config(args.backend)
            backends, base_dir, cfg = dict(rc.backends), rc.base_dir, rc.sdr
        else:
            cfg = SdrConfig()
        backends.pop("judge", None)
        if args.judge_backend:
            jc = load_run_config(args.judge_backend)
            judge = jc.backends.get("judge") or jc.backends.get("chat")
            if judge is None:
                raise UsageError(f"{args.judge_backend}: no judge or chat backend configured")
            judge = dict(judge)
            if judge.get("script_path"):
                # relative to the judge config, not the main backend config
                judge["script_path"] = str(jc.base_dir / judge["script_path"])
            backends["judge"] = judge
        elif "judge" in metrics:
            raise UsageError("metric 'judge' requires --judge-backend")
        backends.pop("chat", None)
        services = build_services(backends, base_dir)
    except UsageError as exc:
        return _fail(str(exc), EXIT_PREFLIGHT)
    except (OSError, ValueError) as exc:
        return _fail(f"backend config: {exc}", EXIT_PREFLIGHT)

    try:
        report = evaluate_corpus(corpus, metrics, services, cfg.for_evaluation(), bins=args.bins)
    except (BackendError, StoreError, ValueError) as exc:
        return _fail(f"evaluation failed: {exc}", EXIT_RUNTIME)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = report.to_json()
    validate_report(doc)
    (out / "report.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    if report.per_agent_div is not None:
        _write_csv(out / "per_agent_div.csv", ["agent", "agent_div"],
                   sorted(report.per_agent_div.items()))
    if report.judge_scores is not None:
        _write_csv(out / "dialogue_scores.csv", ["dialogue_id", "factualness", "consistency"],
                   [(s["dialogue_id"], s["factualness"], s["consistency"])
                    for s in report.judge_scores])
        rows = []
        for dim in ("factualness", "consistency"):
            values = [s[dim] for s in report.judge_scores]
            if len(values) >= args.bins:
                t = percentile_trend(values, args.bins, cfg.error_threshold)
                rows.extend((dim, i, n, r) for i, (n, r) in enumerate(zip(t.sizes, t.rates), 1))
        _write_csv(out / "trend.csv", ["dimension", "decile", "size", "error_rate"], rows)
    print(f"evaluated {report.dialogues} dialogues -> {out / 'report.json'}")
    return EXIT_OK


# -- spread -----------------------------------------------------------------

def cmd_spread(args: argparse.Namespace) -> int:
    if not args.keywords and args.tfidf_top is None:
        return _fail("one of --keywords or --tfidf-top is required", EXIT_PREFLIGHT)
    try:
        corpus = _load_corpus(args.corpus)
    except UsageError as exc:
        return _fail(str(exc), EXIT_PREFLIGHT)
    if not corpus:
        return _fail(f"{args.corpus}: corpus is empty", EXIT_PREFLIGHT)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    keywords = [k.strip().lower() for k in (args.keywords or "").split(",") if k.strip()]
    if args.tfidf_top is not None:
        ranked = tfidf_keywords(corpus, args.tfidf_top)
        _write_csv(out / "tfidf.csv", ["rank", "keyword", "score"],
                   [(i, w, f"{s:.6f}") for i, (w, s) in enumerate(ranked, 1)])
        if not keywords:
            keywords = [w for w, _ in ranked]

    spread = keyword_spread(corpus, keywords, args.bins)
    rows = []
    for kw in keywords:
        for b in spread.bins[kw]:
            rows.append((kw, b.index, b.total, b.matching, f"{b.ratio:.6f}"))
    _write_csv(out / "spread.csv", ["keyword", "time_bin", "total", "matching", "ratio"], rows)
    _write_csv(out / "first_mentions.csv", ["keyword", "time", "dialogue_id", "speaker", "listener"],
               [(m.keyword, m.time.isoformat(), m.dialogue_id, m.first_speaker, m.partner)
                for m in spread.first_mentions])
    print(f"{len(keywords)} keyword(s) over {len(corpus)} dialogues -> {out}")
    return EXIT_OK


# -- entry point ------------------------------------------------------------

def _mode(value: str) -> str:
    mode = MODE_ALIASES.get(value, value)
    if mode not in MODES:
        raise argparse.ArgumentTypeError("mode must be one of origin, baseline, sdr")
    return mode


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdrsim", description=__doc__)
    p.add_argument("--version", action="version", version=f"sdrsim {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="regenerate a corpus dialogue by dialogue")
    s.add_argument("--corpus", required=True)
    s.add_argument("--agents", required=True, help="profile directory or JSON file")
    s.add_argument("--mode", required=True, type=_mode, help="origin | baseline | sdr")
    s.add_argument("--backend", required=True, help="YAML run config")
    s.add_argument("--seed", required=True, type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--parallelism", type=int, default=1)
    s.add_argument("--prompt-info", default="all", choices=PROMPT_INFO_CHOICES)
    s.add_argument("--variant", default="mixed", choices=VARIANT_POLICIES)
    s.add_argument("--embedding-cache", action="store_true",
                   help="persist embeddings next to the outputs")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("evaluate", help="diversity and judge metrics for a corpus")
    e.add_argument("--corpus", required=True)
    e.add_argument("--metrics", default="distinct,distance,agentdiv,turns,words")
    e.add_argument("--backend", help="YAML config for embedding/NLI/summarizer backends")
    e.add_argument("--judge-backend", help="YAML config whose judge (or chat) backend scores dialogues")
    e.add_argument("--bins", type=int, default=10)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    k = sub.add_parser("spread", help="keyword spread over time bins")
    k.add_argument("--corpus", required=True)
    k.add_argument("--keywords", help="comma-separated keyword roots")
    k.add_argument("--tfidf-top", type=int)
    k.add_argument("--bins", type=int, default=10)
    k.add_argument("--out", required=True)
    k.set_defaults(func=cmd_spread)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "parallelism", 1) < 1:
        return _fail("--parallelism must be >= 1", EXIT_PREFLIGHT)
    if getattr(args, "bins", 1) < 1:
        return _fail("--bins must be >= 1", EXIT_PREFLIGHT)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
