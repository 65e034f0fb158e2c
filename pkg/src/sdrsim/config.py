"""Pipeline thresholds and run-config loading."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from decimal import Decimal
from pathlib import Path
from typing import Any

import yaml


@dataclass(frozen=True)
class SdrConfig:
    # screening: repetition
    k_sim: int = 5
    theta: float = 0.85
    alpha: float = 0.05
    theta_force: float = 0.95
    min_words_repetition: int = 10
    # screening: inconsistency
    theta_nlig: float = 0.98
    k_nlig: int = 3
    # screening: hallucination, 1-10 scale
    theta_fact: int = 6
    # diagnosis / regeneration
    n_diag: int = 3
    theta_regen: int = 8
    max_rounds: int = 2
    # simulation
    max_turns: int = 16
    max_memories: int = 10
    history_source: str = "original"
    # sampling
    gen_temperature: float = 0.7
    diag_temperature: float = 0.7
    frequency_penalty: float = 0.5
    presence_penalty: float = 0.5
    # judge-time evidence retrieval
    eval_theta_nlig: float = 0.99
    eval_k_nlig: int = 5
    error_threshold: int = 8

    def __post_init__(self) -> None:
        problems = []
        for name in ("k_sim", "k_nlig", "n_diag", "max_rounds", "max_turns",
                     "min_words_repetition", "eval_k_nlig"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be positive")
        if not self.theta - self.alpha > 0:
            problems.append("theta - alpha must be > 0")
        if not self.theta + self.alpha < self.theta_force <= 1:
            problems.append("need theta + alpha < theta_force <= 1")
        for name in ("theta_fact", "theta_regen", "error_threshold"):
            if not 1 <= getattr(self, name) <= 10:
                problems.append(f"{name} must lie on the 1-10 scale")
        for name in ("theta_nlig", "eval_theta_nlig"):
            if not 0 <= getattr(self, name) <= 1:
                problems.append(f"{name} must lie in [0, 1]")
        if self.history_source not in ("original", "regenerated"):
            problems.append("history_source must be 'original' or 'regenerated'")
        if self.max_memories < 0:
            problems.append("max_memories must be >= 0")
        if problems:
            raise ValueError("invalid SdrConfig: " + "; ".join(problems))

    @classmethod
    def from_dict(cls, d: dict[str, Any] | None) -> SdrConfig:
        d = dict(d or {})
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown sdr config keys: {sorted(unknown)}")
        return cls(**d)

    def for_evaluation(self) -> SdrConfig:
        return replace(self, theta_nlig=self.eval_theta_nlig, k_nlig=self.eval_k_nlig)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def dynamic_threshold(cfg: SdrConfig, same_speaker: bool, same_dialogue: bool) -> float:
    """Similarity bar a retrieved utterance must clear to count as repetition.

    Same speaker in an earlier dialogue gets a looser bar (theta + alpha);
    same speaker within the current dialogue a stricter one (theta - alpha).
    Arithmetic is decimal so 0.85 - 0.05 is exactly 0.80.
    """
    theta, alpha = Decimal(repr(cfg.theta)), Decimal(repr(cfg.alpha))
    if same_speaker and not same_dialogue:
        return float(theta + alpha)
    if same_speaker and same_dialogue:
        return float(theta - alpha)
    return float(theta)


@dataclass
class RunConfig:
    sdr: SdrConfig = field(default_factory=SdrConfig)
    backends: dict[str, Any] = field(default_factory=dict)
    base_dir: Path | None = None


def load_run_config(path: str | Path) -> RunConfig:
    """Load a YAML document with optional ``sdr`` and ``backends`` sections.

    Relative script paths resolve against the config file's directory.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh) or {}
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: config must be a mapping")
    unknown = set(doc) - {"sdr", "backends"}
    if unknown:
        raise ValueError(f"{path}: unknown top-level keys {sorted(unknown)}")
    return RunConfig(SdrConfig.from_dict(doc.get("sdr")), dict(doc.get("backends") or {}),
                     path.parent.resolve())
