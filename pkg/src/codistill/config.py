"""Run configuration: loop parameters, backend wiring, and fingerprinting."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

DEFAULT_SYSTEM_PROMPT = (
    "A chat between a curious human and an artificial intelligence assistant. "
    "The assistant gives helpful, detailed, and polite answers to the human's questions."
)

ROLES = ("teacher", "student", "assessor", "augmentor")

ASSESS_FULL_CACHE = "full_cache"
ASSESS_DELTA_ONLY = "delta_only"


class ConfigError(ValueError):
    pass


def _default_temperatures() -> dict[str, float]:
    return {role: 0.5 for role in ROLES}


@dataclass
class RunConfig:
    """Everything one distillation run needs, serializable to JSON.

    ``backend_mode`` selects either the in-process synthetic agents
    ("scripted", configured by ``scenario``) or remote endpoints ("wire",
    configured per role in ``endpoints`` with credentials read from the
    named environment variables).
    """

    tau: float = 0.33
    iterations: int = 4
    temperatures: dict[str, float] = field(default_factory=_default_temperatures)
    rouge_threshold: float = 0.7
    assess_scope: str = ASSESS_FULL_CACHE
    stop_token: str = "###"
    system_prompt: str = DEFAULT_SYSTEM_PROMPT
    image_position_policy: str = "randomized"
    rng_seed: int = 0
    max_in_flight: int = 4
    max_output_chars: int = 8192
    parse_attempts: int = 3
    teacher_failure_tolerance: float = 0.0
    reuse_teacher_answers: bool = True
    early_stop_on_empty: bool = True
    trainer_hook: str | None = None
    backend_mode: str = "scripted"
    endpoints: dict[str, dict] = field(default_factory=dict)
    scenario: dict | None = None

    def __post_init__(self):
        if self.tau < 0:
            raise ConfigError("tau must be >= 0")
        if not 0.0 < self.rouge_threshold <= 1.0:
            raise ConfigError("rouge_threshold must be in (0, 1]")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.assess_scope not in (ASSESS_FULL_CACHE, ASSESS_DELTA_ONLY):
            raise ConfigError(f"unknown assess_scope {self.assess_scope!r}")
        if self.backend_mode not in ("scripted", "wire"):
            raise ConfigError(f"unknown backend_mode {self.backend_mode!r}")
        if not self.stop_token:
            raise ConfigError("stop_token must be non-empty")
        if self.max_in_flight < 1:
            raise ConfigError("max_in_flight must be >= 1")
        for role in ROLES:
            self.temperatures.setdefault(role, 0.5)
        if self.backend_mode == "wire":
            missing = [role for role in ROLES if role not in self.endpoints]
            if missing:
                raise ConfigError(f"wire mode needs endpoints for roles: {', '.join(missing)}")

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "iterations": self.iterations,
            "temperatures": dict(self.temperatures),
            "rouge_threshold": self.rouge_threshold,
            "assess_scope": self.assess_scope,
            "stop_token": self.stop_token,
            "system_prompt": self.system_prompt,
            "image_position_policy": self.image_position_policy,
            "rng_seed": self.rng_seed,
            "max_in_flight": self.max_in_flight,
            "max_output_chars": self.max_output_chars,
            "parse_attempts": self.parse_attempts,
            "teacher_failure_tolerance": self.teacher_failure_tolerance,
            "reuse_teacher_answers": self.reuse_teacher_answers,
            "early_stop_on_empty": self.early_stop_on_empty,
            "trainer_hook": self.trainer_hook,
            "backend_mode": self.backend_mode,
            "endpoints": self.endpoints,
            "scenario": self.scenario,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    def fingerprint(self) -> str:
        raw = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False,
                         separators=(",", ":"))
        return hashlib.sha256(raw.encode("utf-8")).hexdigest()[:16]


def load_config(path: str | Path) -> RunConfig:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return RunConfig.from_dict(payload)


def save_config(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(config.to_dict(), sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )
