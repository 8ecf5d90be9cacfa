"""Synthetic scenario loading: builds the offline world, its four agents,
and a deterministic seed instruction set.

A scenario is a JSON object:

    {
      "topics": {"counting": {"teacher": 0.9, "student": 0.08}, ...},
      "default_teacher_skill": 0.9,
      "default_student_skill": 0.3,
      "learning_rate": 0.5,
      "seed": {"images_per_topic": 2, "questions_per_image": 2}
    }

Questions carry their topic as a "topic:" prefix, which is how the
synthetic agents know which skill applies.
"""

from __future__ import annotations

import importlib.resources
import json
from pathlib import Path

from .backends.base import ChatBackend, Role
from .backends.scripted import (
    SyntheticAssessor,
    SyntheticAugmentor,
    SyntheticStudent,
    SyntheticTeacher,
    SyntheticWorld,
)
from .config import ConfigError, RunConfig
from .records import ImageRef, InstructionRecord, Origin, TaskType, content_id

DEFAULT_SCENARIO_NAME = "default_scenario.json"

_SEED_SUBJECTS = [
    "foreground elements", "background features", "central subject",
    "smallest visible item", "most prominent area", "group of items",
    "repeated structures", "surface textures", "light and shadows",
    "arrangement of parts",
]
_SEED_FRAMES = [
    "what stands out about the {subject} here",
    "how would you account for the {subject} shown",
    "give your reading of the {subject} in this picture",
    "what is notable regarding the {subject} overall",
]
_TASK_CYCLE = (TaskType.CONVERSATION, TaskType.DETAIL_DESCRIPTION, TaskType.COMPLEX_REASONING)


def default_scenario() -> dict:
    """The packaged offline scenario used by `simulate` when none is given."""
    data = importlib.resources.files("codistill.data").joinpath(DEFAULT_SCENARIO_NAME)
    return json.loads(data.read_text(encoding="utf-8"))


def load_scenario(path: str | Path | None) -> dict:
    if path is None or str(path) == "default":
        return default_scenario()
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid scenario JSON: {exc}") from exc
    if not isinstance(payload, dict) or "topics" not in payload:
        raise ConfigError(f"{path}: scenario must be a JSON object with a 'topics' map")
    return payload


def build_world(scenario: dict) -> SyntheticWorld:
    topics = scenario.get("topics", {})
    return SyntheticWorld(
        teacher_skills={t: float(v["teacher"]) for t, v in topics.items() if "teacher" in v},
        student_skills={t: float(v["student"]) for t, v in topics.items() if "student" in v},
        default_teacher_skill=float(scenario.get("default_teacher_skill", 0.9)),
        default_student_skill=float(scenario.get("default_student_skill", 0.3)),
        learning_rate=float(scenario.get("learning_rate", 0.5)),
    )


def build_scripted_backends(world: SyntheticWorld) -> dict[Role, ChatBackend]:
    return {
        Role.TEACHER: SyntheticTeacher(world),
        Role.STUDENT: SyntheticStudent(world),
        Role.ASSESSOR: SyntheticAssessor(world),
        Role.AUGMENTOR: SyntheticAugmentor(world),
    }


def generate_seed_records(scenario: dict) -> list[InstructionRecord]:
    """Deterministic seed instructions for the scenario's topics.

    Each topic gets ``images_per_topic`` synthetic images with
    ``questions_per_image`` distinct questions apiece.
    """
    seed_cfg = scenario.get("seed", {})
    images_per_topic = int(seed_cfg.get("images_per_topic", 2))
    questions_per_image = int(seed_cfg.get("questions_per_image", 2))
    if images_per_topic < 1 or questions_per_image < 1:
        raise ConfigError("seed counts must be >= 1")

    records: list[InstructionRecord] = []
    for t_idx, topic in enumerate(sorted(scenario.get("topics", {}))):
        for i in range(images_per_topic):
            image = ImageRef(uri=f"synthetic://{topic}/{i:03d}.png")
            for q in range(questions_per_image):
                pick = t_idx + 3 * i + 7 * q
                subject = _SEED_SUBJECTS[pick % len(_SEED_SUBJECTS)]
                frame = _SEED_FRAMES[(pick // 5) % len(_SEED_FRAMES)]
                question = f"{topic}: {frame.format(subject=subject)}"
                records.append(
                    InstructionRecord(
                        id=content_id("seed", topic, i, q),
                        image=image,
                        question=question,
                        task_type=_TASK_CYCLE[(t_idx + q) % len(_TASK_CYCLE)],
                        origin=Origin.SEED,
                        iteration=0,
                    )
                )
    if not records:
        raise ConfigError("scenario has no topics; cannot generate a seed set")
    return records


def config_from_scenario(scenario: dict, **overrides) -> RunConfig:
    """RunConfig for a scripted run, with the scenario embedded so the
    config fingerprint pins the whole simulated world."""
    base = dict(scenario.get("config", {}))
    base.update(overrides)
    base["backend_mode"] = "scripted"
    base["scenario"] = {k: v for k, v in scenario.items() if k != "config"}
    return RunConfig.from_dict(base)
