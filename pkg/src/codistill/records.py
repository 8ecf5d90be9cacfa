"""Core record types for the distillation pipeline.

Instructions, answers, and conversations are plain immutable dataclasses.
All derived record ids are content-addressed so that re-running a step on
the same inputs produces the same ids.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence


class TaskType(str, Enum):
    CONVERSATION = "conversation"
    DETAIL_DESCRIPTION = "detail_description"
    COMPLEX_REASONING = "complex_reasoning"
    UNKNOWN = "unknown"


class Origin(str, Enum):
    SEED = "seed"
    AUGMENTED = "augmented"


class RecordError(ValueError):
    """Raised when a record violates its invariants or fails to parse."""


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def content_id(*parts: object) -> str:
    """Deterministic short id derived from the given parts."""
    raw = "\x1f".join(str(p) for p in parts)
    return hashlib.sha256(raw.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class ImageRef:
    """Reference to an image by local path or remote locator."""

    uri: str
    content_hash: str | None = None

    def __post_init__(self):
        if not self.uri:
            raise RecordError("image uri must be non-empty")
        h = self.content_hash
        if h is not None:
            if len(h) % 2 != 0 or h != h.lower() or not all(c in "0123456789abcdef" for c in h):
                raise RecordError(f"content_hash must be lowercase hex of even length, got {h!r}")

    def to_dict(self) -> dict:
        return {"uri": self.uri, "content_hash": self.content_hash}

    @classmethod
    def from_dict(cls, d: dict) -> "ImageRef":
        if isinstance(d, str):  # bare uri shorthand
            return cls(uri=d)
        return cls(uri=d.get("uri", ""), content_hash=d.get("content_hash"))


@dataclass(frozen=True)
class InstructionRecord:
    """One single-turn multi-modal question with its lineage.

    Seed records come straight from the initial dataset (iteration 0, no
    parent). Augmented records are generated later and always point back at
    the instruction they were derived from.
    """

    id: str
    image: ImageRef
    question: str
    task_type: TaskType = TaskType.UNKNOWN
    origin: Origin = Origin.SEED
    parent_id: str | None = None
    iteration: int = 0

    def __post_init__(self):
        object.__setattr__(self, "task_type", TaskType(self.task_type))
        object.__setattr__(self, "origin", Origin(self.origin))
        if not self.id:
            raise RecordError("instruction id must be non-empty")
        if not self.question.strip():
            raise RecordError(f"instruction {self.id}: question must be non-empty")
        if self.iteration < 0:
            raise RecordError(f"instruction {self.id}: iteration must be >= 0")
        if (self.origin is Origin.AUGMENTED) != (self.parent_id is not None):
            raise RecordError(
                f"instruction {self.id}: parent_id must be present iff origin=augmented"
            )
        if (self.iteration == 0) != (self.origin is Origin.SEED):
            raise RecordError(
                f"instruction {self.id}: iteration=0 must hold iff origin=seed"
            )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "image": self.image.to_dict(),
            "question": self.question,
            "task_type": self.task_type.value,
            "origin": self.origin.value,
            "parent_id": self.parent_id,
            "iteration": self.iteration,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InstructionRecord":
        try:
            return cls(
                id=d["id"],
                image=ImageRef.from_dict(d["image"]),
                question=d["question"],
                task_type=TaskType(d.get("task_type", "unknown")),
                origin=Origin(d.get("origin", "seed")),
                parent_id=d.get("parent_id"),
                iteration=int(d.get("iteration", 0)),
            )
        except (KeyError, ValueError, TypeError) as exc:
            if isinstance(exc, RecordError):
                raise
            raise RecordError(f"bad instruction record: {exc}") from exc


class AnswerSource(str, Enum):
    TEACHER = "teacher"
    STUDENT = "student"


@dataclass(frozen=True)
class AnswerRecord:
    """A model answer to one instruction."""

    instruction_id: str
    source: AnswerSource
    text: str
    temperature: float

    def __post_init__(self):
        if not self.text.strip():
            raise RecordError(f"answer for {self.instruction_id}: text must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise RecordError(f"answer for {self.instruction_id}: temperature outside [0, 2]")

    def to_dict(self) -> dict:
        return {
            "instruction_id": self.instruction_id,
            "source": self.source.value,
            "text": self.text,
            "temperature": self.temperature,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnswerRecord":
        try:
            return cls(
                instruction_id=d["instruction_id"],
                source=AnswerSource(d["source"]),
                text=d["text"],
                temperature=float(d["temperature"]),
            )
        except (KeyError, ValueError, TypeError) as exc:
            if isinstance(exc, RecordError):
                raise
            raise RecordError(f"bad answer record: {exc}") from exc


@dataclass(frozen=True)
class ConversationSample:
    """A multi-turn dialogue about one image.

    ``turns`` is an ordered list of (question, answer) pairs; a valid sample
    has at least one turn and no empty strings.
    """

    id: str
    image: ImageRef
    turns: tuple[tuple[str, str], ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "turns", tuple(tuple(t) for t in self.turns))
        if not self.id:
            raise RecordError("sample id must be non-empty")
        if len(self.turns) < 1:
            raise RecordError(f"sample {self.id}: needs at least one turn")
        for i, (q, a) in enumerate(self.turns):
            if not q.strip() or not a.strip():
                raise RecordError(f"sample {self.id}: empty question or answer in turn {i}")

    def to_dict(self) -> dict:
        conversations = []
        for q, a in self.turns:
            conversations.append({"from": "human", "value": q})
            conversations.append({"from": "gpt", "value": a})
        return {"id": self.id, "image": self.image.to_dict(), "conversations": conversations}

    @classmethod
    def from_dict(cls, d: dict) -> "ConversationSample":
        try:
            conv = d["conversations"]
            if len(conv) % 2 != 0:
                raise RecordError(f"sample {d.get('id')}: odd number of conversation messages")
            turns = []
            for human, gpt in zip(conv[0::2], conv[1::2]):
                if human.get("from") != "human" or gpt.get("from") != "gpt":
                    raise RecordError(
                        f"sample {d.get('id')}: conversations must alternate human/gpt"
                    )
                turns.append((human["value"], gpt["value"]))
            return cls(id=d["id"], image=ImageRef.from_dict(d["image"]), turns=tuple(turns))
        except (KeyError, ValueError, TypeError) as exc:
            if isinstance(exc, RecordError):
                raise
            raise RecordError(f"bad conversation sample: {exc}") from exc


def to_single_turn(dataset: Sequence[ConversationSample]) -> list[InstructionRecord]:
    """Expand multi-turn dialogues into single-turn seed instructions.

    Answers are discarded. One record is emitted per (sample, turn) pair,
    preserving input order; ids are derived from the sample id and turn index
    so the expansion is idempotent.
    """
    out: list[InstructionRecord] = []
    for sample in dataset:
        for t, (question, _answer) in enumerate(sample.turns):
            out.append(
                InstructionRecord(
                    id=content_id("single-turn", sample.id, t),
                    image=sample.image,
                    question=question,
                    task_type=TaskType.UNKNOWN,
                    origin=Origin.SEED,
                    parent_id=None,
                    iteration=0,
                )
            )
    return out


def _read_jsonl(path: str | Path) -> Iterable[tuple[int, dict]]:
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(f"{path}: invalid JSON on line {lineno}: {exc.msg}") from exc


def read_records(path: str | Path) -> list[InstructionRecord]:
    """Read instruction records from a line-delimited JSON file.

    Malformed lines raise with the offending line number; duplicate ids are
    rejected.
    """
    records: list[InstructionRecord] = []
    seen: set[str] = set()
    for lineno, obj in _read_jsonl(path):
        try:
            record = InstructionRecord.from_dict(obj)
        except RecordError as exc:
            raise RecordError(f"{path}: line {lineno}: {exc}") from exc
        if record.id in seen:
            raise RecordError(f"{path}: line {lineno}: duplicate id {record.id!r}")
        seen.add(record.id)
        records.append(record)
    return records


def write_records(records: Sequence[InstructionRecord], path: str | Path) -> None:
    """Write instruction records as line-delimited JSON, one per line."""
    seen: set[str] = set()
    for record in records:
        if record.id in seen:
            raise RecordError(f"duplicate id {record.id!r}")
        seen.add(record.id)
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(_canonical_json(record.to_dict()) + "\n")


def read_conversation_samples(path: str | Path) -> list[ConversationSample]:
    """Read conversation samples (seed/export format) from a JSONL file."""
    samples: list[ConversationSample] = []
    seen: set[str] = set()
    for lineno, obj in _read_jsonl(path):
        try:
            sample = ConversationSample.from_dict(obj)
        except RecordError as exc:
            raise RecordError(f"{path}: line {lineno}: {exc}") from exc
        if sample.id in seen:
            raise RecordError(f"{path}: line {lineno}: duplicate id {sample.id!r}")
        seen.add(sample.id)
        samples.append(sample)
    return samples


def write_conversation_samples(samples: Sequence[ConversationSample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for sample in samples:
            f.write(_canonical_json(sample.to_dict()) + "\n")


def read_answers(path: str | Path) -> list[AnswerRecord]:
    answers = []
    for lineno, obj in _read_jsonl(path):
        try:
            answers.append(AnswerRecord.from_dict(obj))
        except RecordError as exc:
            raise RecordError(f"{path}: line {lineno}: {exc}") from exc
    return answers


def write_answers(answers: Sequence[AnswerRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for answer in answers:
            f.write(_canonical_json(answer.to_dict()) + "\n")
