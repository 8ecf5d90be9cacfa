"""Judge-based difficulty assessment.

A judge model scores the student's and the teacher's answer to the same
question on a 0-10 scale. To cancel position bias the judging runs twice
with the answers' presentation order swapped, and the per-model scores are
averaged across both orders. The averaged scores feed the difficulty score

    s = (|r_s - r_t| + 1) / max(r_s, r_t)

which is high when the two models disagree or both do poorly, and low when
both score well; instructions at or above a threshold count as difficult.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from enum import Enum

from .backends.base import (
    BackendError,
    ChatBackend,
    ChatRequest,
    Message,
    PermanentBackendError,
    Role,
    Speaker,
)
from .records import InstructionRecord

log = logging.getLogger(__name__)

SCORE_SCALE = 10.0


class ScoreParseError(ValueError):
    pass


class DifficultyClass(str, Enum):
    DIFFICULT = "difficult"
    EASY = "easy"


class AssessmentStatus(str, Enum):
    OK = "ok"
    SKIPPED_PARSE_FAILURE = "skipped_parse_failure"
    SKIPPED_BACKEND_ERROR = "skipped_backend_error"


def _clamp(value: float) -> float:
    return min(SCORE_SCALE, max(0.0, value))


@dataclass(frozen=True)
class ScorePair:
    """Scores for the two answers of one judging run, in presentation order."""

    first: float
    second: float

    def __post_init__(self):
        object.__setattr__(self, "first", _clamp(float(self.first)))
        object.__setattr__(self, "second", _clamp(float(self.second)))

    def to_list(self) -> list[float]:
        return [self.first, self.second]


@dataclass(frozen=True)
class AssessmentResult:
    instruction_id: str
    iteration: int
    student_answer: str
    teacher_answer: str
    status: AssessmentStatus
    order1: ScorePair | None = None  # student shown first
    order2: ScorePair | None = None  # student shown second
    r_s: float | None = None
    r_t: float | None = None
    s_k: float | None = None
    difficulty_class: DifficultyClass | None = None

    def to_dict(self) -> dict:
        return {
            "instruction_id": self.instruction_id,
            "iteration": self.iteration,
            "student_answer": self.student_answer,
            "teacher_answer": self.teacher_answer,
            "status": self.status.value,
            "order1": self.order1.to_list() if self.order1 else None,
            "order2": self.order2.to_list() if self.order2 else None,
            "r_s": self.r_s,
            "r_t": self.r_t,
            "s_k": self.s_k,
            "class": self.difficulty_class.value if self.difficulty_class else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AssessmentResult":
        return cls(
            instruction_id=d["instruction_id"],
            iteration=int(d["iteration"]),
            student_answer=d["student_answer"],
            teacher_answer=d["teacher_answer"],
            status=AssessmentStatus(d["status"]),
            order1=ScorePair(*d["order1"]) if d.get("order1") else None,
            order2=ScorePair(*d["order2"]) if d.get("order2") else None,
            r_s=d.get("r_s"),
            r_t=d.get("r_t"),
            s_k=d.get("s_k"),
            difficulty_class=DifficultyClass(d["class"]) if d.get("class") else None,
        )


JUDGE_SYSTEM_PROMPT = (
    "You are an impartial judge comparing two assistant answers to the same "
    "question about an attached image. Evaluate the usefulness, relevance, "
    "accuracy, and level of detail of each answer.\n"
    "Your reply MUST begin, on its very first line, with exactly:\n"
    "SCORES: <score for Assistant A> <score for Assistant B>\n"
    "where each score is a number from 0 to 10. You may explain your "
    "reasoning on the following lines."
)


def build_judge_prompt(question: str, answer_a: str, answer_b: str) -> tuple[Message, ...]:
    """Judge prompt scoring Assistant A and Assistant B on the 0-10 scale.

    The image itself travels on the request, not inside the text.
    """
    for name, value in (("question", question), ("answer_a", answer_a), ("answer_b", answer_b)):
        if not value.strip():
            raise ValueError(f"{name} must be non-empty")
    user = (
        "[Question]\n"
        f"{question}\n"
        "[End of Question]\n\n"
        "[Assistant A's answer]\n"
        f"{answer_a}\n"
        "[End of Assistant A's answer]\n\n"
        "[Assistant B's answer]\n"
        f"{answer_b}\n"
        "[End of Assistant B's answer]\n\n"
        "Score both answers now, starting your reply with the SCORES line."
    )
    return (Message(Speaker.SYSTEM, JUDGE_SYSTEM_PROMPT), Message(Speaker.USER, user))


_SCORES_LINE_RE = re.compile(r"^\s*SCORES:\s*(\S+)\s+(\S+)\s*$")


def parse_scores(text: str) -> ScorePair:
    """Extract the first "SCORES: <a> <b>" line; values are clamped to [0, 10]."""
    for line in text.splitlines():
        match = _SCORES_LINE_RE.match(line)
        if match is None:
            continue
        try:
            first, second = float(match.group(1)), float(match.group(2))
        except ValueError as exc:
            raise ScoreParseError(f"non-numeric score tokens in line {line.strip()!r}") from exc
        return ScorePair(first=first, second=second)
    raise ScoreParseError(f"no SCORES line found in judge output: {text[:120]!r}")


def difficulty(r_s: float, r_t: float) -> float:
    """Difficulty of an instruction from the averaged judge scores.

    (|r_s - r_t| + 1) / max(r_s, r_t); the +1 keeps equal-score instructions
    apart: a (1, 1) pair is maximally hard while (9, 9) is easy. When both
    scores are 0 the value is defined as 1.0 (both models failed outright).
    The result is deliberately not clamped at 1.
    """
    for name, value in (("r_s", r_s), ("r_t", r_t)):
        if not 0.0 <= value <= SCORE_SCALE:
            raise ValueError(f"{name}={value} outside [0, {SCORE_SCALE:g}]")
    top = max(r_s, r_t)
    if top == 0.0:
        return 1.0
    return (abs(r_s - r_t) + 1.0) / top


def classify(s_k: float, tau: float) -> DifficultyClass:
    """Difficult iff s_k >= tau (the boundary counts as difficult)."""
    if s_k < 0 or tau < 0:
        raise ValueError("s_k and tau must be >= 0")
    return DifficultyClass.DIFFICULT if s_k >= tau else DifficultyClass.EASY


def _judge_once(
    assessor: ChatBackend,
    instruction: InstructionRecord,
    answer_a: str,
    answer_b: str,
    temperature: float,
    parse_attempts: int,
) -> ScorePair | None:
    """One judging run with retry-on-unparseable; None when retries run out."""
    request = ChatRequest(
        role=Role.ASSESSOR,
        image=instruction.image,
        messages=build_judge_prompt(instruction.question, answer_a, answer_b),
        temperature=temperature,
    )
    for attempt in range(1, parse_attempts + 1):
        response = assessor.complete(request)
        try:
            return parse_scores(response.text)
        except ScoreParseError as exc:
            log.warning(
                "judge output unparseable for %s (attempt %d/%d): %s",
                instruction.id, attempt, parse_attempts, exc,
            )
    return None


def score_with_swap(
    instruction: InstructionRecord,
    student_answer: str,
    teacher_answer: str,
    assessor: ChatBackend,
    tau: float = 0.33,
    temperature: float = 0.5,
    parse_attempts: int = 3,
    result_iteration: int | None = None,
) -> AssessmentResult:
    """Judge both presentation orders and average the per-model scores.

    Run 1 shows the student first, run 2 shows the teacher first. If either
    run stays unparseable after the retry budget the instruction is skipped
    (it remains in the cache pool for a later iteration). Permanent backend
    errors propagate to the caller.
    """
    if not student_answer.strip() or not teacher_answer.strip():
        raise ValueError("answers must be non-empty")
    iteration = instruction.iteration if result_iteration is None else result_iteration

    order1 = _judge_once(
        assessor, instruction, student_answer, teacher_answer, temperature, parse_attempts
    )
    order2 = None
    if order1 is not None:
        order2 = _judge_once(
            assessor, instruction, teacher_answer, student_answer, temperature, parse_attempts
        )
    if order1 is None or order2 is None:
        return AssessmentResult(
            instruction_id=instruction.id,
            iteration=iteration,
            student_answer=student_answer,
            teacher_answer=teacher_answer,
            status=AssessmentStatus.SKIPPED_PARSE_FAILURE,
        )

    # order1 shows the student first; order2 shows the teacher first.
    r_s = (order1.first + order2.second) / 2.0
    r_t = (order1.second + order2.first) / 2.0
    s_k = difficulty(r_s, r_t)
    return AssessmentResult(
        instruction_id=instruction.id,
        iteration=iteration,
        student_answer=student_answer,
        teacher_answer=teacher_answer,
        status=AssessmentStatus.OK,
        order1=order1,
        order2=order2,
        r_s=r_s,
        r_t=r_t,
        s_k=s_k,
        difficulty_class=classify(s_k, tau),
    )


def skipped_result(
    instruction: InstructionRecord,
    student_answer: str,
    teacher_answer: str,
    error: BackendError,
    result_iteration: int | None = None,
) -> AssessmentResult:
    """Assessment placeholder for an instruction whose backend calls failed."""
    if not isinstance(error, PermanentBackendError):
        log.warning("skipping %s after backend error: %s", instruction.id, error)
    return AssessmentResult(
        instruction_id=instruction.id,
        iteration=instruction.iteration if result_iteration is None else result_iteration,
        student_answer=student_answer,
        teacher_answer=teacher_answer,
        status=AssessmentStatus.SKIPPED_BACKEND_ERROR,
    )
