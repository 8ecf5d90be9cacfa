"""Deterministic synthetic agents for fully offline loop simulation.

The synthetic world models answer quality as a per-topic number in [0, 1].
A question's topic is the text before its first colon ("counting: how many
cups are there?"). Teacher skill is fixed; student skill starts lower and
moves toward the teacher's each time the student trains on an export that
covers the topic. Answers embed their grade in a machine-readable marker so
the synthetic assessor can score them without any language understanding,
and the score it gives depends only on the answer itself, never on
presentation order.
"""

from __future__ import annotations

import hashlib
import re
import threading
import time
from typing import Iterable, Sequence

from ..records import ConversationSample
from .base import (
    BackendResponse,
    ChatBackend,
    ChatRequest,
    PermanentBackendError,
    truncate_output,
)

GRADE_MARKER_RE = re.compile(r"\[\[grade=([0-9.]+)\]\]")

DEFAULT_TOPIC = "_default"

# Word banks for the synthetic augmentor. Candidates draw one word per bank,
# so two candidates for the same image rarely share more than the topic
# token and stay under the novelty threshold.
_VERBS = [
    "describe", "count", "compare", "locate", "identify", "estimate", "explain",
    "summarize", "contrast", "interpret", "examine", "classify", "assess",
    "inspect", "trace", "enumerate", "judge", "outline", "characterize", "rank",
]
_ADJECTIVES = [
    "small", "large", "bright", "dark", "distant", "nearby", "partially hidden",
    "reflective", "blurred", "colorful", "overlapping", "isolated", "textured",
    "patterned", "shadowed", "prominent", "unusual", "symmetric", "cluttered",
    "faded",
]
_NOUNS = [
    "objects", "figures", "signs", "animals", "vehicles", "buildings", "tools",
    "plants", "containers", "surfaces", "edges", "regions", "patterns",
    "shapes", "markings", "fixtures", "garments", "utensils", "instruments",
    "landmarks",
]
_TAILS = [
    "near the left border", "in the background", "closest to the camera",
    "along the top edge", "in the central region", "beside the main subject",
    "in the lower corner", "against the horizon", "under direct light",
    "within the shaded area", "next to the largest item", "furthest from view",
    "between the two halves", "around the focal point", "at the boundary",
    "inside the frame", "opposite the light source", "behind the foreground",
    "above the midline", "toward the right side",
]


def topic_of(question: str) -> str:
    """Topic prefix of a synthetic question, or the default bucket."""
    head, sep, _ = question.partition(":")
    if not sep:
        return DEFAULT_TOPIC
    return head.strip().lower() or DEFAULT_TOPIC


def _stable_int(*parts: str) -> int:
    raw = "\x1f".join(parts)
    return int.from_bytes(hashlib.sha256(raw.encode("utf-8")).digest()[:8], "big")


class SyntheticWorld:
    """Shared skill tables for one simulated teacher/student pair."""

    def __init__(
        self,
        teacher_skills: dict[str, float] | None = None,
        student_skills: dict[str, float] | None = None,
        default_teacher_skill: float = 0.9,
        default_student_skill: float = 0.3,
        learning_rate: float = 0.5,
    ):
        if not 0.0 < learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")
        self._lock = threading.Lock()
        self.teacher_skills = dict(teacher_skills or {})
        self.student_skills = dict(student_skills or {})
        self.default_teacher_skill = float(default_teacher_skill)
        self.default_student_skill = float(default_student_skill)
        self.learning_rate = float(learning_rate)

    def teacher_skill(self, topic: str) -> float:
        with self._lock:
            return self.teacher_skills.get(topic, self.default_teacher_skill)

    def student_skill(self, topic: str) -> float:
        with self._lock:
            return self.student_skills.get(topic, self.default_student_skill)

    def train_student(self, topics: Iterable[str], learning_rate: float | None = None) -> None:
        """Move the student toward the teacher on each covered topic.

        Single step per topic per call: q' = min(q_T, q + lr * (q_T - q)).
        """
        lr = self.learning_rate if learning_rate is None else learning_rate
        with self._lock:
            for topic in set(topics):
                q_t = self.teacher_skills.get(topic, self.default_teacher_skill)
                q_s = self.student_skills.get(topic, self.default_student_skill)
                self.student_skills[topic] = min(q_t, q_s + lr * (q_t - q_s))

    def snapshot_student(self) -> dict[str, float]:
        with self._lock:
            return dict(self.student_skills)

    def restore_student(self, skills: dict[str, float]) -> None:
        with self._lock:
            self.student_skills = dict(skills)


def _answer_text(topic: str, grade: float, question: str, persona: str) -> str:
    flavor = _stable_int(persona, topic, question) % 997
    return (
        f"Looking at the image, the {topic} aspects point to observation #{flavor}. "
        f"This {persona} response addresses: {question.strip()} [[grade={grade:.6f}]]"
    )


class _AnsweringBackend(ChatBackend):
    """Shared machinery for the synthetic teacher and student."""

    persona = "model"

    def __init__(self, world: SyntheticWorld):
        self.world = world

    def _grade(self, topic: str) -> float:
        raise NotImplementedError

    def complete(self, request: ChatRequest) -> BackendResponse:
        started = time.monotonic()
        question = request.last_user_text()
        topic = topic_of(question)
        text = _answer_text(topic, self._grade(topic), question, self.persona)
        text, truncated = truncate_output(text, request.max_output_chars)
        return BackendResponse(
            text=text,
            latency_ms=int((time.monotonic() - started) * 1000),
            attempts=1,
            truncated=truncated,
        )


class SyntheticTeacher(_AnsweringBackend):
    persona = "teacher"

    def _grade(self, topic: str) -> float:
        return self.world.teacher_skill(topic)


class SyntheticStudent(_AnsweringBackend):
    persona = "student"

    def _grade(self, topic: str) -> float:
        return self.world.student_skill(topic)


def synthetic_student_update(
    backend: ChatBackend,
    training_export: Sequence[ConversationSample],
    learning_rate: float | None = None,
) -> None:
    """Simulate one training round on the exported dataset.

    For every topic covered by the export, the student's skill moves toward
    the teacher's by the learning-rate fraction of the remaining gap, capped
    at the teacher's level. An empty export changes nothing.
    """
    if not isinstance(backend, SyntheticStudent):
        raise PermanentBackendError("synthetic_student_update requires a synthetic student backend")
    if learning_rate is not None and not 0.0 < learning_rate <= 1.0:
        raise ValueError("learning_rate must be in (0, 1]")
    topics = set()
    for sample in training_export:
        for question, _answer in sample.turns:
            topics.add(topic_of(question))
    if topics:
        backend.world.train_student(topics, learning_rate)


def extract_grade(answer_text: str) -> float | None:
    """Read the embedded grade marker from a synthetic answer, if any."""
    match = GRADE_MARKER_RE.search(answer_text)
    if match is None:
        return None
    try:
        grade = float(match.group(1))
    except ValueError:
        return None
    return min(1.0, max(0.0, grade))


_BLOCK_A_RE = re.compile(
    r"\[Assistant A's answer\]\n(.*?)\n\[End of Assistant A's answer\]", re.DOTALL
)
_BLOCK_B_RE = re.compile(
    r"\[Assistant B's answer\]\n(.*?)\n\[End of Assistant B's answer\]", re.DOTALL
)


class SyntheticAssessor(ChatBackend):
    """Order-symmetric judge: each answer's score is a function of that
    answer alone (its embedded grade, or a stable hash when absent)."""

    def __init__(self, world: SyntheticWorld | None = None):
        self.world = world

    def _score(self, answer: str) -> float:
        grade = extract_grade(answer)
        if grade is None:
            grade = (_stable_int("ungraded-answer", answer) % 1001) / 1000.0
        return round(10.0 * grade, 4)

    def complete(self, request: ChatRequest) -> BackendResponse:
        started = time.monotonic()
        prompt = request.last_user_text()
        found_a = _BLOCK_A_RE.search(prompt)
        found_b = _BLOCK_B_RE.search(prompt)
        if found_a is None or found_b is None:
            raise PermanentBackendError("judge prompt is missing the two answer blocks")
        score_a = self._score(found_a.group(1))
        score_b = self._score(found_b.group(1))
        text = (
            f"SCORES: {score_a:.4f} {score_b:.4f}\n"
            "Both answers were weighed on usefulness, relevance, accuracy, and level of detail."
        )
        text, truncated = truncate_output(text, request.max_output_chars)
        return BackendResponse(
            text=text,
            latency_ms=int((time.monotonic() - started) * 1000),
            attempts=1,
            truncated=truncated,
        )


_ORIGINAL_QUESTION_RE = re.compile(r"^Original question: (.*)$", re.MULTILINE)


class SyntheticAugmentor(ChatBackend):
    """Produces a fresh question on the same topic as the source question.

    The candidate is a pure function of the prompt text, drawing one word
    per bank, so distinct sources yield distinct low-overlap questions.
    """

    def __init__(self, world: SyntheticWorld | None = None):
        self.world = world

    def complete(self, request: ChatRequest) -> BackendResponse:
        started = time.monotonic()
        prompt = request.last_user_text()
        match = _ORIGINAL_QUESTION_RE.search(prompt)
        if match is None:
            raise PermanentBackendError("augment prompt is missing the original question line")
        original = match.group(1)
        topic = topic_of(original)
        seed = _stable_int("augment", prompt)
        verb = _VERBS[seed % len(_VERBS)]
        adjective = _ADJECTIVES[(seed // 31) % len(_ADJECTIVES)]
        noun = _NOUNS[(seed // 1021) % len(_NOUNS)]
        tail = _TAILS[(seed // 65537) % len(_TAILS)]
        text = f"{topic}: {verb} the {adjective} {noun} {tail}"
        text, truncated = truncate_output(text, request.max_output_chars)
        return BackendResponse(
            text=text,
            latency_ms=int((time.monotonic() - started) * 1000),
            attempts=1,
            truncated=truncated,
        )


class EchoAugmentor(ChatBackend):
    """Degenerate augmentor that repeats the source question verbatim."""

    def complete(self, request: ChatRequest) -> BackendResponse:
        match = _ORIGINAL_QUESTION_RE.search(request.last_user_text())
        if match is None:
            raise PermanentBackendError("augment prompt is missing the original question line")
        return BackendResponse(text=match.group(1), latency_ms=0, attempts=1)


class TableBackend(ChatBackend):
    """Canned lookup backend for tests: maps a prompt substring to a reply."""

    def __init__(self, table: dict[str, str], default: str | None = None):
        self.table = dict(table)
        self.default = default

    def complete(self, request: ChatRequest) -> BackendResponse:
        prompt = request.last_user_text()
        for needle, reply in self.table.items():
            if needle in prompt:
                return BackendResponse(text=reply, latency_ms=0, attempts=1)
        if self.default is not None:
            return BackendResponse(text=self.default, latency_ms=0, attempts=1)
        raise PermanentBackendError(f"no scripted reply for prompt: {prompt[:80]!r}")
