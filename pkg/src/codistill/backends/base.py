"""Chat-completion backend abstraction shared by all four model roles."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from ..records import ImageRef


class Role(str, Enum):
    TEACHER = "teacher"
    STUDENT = "student"
    ASSESSOR = "assessor"
    AUGMENTOR = "augmentor"


class Speaker(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


class BackendError(RuntimeError):
    """Base class for backend failures."""


class TransientBackendError(BackendError):
    """Transport or rate-limit failure; retrying may help."""


class PermanentBackendError(BackendError):
    """Protocol or request error; retrying cannot help."""


class EmptyResponseError(BackendError):
    """The model produced no usable output."""


@dataclass(frozen=True)
class Message:
    speaker: Speaker
    text: str

    def to_list(self) -> list[str]:
        return [self.speaker.value, self.text]


@dataclass(frozen=True)
class ChatRequest:
    """One chat-completion call for a specific model role.

    At most one image rides on a request; it applies to the whole
    conversation rather than to a single message.
    """

    role: Role
    messages: tuple[Message, ...]
    image: ImageRef | None = None
    temperature: float = 0.5
    max_output_chars: int = 8192

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ValueError("request needs at least one message")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_output_chars <= 0:
            raise ValueError("max_output_chars must be positive")

    def last_user_text(self) -> str:
        for message in reversed(self.messages):
            if message.speaker is Speaker.USER:
                return message.text
        return self.messages[-1].text

    def fingerprint(self) -> str:
        """Stable digest of everything that determines the response."""
        payload = {
            "role": self.role.value,
            "image": self.image.to_dict() if self.image else None,
            "messages": [m.to_list() for m in self.messages],
            "temperature": self.temperature,
            "max_output_chars": self.max_output_chars,
        }
        raw = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        return hashlib.sha256(raw.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class BackendResponse:
    text: str
    latency_ms: int = 0
    attempts: int = 1
    truncated: bool = False

    def __post_init__(self):
        if self.latency_ms < 0:
            raise ValueError("latency_ms must be >= 0")
        if self.attempts < 1:
            raise ValueError("attempts must be >= 1")


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_base_ms: int = 250
    retry_on: frozenset[type] = frozenset({TransientBackendError})

    def __post_init__(self):
        object.__setattr__(self, "retry_on", frozenset(self.retry_on))
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.backoff_base_ms <= 0:
            raise ValueError("backoff_base_ms must be positive")

    def should_retry(self, exc: BaseException) -> bool:
        return any(isinstance(exc, kind) for kind in self.retry_on)


class ChatBackend:
    """Interface every backend implements: one request in, one response out."""

    def complete(self, request: ChatRequest) -> BackendResponse:
        raise NotImplementedError


def truncate_output(text: str, max_output_chars: int) -> tuple[str, bool]:
    """Clip over-long model output instead of rejecting it."""
    if len(text) <= max_output_chars:
        return text, False
    return text[:max_output_chars], True


def complete_batch(
    backend: ChatBackend,
    requests: Sequence[ChatRequest],
    max_in_flight: int = 1,
) -> list[BackendResponse | BackendError]:
    """Run many requests with bounded parallelism.

    The result list is positionally aligned with ``requests``; failed items
    hold the raising error instead of a response, and one failure never
    aborts the rest of the batch.
    """
    if max_in_flight < 1:
        raise ValueError("max_in_flight must be >= 1")
    if not requests:
        return []

    def one(request: ChatRequest) -> BackendResponse | BackendError:
        try:
            return backend.complete(request)
        except BackendError as exc:
            return exc

    if max_in_flight == 1 or len(requests) == 1:
        return [one(r) for r in requests]
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(pool.map(one, requests))


def raise_batch_failures(results: Sequence[BackendResponse | BackendError]) -> list[BackendResponse]:
    """Unwrap a batch result, raising the first error found."""
    for item in results:
        if isinstance(item, BackendError):
            raise item
    return list(results)  # type: ignore[return-value]
