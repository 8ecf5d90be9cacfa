"""Serialization of conversations into trainable sequences.

A rendered sequence is the byte-exact concatenation of its spans: system
prompt, image token, questions, answers, and the stop marker that terminates
every question and answer. The loss mask is the set of answer spans plus
the stop span that follows each answer, and nothing else; the trainer is
expected to compute loss only inside masked regions.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum

from .records import ConversationSample

IMAGE_TOKEN = "<image>"

DEFAULT_STOP_TOKEN = "###"


class SpanKind(str, Enum):
    PROMPT = "prompt"
    IMAGE_TOKEN = "image_token"
    QUESTION = "question"
    ANSWER = "answer"
    STOP = "stop"


class ImagePosition(str, Enum):
    """Where the image token sits relative to the first question."""

    BEFORE_QUESTION = "before_question"
    AFTER_QUESTION = "after_question"
    RANDOMIZED = "randomized"


class RenderError(ValueError):
    pass


@dataclass(frozen=True)
class Span:
    """Half-open byte range [start, end) of the rendered UTF-8 text."""

    start: int
    end: int
    kind: SpanKind

    def to_list(self) -> list:
        return [self.start, self.end, self.kind.value]


@dataclass(frozen=True)
class RenderedSequence:
    text: str
    spans: tuple[Span, ...]

    @property
    def loss_mask(self) -> tuple[Span, ...]:
        """Answer spans and the stop span trailing each answer."""
        masked = []
        previous = None
        for span in self.spans:
            if span.kind is SpanKind.ANSWER:
                masked.append(span)
            elif span.kind is SpanKind.STOP and previous is not None and previous.kind is SpanKind.ANSWER:
                masked.append(span)
            previous = span
        return tuple(masked)

    def span_text(self, span: Span) -> str:
        return self.text.encode("utf-8")[span.start : span.end].decode("utf-8")

    def mask_text(self) -> str:
        """Concatenation of the loss-masked regions."""
        return "".join(self.span_text(s) for s in self.loss_mask)


def render_conversation(
    sample: ConversationSample,
    system_prompt: str = "",
    stop_token: str = DEFAULT_STOP_TOKEN,
    image_position_policy: ImagePosition = ImagePosition.RANDOMIZED,
    rng_seed: int = 0,
) -> RenderedSequence:
    """Render a conversation into one training sequence.

    Turn 1 carries the system prompt plus the image token and first question,
    in the order picked by the position policy (a 50/50 draw from ``rng_seed``
    when randomized). Later turns carry only their question. Every question
    and answer is terminated by ``stop_token``.

    Raises RenderError if the stop token occurs inside any question or answer,
    since that would make the segmentation ambiguous.
    """
    if not stop_token:
        raise RenderError("stop_token must be non-empty")
    for t, (q, a) in enumerate(sample.turns):
        if stop_token in q or stop_token in a:
            raise RenderError(
                f"sample {sample.id}: stop token {stop_token!r} occurs inside turn {t} text"
            )

    policy = ImagePosition(image_position_policy)
    if policy is ImagePosition.RANDOMIZED:
        image_first = random.Random(rng_seed).random() < 0.5
    else:
        image_first = policy is ImagePosition.BEFORE_QUESTION

    pieces: list[tuple[str, SpanKind]] = []
    first_q = sample.turns[0][0]
    if system_prompt:
        pieces.append((system_prompt, SpanKind.PROMPT))
    if image_first:
        pieces.append((IMAGE_TOKEN, SpanKind.IMAGE_TOKEN))
        pieces.append((first_q, SpanKind.QUESTION))
    else:
        pieces.append((first_q, SpanKind.QUESTION))
        pieces.append((IMAGE_TOKEN, SpanKind.IMAGE_TOKEN))
    pieces.append((stop_token, SpanKind.STOP))
    pieces.append((sample.turns[0][1], SpanKind.ANSWER))
    pieces.append((stop_token, SpanKind.STOP))
    for q, a in sample.turns[1:]:
        pieces.append((q, SpanKind.QUESTION))
        pieces.append((stop_token, SpanKind.STOP))
        pieces.append((a, SpanKind.ANSWER))
        pieces.append((stop_token, SpanKind.STOP))

    spans: list[Span] = []
    offset = 0
    for text, kind in pieces:
        nbytes = len(text.encode("utf-8"))
        spans.append(Span(offset, offset + nbytes, kind))
        offset += nbytes

    return RenderedSequence(text="".join(p[0] for p in pieces), spans=tuple(spans))
