"""Instruction augmentation with a ROUGE-L novelty gate.

Each difficult instruction, plus an equal-sized sample of easy ones, prompts
the augmentor for one replacement question about the same image and task
type. A candidate is kept only when its ROUGE-L F1 stays below the novelty
threshold against every other instruction already known for that image,
including candidates accepted earlier in the same batch.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from typing import Sequence

from .backends.base import (
    BackendError,
    ChatBackend,
    ChatRequest,
    Message,
    Role,
    Speaker,
    complete_batch,
)
from .pools import PoolState
from .records import InstructionRecord, Origin, content_id
from .textmetrics import rouge_l, tokenize

log = logging.getLogger(__name__)

DEFAULT_ROUGE_THRESHOLD = 0.7
MAX_CANDIDATE_CHARS = 2048

REJECT_DUPLICATE = "duplicate"
REJECT_EMPTY = "empty"
REJECT_OVERSIZE = "oversize"
REJECT_BACKEND_ERROR = "backend_error"

_TASK_DIRECTIVES = {
    "conversation": "a conversational question",
    "detail_description": "a detail-description request",
    "complex_reasoning": "a complex-reasoning question",
    "unknown": "the same kind of question",
}

_CLASS_DESCRIPTORS = {
    "difficult": "challenging",
    "easy": "straightforward",
}


@dataclass
class AugmentationBatch:
    """Outcome of one augmentation round."""

    difficult: list[InstructionRecord]
    easy_sampled: list[InstructionRecord]
    accepted: list[InstructionRecord] = field(default_factory=list)
    rejected_count_by_reason: dict[str, int] = field(
        default_factory=lambda: {
            REJECT_DUPLICATE: 0,
            REJECT_EMPTY: 0,
            REJECT_OVERSIZE: 0,
            REJECT_BACKEND_ERROR: 0,
        }
    )

    @property
    def generated(self) -> int:
        """Candidates actually obtained from the augmentor (pre-gate)."""
        return (
            len(self.accepted)
            + self.rejected_count_by_reason[REJECT_DUPLICATE]
            + self.rejected_count_by_reason[REJECT_EMPTY]
            + self.rejected_count_by_reason[REJECT_OVERSIZE]
        )

    def to_dict(self) -> dict:
        return {
            "difficult_ids": [r.id for r in self.difficult],
            "easy_sampled_ids": [r.id for r in self.easy_sampled],
            "accepted_ids": [r.id for r in self.accepted],
            "rejected_count_by_reason": dict(self.rejected_count_by_reason),
        }


def sample_easy(
    easy: Sequence[InstructionRecord], n_difficult: int, rng_seed: int
) -> list[InstructionRecord]:
    """Uniform sample of easy instructions, one per difficult instruction.

    When there are fewer easy instructions than difficult ones, all easy
    instructions are used. The draw is seeded and independent of the input
    ordering (records are sorted by id before sampling).
    """
    if n_difficult < 0:
        raise ValueError("n_difficult must be >= 0")
    ordered = sorted(easy, key=lambda r: r.id)
    k = min(n_difficult, len(ordered))
    if k == 0:
        return []
    return random.Random(rng_seed).sample(ordered, k)


def build_augment_prompt(
    instruction: InstructionRecord, difficulty_class: str
) -> tuple[Message, ...]:
    """Prompt asking for one new question about the same image.

    The response contract: the entire trimmed reply is the new question.
    """
    directive = _TASK_DIRECTIVES.get(instruction.task_type.value, _TASK_DIRECTIVES["unknown"])
    descriptor = _CLASS_DESCRIPTORS.get(str(difficulty_class), "comparable")
    user = (
        "You are shown an image together with an existing question about it.\n"
        f"Original question: {instruction.question}\n"
        f"The original is {descriptor} and is {directive}.\n"
        "Write ONE new question about the same image. It must be the same "
        "kind of question, stay comparably "
        f"{descriptor}, and differ in content from the original.\n"
        "Reply with the new question only, no preamble."
    )
    return (Message(Speaker.USER, user),)


def novelty_gate(
    candidate_text: str,
    peers: Sequence[InstructionRecord],
    threshold: float = DEFAULT_ROUGE_THRESHOLD,
) -> str | None:
    """Gate a candidate question against its image's existing instructions.

    Returns None to accept, or a rejection reason. Accepts iff the maximum
    ROUGE-L against every peer question is strictly below the threshold.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must be in (0, 1]")
    if not candidate_text.strip():
        return REJECT_EMPTY
    candidate_tokens = tokenize(candidate_text)
    for peer in peers:
        if rouge_l(candidate_tokens, tokenize(peer.question)) >= threshold:
            return REJECT_DUPLICATE
    return None


def augment_iteration(
    difficult: Sequence[InstructionRecord],
    easy: Sequence[InstructionRecord],
    augmentor: ChatBackend,
    rng_seed: int,
    threshold: float = DEFAULT_ROUGE_THRESHOLD,
    cache: PoolState | None = None,
    temperature: float = 0.5,
    max_in_flight: int = 1,
    max_candidate_chars: int = MAX_CANDIDATE_CHARS,
) -> AugmentationBatch:
    """Run one augmentation round over the classified instructions.

    Sources are all difficult instructions plus an equal-count seeded sample
    of easy ones, processed in sorted-id order so the accept set is
    deterministic. Peers for the novelty gate are the cache pool's
    instructions for the candidate's image plus candidates already accepted
    in this batch for that image. Per-source backend failures are counted,
    not fatal.
    """
    easy_sampled = sample_easy(easy, len(difficult), rng_seed)
    class_by_id = {r.id: "difficult" for r in difficult}
    class_by_id.update({r.id: "easy" for r in easy_sampled})
    sources = sorted(list(difficult) + easy_sampled, key=lambda r: r.id)
    batch = AugmentationBatch(difficult=list(difficult), easy_sampled=easy_sampled)

    peers_by_image: dict[str, list[InstructionRecord]] = {}
    if cache is not None:
        for record in cache.sorted_cache():
            peers_by_image.setdefault(record.image.uri, []).append(record)
    new_iteration = (cache.iteration + 1) if cache is not None else 1

    requests = [
        ChatRequest(
            role=Role.AUGMENTOR,
            image=source.image,
            messages=build_augment_prompt(source, class_by_id[source.id]),
            temperature=temperature,
        )
        for source in sources
    ]
    responses = complete_batch(augmentor, requests, max_in_flight=max_in_flight)

    for source, response in zip(sources, responses):
        if isinstance(response, BackendError):
            log.warning("augmentor failed for %s: %s", source.id, response)
            batch.rejected_count_by_reason[REJECT_BACKEND_ERROR] += 1
            continue
        candidate = response.text.strip()
        if len(candidate) > max_candidate_chars:
            batch.rejected_count_by_reason[REJECT_OVERSIZE] += 1
            continue
        peers = peers_by_image.get(source.image.uri, [])
        verdict = novelty_gate(candidate, peers, threshold)
        if verdict is not None:
            batch.rejected_count_by_reason[verdict] += 1
            continue
        record = InstructionRecord(
            id=content_id("augment", source.id, new_iteration),
            image=source.image,
            question=candidate,
            task_type=source.task_type,
            origin=Origin.AUGMENTED,
            parent_id=source.id,
            iteration=new_iteration,
        )
        batch.accepted.append(record)
        peers_by_image.setdefault(source.image.uri, []).append(record)

    return batch
