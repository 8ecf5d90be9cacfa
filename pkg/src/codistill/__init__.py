"""codistill: a competitive distillation loop for multi-modal instruction data.

The library drives an iterative teacher/student cycle: the teacher answers
the current instruction pool (tune), a judge scores both models' answers to
estimate per-instruction difficulty (assess), and an augmentor generates
novel replacement instructions biased toward what the student finds hard
(augment). Everything runs against either remote chat-completion endpoints
or fully deterministic in-process synthetic agents.
"""

from .assess import (
    AssessmentResult,
    AssessmentStatus,
    DifficultyClass,
    ScorePair,
    build_judge_prompt,
    classify,
    difficulty,
    parse_scores,
    score_with_swap,
)
from .augment import (
    AugmentationBatch,
    augment_iteration,
    build_augment_prompt,
    novelty_gate,
    sample_easy,
)
from .config import RunConfig, load_config, save_config
from .corpusfilter import (
    CaptionPair,
    PhraseIndex,
    build_index,
    extract_noun_phrases,
    filter_pairs,
)
from .pools import PoolState, init_pools, refresh, restore, snapshot
from .records import (
    AnswerRecord,
    ConversationSample,
    ImageRef,
    InstructionRecord,
    Origin,
    TaskType,
    read_records,
    to_single_turn,
    write_records,
)
from .rendering import (
    ImagePosition,
    RenderedSequence,
    Span,
    SpanKind,
    render_conversation,
)
from .textmetrics import lcs_length, rouge_l, tokenize

__version__ = "0.1.0"

__all__ = [
    "AnswerRecord",
    "AssessmentResult",
    "AssessmentStatus",
    "AugmentationBatch",
    "CaptionPair",
    "ConversationSample",
    "DifficultyClass",
    "ImagePosition",
    "ImageRef",
    "InstructionRecord",
    "Origin",
    "PhraseIndex",
    "PoolState",
    "RenderedSequence",
    "RunConfig",
    "ScorePair",
    "Span",
    "SpanKind",
    "TaskType",
    "augment_iteration",
    "build_augment_prompt",
    "build_index",
    "build_judge_prompt",
    "classify",
    "difficulty",
    "extract_noun_phrases",
    "filter_pairs",
    "init_pools",
    "lcs_length",
    "load_config",
    "novelty_gate",
    "parse_scores",
    "read_records",
    "refresh",
    "render_conversation",
    "restore",
    "rouge_l",
    "sample_easy",
    "save_config",
    "score_with_swap",
    "snapshot",
    "to_single_turn",
    "tokenize",
    "write_records",
]
