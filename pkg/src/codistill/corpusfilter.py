"""Noun-phrase frequency filtering of image-caption pairs.

Builds the pre-training corpus manifest: phrases seen in fewer than
``min_freq`` pairs are dropped as rare concepts, the remaining phrases are
visited from rarest to most frequent, and each contributes its pairs to the
selection, sampling down to ``cap`` pairs for over-represented phrases.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .records import ImageRef, RecordError
from .textmetrics import tokenize

# Small fixed stopword list for the default phrase extractor. Maximal runs
# of non-stopword tokens between these boundaries become candidate phrases.
STOPWORDS = frozenset(
    """
    a an the this that these those some any each every no
    and or but nor so yet if then than because while
    of on in at by for with to from into onto over under near off up down
    out about above below between through during against around
    is are was were be been being am do does did has have had having
    it its it's as not very there here which who whom whose what when where
    how why i you he she we they them him her my your his our their me us
    """.split()
)

MAX_PHRASE_TOKENS = 3


@dataclass(frozen=True)
class CaptionPair:
    """One image-caption pair, optionally with precomputed phrases."""

    pair_id: str
    image: ImageRef
    caption: str
    phrases: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.pair_id:
            raise RecordError("pair_id must be non-empty")
        if not self.caption.strip():
            raise RecordError(f"pair {self.pair_id}: caption must be non-empty")
        if self.phrases is not None:
            object.__setattr__(self, "phrases", tuple(self.phrases))

    def to_dict(self) -> dict:
        out = {"pair_id": self.pair_id, "image_uri": self.image.uri, "caption": self.caption}
        if self.image.content_hash:
            out["image_hash"] = self.image.content_hash
        if self.phrases is not None:
            out["phrases"] = list(self.phrases)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "CaptionPair":
        try:
            phrases = d.get("phrases")
            return cls(
                pair_id=d["pair_id"],
                image=ImageRef(uri=d["image_uri"], content_hash=d.get("image_hash")),
                caption=d["caption"],
                phrases=tuple(phrases) if phrases is not None else None,
            )
        except (KeyError, TypeError) as exc:
            raise RecordError(f"bad caption pair: {exc}") from exc


@dataclass(frozen=True)
class PhraseIndex:
    """Pair-level (document) frequency index over noun phrases."""

    postings: dict[str, frozenset[str]]

    @property
    def freq(self) -> dict[str, int]:
        return {phrase: len(ids) for phrase, ids in self.postings.items()}


def extract_noun_phrases(caption: str) -> list[str]:
    """Heuristic noun-phrase extractor.

    Lowercases, strips punctuation, then takes each maximal run of
    non-stopword tokens and keeps its last 1-3 tokens (modifiers plus head
    word). A pluggable real extractor, or a precomputed ``phrases`` column
    in the manifest, can replace this.
    """
    tokens = tokenize(caption)
    phrases: list[str] = []
    run: list[str] = []
    for token in tokens + [""]:  # sentinel flushes the final run
        if token and token not in STOPWORDS:
            run.append(token)
            continue
        if run:
            phrases.append(" ".join(run[-MAX_PHRASE_TOKENS:]))
            run = []
    return phrases


def phrases_of(pair: CaptionPair,
               extractor: Callable[[str], list[str]] = extract_noun_phrases) -> set[str]:
    """Phrase set for one pair (precomputed column wins over the extractor)."""
    if pair.phrases is not None:
        return {p.strip().lower() for p in pair.phrases if p.strip()}
    return set(extractor(pair.caption))


def build_index(
    pairs: Sequence[CaptionPair],
    extractor: Callable[[str], list[str]] = extract_noun_phrases,
) -> PhraseIndex:
    """Index every pair by the phrases its caption contains.

    A phrase occurring several times in one caption counts that pair once.
    """
    postings: dict[str, set[str]] = {}
    seen: set[str] = set()
    for pair in pairs:
        if pair.pair_id in seen:
            raise RecordError(f"duplicate pair_id {pair.pair_id!r}")
        seen.add(pair.pair_id)
        for phrase in phrases_of(pair, extractor):
            postings.setdefault(phrase, set()).add(pair.pair_id)
    return PhraseIndex(postings={p: frozenset(ids) for p, ids in postings.items()})


def filter_pairs(
    pairs: Sequence[CaptionPair],
    min_freq: int = 3,
    cap: int = 100,
    rng_seed: int = 0,
    extractor: Callable[[str], list[str]] = extract_noun_phrases,
) -> list[CaptionPair]:
    """Select pairs by phrase frequency, capping over-represented phrases.

    Phrases below ``min_freq`` are excluded. Remaining phrases are visited
    in ascending frequency (ties broken lexicographically); a phrase within
    the cap contributes all of its pairs, one above it contributes a seeded
    uniform sample of ``cap``. The selection is a set, deduplicated across
    phrases, and the output is sorted by pair_id.
    """
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    if cap < 1:
        raise ValueError("cap must be >= 1")
    index = build_index(pairs, extractor)
    by_id = {pair.pair_id: pair for pair in pairs}
    rng = random.Random(rng_seed)

    schedule = sorted(
        ((len(ids), phrase) for phrase, ids in index.postings.items() if len(ids) >= min_freq),
    )
    selected: set[str] = set()
    for freq, phrase in schedule:
        containing = sorted(index.postings[phrase])
        if freq <= cap:
            selected.update(containing)
        else:
            selected.update(rng.sample(containing, cap))
    return [by_id[pid] for pid in sorted(selected)]


def read_manifest(path: str | Path) -> list[CaptionPair]:
    pairs: list[CaptionPair] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                pair = CaptionPair.from_dict(json.loads(line))
            except (json.JSONDecodeError, RecordError) as exc:
                raise RecordError(f"{path}: line {lineno}: {exc}") from exc
            if pair.pair_id in seen:
                raise RecordError(f"{path}: line {lineno}: duplicate pair_id {pair.pair_id!r}")
            seen.add(pair.pair_id)
            pairs.append(pair)
    return pairs


def write_manifest(pairs: Sequence[CaptionPair], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for pair in pairs:
            f.write(json.dumps(pair.to_dict(), sort_keys=True, ensure_ascii=False,
                               separators=(",", ":")) + "\n")
