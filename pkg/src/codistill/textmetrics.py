"""Exact ROUGE-L similarity between token sequences.

Used as the novelty gate for generated instructions: a candidate is novel
when its ROUGE-L F1 against every existing instruction on the same image
stays below a threshold.
"""

from __future__ import annotations

import re
from typing import Sequence

# Token sequences are plain lists of lowercase tokens.
TokenSeq = list[str]

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> TokenSeq:
    """Lowercase and split on whitespace/punctuation; punctuation is dropped."""
    return _TOKEN_RE.findall(text.lower())


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Length of the longest common subsequence of two token sequences."""
    if not a or not b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """ROUGE-L F1 (beta=1) between two token sequences.

    Defined as 0.0 when either sequence is empty or they share no
    subsequence.
    """
    if not candidate or not reference:
        return 0.0
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    precision = lcs / len(candidate)
    recall = lcs / len(reference)
    return 2.0 * precision * recall / (precision + recall)


def rouge_l_text(candidate_text: str, reference_text: str) -> float:
    """Convenience wrapper: tokenize both strings, then score."""
    return rouge_l(tokenize(candidate_text), tokenize(reference_text))
