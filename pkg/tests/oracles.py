"""Independent brute-force oracles the implementation is checked against."""

import itertools


def is_subsequence(sub, seq) -> bool:
    it = iter(seq)
    return all(token in it for token in sub)


def lcs_by_enumeration(a, b) -> int:
    """LCS length by exhaustive subsequence enumeration of the shorter list."""
    if len(a) > len(b):
        a, b = b, a
    for k in range(len(a), 0, -1):
        seen = set()
        for combo in itertools.combinations(a, k):
            if combo in seen:
                continue
            seen.add(combo)
            if is_subsequence(combo, b):
                return k
    return 0


def rouge_f1_by_hand(lcs: int, len_candidate: int, len_reference: int) -> float:
    """The F1 formula evaluated directly from its definition."""
    if lcs == 0 or len_candidate == 0 or len_reference == 0:
        return 0.0
    precision = lcs / len_candidate
    recall = lcs / len_reference
    return 2 * precision * recall / (precision + recall)
