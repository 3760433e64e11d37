"""Ratcliff-Obershelp text similarity used for near-duplicate detection.

Pure implementation: no junk or popularity heuristics, so the result is a
deterministic function of the two strings. The ratio is 2*M/(|a|+|b|) where
M is the total number of characters covered by recursively chosen longest
common contiguous blocks. Ties between equally long blocks are broken by
the earliest start in `a`, then the earliest start in `b`.
"""

from __future__ import annotations

from collections import Counter


def _index_positions(b: str) -> dict[str, list[int]]:
    positions: dict[str, list[int]] = {}
    for j, ch in enumerate(b):
        positions.setdefault(ch, []).append(j)
    return positions


def _longest_block(
    a: str,
    b2j: dict[str, list[int]],
    alo: int,
    ahi: int,
    blo: int,
    bhi: int,
) -> tuple[int, int, int]:
    """Longest common contiguous block of a[alo:ahi] and b[blo:bhi].

    Returns (i, j, size) with the tie-breaking described in the module
    docstring; size 0 when nothing matches.
    """
    best_i, best_j, best_size = alo, blo, 0
    # lengths[j] = length of the common suffix ending at a[i], b[j]
    lengths: dict[int, int] = {}
    for i in range(alo, ahi):
        new_lengths: dict[int, int] = {}
        for j in b2j.get(a[i], ()):
            if j < blo:
                continue
            if j >= bhi:
                break
            k = lengths.get(j - 1, 0) + 1
            new_lengths[j] = k
            if k > best_size:
                best_i, best_j, best_size = i - k + 1, j - k + 1, k
        lengths = new_lengths
    return best_i, best_j, best_size


def matched_characters(a: str, b: str) -> int:
    """Total characters matched by the Ratcliff-Obershelp recursion."""
    b2j = _index_positions(b)
    total = 0
    segments = [(0, len(a), 0, len(b))]
    while segments:
        alo, ahi, blo, bhi = segments.pop()
        if alo >= ahi or blo >= bhi:
            continue
        i, j, size = _longest_block(a, b2j, alo, ahi, blo, bhi)
        if size == 0:
            continue
        total += size
        segments.append((alo, i, blo, j))
        segments.append((i + size, ahi, j + size, bhi))
    return total


def similarity_ratio(a: str, b: str) -> float:
    """Similarity of two strings in [0, 1].

    1.0 for equal strings (including two empty strings), 0.0 when no
    characters can be matched.
    """
    total_len = len(a) + len(b)
    if total_len == 0:
        return 1.0
    return 2.0 * matched_characters(a, b) / total_len


def ratio_upper_bound(a: str, b: str) -> float:
    """Cheap upper bound on similarity_ratio from character multisets.

    Matched characters can never exceed the multiset intersection of the
    two strings, so this never underestimates the true ratio. Used to
    prune candidates during duplicate scans.
    """
    total_len = len(a) + len(b)
    if total_len == 0:
        return 1.0
    overlap = sum((Counter(a) & Counter(b)).values())
    return 2.0 * overlap / total_len


def length_upper_bound(len_a: int, len_b: int) -> float:
    """Even cheaper bound using only lengths: 2*min/(sum)."""
    total = len_a + len_b
    if total == 0:
        return 1.0
    return 2.0 * min(len_a, len_b) / total
