"""Collapsing functions and exhaustive inverse-image enumeration oracles.

The enumerators are deliberately naive: they exist to certify the
dynamic-programming losses at desk scale, so credibility beats speed.
Both enumerators are guarded by hard size limits.
"""

from __future__ import annotations

import itertools
import math

from .core import (
    AlignmentSeq,
    CapacityError,
    InvalidAlignmentError,
    TokenSeq,
    UsageError,
    Vocab,
)

CTC_ENUM_LIMIT = 10**7
TRA_ENUM_LIMIT = 10**6


def _collapse_ids(ids: tuple[int, ...], blank_id: int) -> tuple[int, ...]:
    out = []
    prev = -1
    for i in ids:
        if i != prev and i != blank_id:
            out.append(i)
        prev = i
    return tuple(out)


def ctc_collapse(a: AlignmentSeq, vocab: Vocab) -> TokenSeq:
    """Merge runs of identical consecutive symbols, then delete blanks."""
    for i in a.ids:
        if not 0 <= i < vocab.size:
            raise UsageError(f"alignment id {i} out of range for vocabulary {vocab.name!r}")
    return TokenSeq(_collapse_ids(a.ids, vocab.blank_id), vocab_tag=vocab.name)


def ctc_inverse_enumerate(w: TokenSeq, T: int, vocab: Vocab) -> list[AlignmentSeq]:
    """Every length-T alignment that collapses to ``w``, by brute force.

    Enumerates all (|V|+1)^T symbol sequences and keeps the compatible
    ones; guarded to at most ``CTC_ENUM_LIMIT`` candidates.
    """
    if T < 1:
        raise UsageError("T must be at least 1")
    if vocab.size**T > CTC_ENUM_LIMIT:
        raise CapacityError(f"{vocab.size}^{T} candidate alignments exceed the enumeration guard")
    target = tuple(w.ids)
    blank = vocab.blank_id
    out = []
    for cand in itertools.product(range(vocab.size), repeat=T):
        if _collapse_ids(cand, blank) == target:
            out.append(AlignmentSeq(cand))
    return out


def tra_collapse(z: AlignmentSeq, T: int, vocab: Vocab) -> TokenSeq:
    """Drop the blanks from a transducer alignment of length T+N."""
    blanks = sum(1 for i in z.ids if i == vocab.blank_id)
    if blanks != T:
        raise InvalidAlignmentError(
            f"transducer alignment must contain exactly T={T} blanks, found {blanks}"
        )
    labels = tuple(i for i in z.ids if i != vocab.blank_id)
    for i in labels:
        if not 0 <= i < vocab.size:
            raise UsageError(f"alignment id {i} out of range for vocabulary {vocab.name!r}")
    return TokenSeq(labels, vocab_tag=vocab.name)


def tra_inverse_enumerate(w: TokenSeq, T: int, vocab: Vocab) -> list[AlignmentSeq]:
    """Every valid transducer alignment emitting ``w`` over T frames.

    An alignment interleaves T blanks with the N labels of ``w`` in order,
    and must terminate with the blank that consumes the final frame
    (equivalently, every label is emitted at a frame index <= T).  For a
    target of length N this yields binomial(T-1+N, N) alignments.
    """
    if T < 1:
        raise UsageError("T must be at least 1")
    n = len(w)
    if math.comb(T + n, n) > TRA_ENUM_LIMIT:
        raise CapacityError(f"binomial({T + n},{n}) paths exceed the enumeration guard")
    total = T + n
    blank = vocab.blank_id
    out = []
    # choose positions of the labels among the first T+N-1 slots; the last
    # slot is always the terminal blank
    for label_slots in itertools.combinations(range(total - 1), n):
        ids = [blank] * total
        for pos, label in zip(label_slots, w.ids):
            ids[pos] = label
        out.append(AlignmentSeq(tuple(ids)))
    return out


def ctc_min_frames(w: TokenSeq) -> int:
    """Minimum frame count for which the CTC inverse image is non-empty."""
    repeats = sum(1 for a, b in zip(w.ids, w.ids[1:]) if a == b)
    return len(w) + repeats
