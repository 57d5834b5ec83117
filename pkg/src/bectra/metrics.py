"""Edit distance with S/I/D breakdown, plus word and character error rates."""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels
from .bridge import normalize
from .core import DomainError


class EditCounts(NamedTuple):
    distance: int
    substitutions: int
    insertions: int
    deletions: int


def edit_distance(ref: Sequence, hyp: Sequence) -> EditCounts:
    """Minimal edit distance from ``ref`` to ``hyp`` with operation counts.

    Insertions are extra hypothesis items, deletions are missed reference
    items.  Ties in the breakdown prefer substitutions, then deletions,
    then insertions, so the report is deterministic.
    """
    symbols = {}
    for item in ref:
        symbols.setdefault(item, len(symbols))
    for item in hyp:
        symbols.setdefault(item, len(symbols))
    ref_ids = np.fromiter((symbols[x] for x in ref), dtype=np.int64, count=len(ref))
    hyp_ids = np.fromiter((symbols[x] for x in hyp), dtype=np.int64, count=len(hyp))
    dist, subs, ins, dels = _kernels.levenshtein(ref_ids, hyp_ids)
    return EditCounts(int(dist), int(subs), int(ins), int(dels))


def _char_seq(text: str) -> list[str]:
    # word boundaries count as single space characters
    return list(" ".join(text.split()))


def wer(
    ref_text: str,
    hyp_text: str,
    *,
    strip_punctuation: bool = False,
    lowercase: bool = False,
) -> float:
    """Word error rate over normalized text."""
    ref = normalize(ref_text, strip_punctuation=strip_punctuation, lowercase=lowercase).split()
    hyp = normalize(hyp_text, strip_punctuation=strip_punctuation, lowercase=lowercase).split()
    if not ref:
        raise DomainError("reference is empty after normalization")
    return edit_distance(ref, hyp).distance / len(ref)


def cer(
    ref_text: str,
    hyp_text: str,
    *,
    strip_punctuation: bool = False,
    lowercase: bool = False,
) -> float:
    """Character error rate over normalized text (spaces count as symbols)."""
    ref = _char_seq(normalize(ref_text, strip_punctuation=strip_punctuation, lowercase=lowercase))
    hyp = _char_seq(normalize(hyp_text, strip_punctuation=strip_punctuation, lowercase=lowercase))
    if not ref:
        raise DomainError("reference is empty after normalization")
    return edit_distance(ref, hyp).distance / len(ref)
