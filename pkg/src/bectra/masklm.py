"""Masked-LM interface contract, a deterministic table implementation, and
the training-time mask sampler."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Protocol, runtime_checkable

import numpy as np

from .core import (
    DataError,
    FeatureMatrix,
    MaskedSeq,
    Rng,
    TokenSeq,
    UsageError,
    Vocab,
    _read_json,
    _write_json,
)


@runtime_checkable
class MaskedLm(Protocol):
    """Embedding provider conditioning emissions on a partially observed sequence.

    ``embed`` must be deterministic, return one row per input position, and
    produce finite values.  Implementations are immutable after
    construction and safe to share.
    """

    vocab: Vocab

    def embed(self, seq: MaskedSeq) -> FeatureMatrix: ...


@dataclass(frozen=True)
class TableMaskedLm:
    """Embedding-table masked LM with windowed neighbor mixing.

    Position m maps to ``(1-alpha) * table[ids[m]] + alpha * c_m`` where
    ``c_m`` is the mean table row of the observed neighbors within
    ``window`` positions (the position's own table row when no neighbor is
    observed).  The mixing gives masked positions context sensitivity, so
    iterative refinement has something to refine at desk scale.
    """

    vocab: Vocab
    table: np.ndarray
    alpha: float = 0.5
    window: int = 1

    def __post_init__(self) -> None:
        arr = np.array(self.table, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[0] != self.vocab.size or arr.shape[1] < 1:
            raise DataError("embedding table must have one row per vocabulary symbol")
        if not np.all(np.isfinite(arr)):
            raise DataError("embedding table entries must be finite")
        if not 0.0 <= self.alpha <= 1.0:
            raise DataError("alpha must lie in [0, 1]")
        if self.window < 0:
            raise DataError("window must be non-negative")
        if self.vocab.mask_id is None:
            raise UsageError(f"vocabulary {self.vocab.name!r} has no mask token")
        arr.setflags(write=False)
        object.__setattr__(self, "table", arr)

    @property
    def dim(self) -> int:
        return int(self.table.shape[1])

    def embed(self, seq: MaskedSeq) -> FeatureMatrix:
        for i in seq.ids:
            if not 0 <= i < self.vocab.size:
                raise UsageError(f"token id {i} out of range for vocabulary {self.vocab.name!r}")
        m = len(seq)
        out = np.empty((m, self.dim))
        for pos in range(m):
            base = self.table[seq.ids[pos]]
            neighbors = [
                self.table[seq.ids[j]]
                for j in range(max(0, pos - self.window), min(m, pos + self.window + 1))
                if j != pos and seq.observed[j]
            ]
            ctx = np.mean(neighbors, axis=0) if neighbors else base
            out[pos] = (1.0 - self.alpha) * base + self.alpha * ctx
        return FeatureMatrix(out)

    @classmethod
    def random(cls, vocab: Vocab, dim: int, rng: Rng, alpha: float = 0.5, window: int = 1):
        table = rng.generator.standard_normal((vocab.size, dim))
        return cls(vocab=vocab, table=table, alpha=alpha, window=window)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "alpha": self.alpha,
            "window": self.window,
            "table": [[float(x) for x in row] for row in self.table],
        }

    @classmethod
    def from_dict(cls, payload: dict, vocab: Vocab) -> "TableMaskedLm":
        table = np.asarray(payload["table"], dtype=np.float64)
        if table.ndim != 2 or table.shape[1] != int(payload["dim"]):
            raise DataError("embedding table does not match the declared dimension")
        return cls(
            vocab=vocab,
            table=table,
            alpha=float(payload["alpha"]),
            window=int(payload["window"]),
        )

    @classmethod
    def load(cls, path, vocab: Vocab) -> "TableMaskedLm":
        return cls.from_dict(_read_json(path), vocab)

    def save(self, path) -> None:
        _write_json(path, self.to_dict())


def apply_masks(w: TokenSeq, positions: Iterable[int], vocab: Vocab) -> MaskedSeq:
    """Replace the tokens at ``positions`` (0-based) with the mask token."""
    if vocab.mask_id is None:
        raise UsageError(f"vocabulary {vocab.name!r} has no mask token")
    positions = set(int(p) for p in positions)
    for p in positions:
        if not 0 <= p < len(w):
            raise UsageError(f"mask position {p} out of range for length {len(w)}")
    for i in w.ids:
        if i == vocab.mask_id:
            raise UsageError("input sequence already contains the mask id")
    ids = tuple(vocab.mask_id if m in positions else i for m, i in enumerate(w.ids))
    observed = tuple(m not in positions for m in range(len(w)))
    return MaskedSeq(ids=ids, observed=observed, mask_id=vocab.mask_id)


def sample_mask(w: TokenSeq, vocab: Vocab, rng: Rng) -> MaskedSeq:
    """Draw a random masking of ``w`` for training.

    The mask count is uniform over {1..M} and the masked positions are a
    uniformly random subset of that size, so every position is eligible.
    """
    if len(w) == 0:
        raise UsageError("cannot sample a mask for an empty sequence")
    n_mask = rng.uniform_int(1, len(w))
    positions = rng.subset(len(w), n_mask)
    return apply_masks(w, positions, vocab)
