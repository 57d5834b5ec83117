"""Shared domain types, log-domain arithmetic, and deterministic randomness.

All probabilities are stored and combined in natural-log domain, double
precision.  ``-inf`` encodes an exact zero.  Every container here is
immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

NEG_INF = float("-inf")

#: |logsumexp(row)| must stay below this for a row to count as normalized.
NORMALIZATION_TOL = 1e-8


class UsageError(ValueError):
    """The caller violated an API precondition (maps to CLI exit code 2)."""


class DataError(ValueError):
    """Input data is malformed or inconsistent (maps to CLI exit code 3)."""


class CapacityError(UsageError):
    """A guarded exhaustive operation would exceed its size limit."""


class DomainError(DataError):
    """An operation was applied outside its mathematical domain."""


class TokenizationError(DataError):
    """A word cannot be covered by the vocabulary pieces."""


class InvalidAlignmentError(DataError):
    """An alignment violates the structural constraints of its lattice."""


# ---------------------------------------------------------------------------
# log-domain arithmetic
# ---------------------------------------------------------------------------


def logsumexp(values: Sequence[float] | np.ndarray) -> float:
    """Return ``log(sum(exp(values)))`` computed stably by max-shifting.

    ``-inf`` entries are absorbing zeros; the result is ``-inf`` iff every
    input is ``-inf``.  An empty input is a usage error.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise UsageError("logsumexp of an empty sequence is undefined")
    m = float(np.max(arr))
    if m == NEG_INF:
        return NEG_INF
    return m + float(np.log(np.sum(np.exp(arr - m))))


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Stable log-softmax along ``axis``; rows of all ``-inf`` are rejected."""
    arr = np.asarray(logits, dtype=np.float64)
    m = np.max(arr, axis=axis, keepdims=True)
    if np.any(np.isneginf(m)):
        raise DataError("cannot normalize a row whose entries are all -inf")
    shifted = arr - m
    lse = m + np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    return arr - lse


# ---------------------------------------------------------------------------
# vocabularies and token sequences
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Vocab:
    """Token table with reserved blank and optional mask entries.

    ``tokens`` contains every symbol including the blank (and, for the
    masked-LM vocabulary, the mask token), so emission rows over this
    vocabulary have exactly ``len(tokens)`` columns.
    """

    tokens: tuple[str, ...]
    blank_id: int
    mask_id: int | None = None
    continuation_marker: str = "##"
    name: str = "vocab"

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if len(self.tokens) < 2:
            raise DataError("vocabulary needs at least one real token plus blank")
        if any(not isinstance(t, str) or not t for t in self.tokens):
            raise DataError("vocabulary tokens must be non-empty strings")
        if len(set(self.tokens)) != len(self.tokens):
            raise DataError("vocabulary tokens must be unique")
        if not 0 <= self.blank_id < len(self.tokens):
            raise DataError(f"blank_id {self.blank_id} out of range")
        if self.mask_id is not None:
            if not 0 <= self.mask_id < len(self.tokens):
                raise DataError(f"mask_id {self.mask_id} out of range")
            if self.mask_id == self.blank_id:
                raise DataError("mask_id must differ from blank_id")

    @property
    def size(self) -> int:
        """Number of symbols including blank (emission column count)."""
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        try:
            return self.tokens.index(token)
        except ValueError:
            raise UsageError(f"token {token!r} not in vocabulary {self.name!r}") from None

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.tokens):
            raise UsageError(f"token id {token_id} out of range for vocabulary {self.name!r}")
        return self.tokens[token_id]

    def label_ids(self) -> tuple[int, ...]:
        """Every id except the blank (the mask, when present, counts as a label)."""
        return tuple(i for i in range(len(self.tokens)) if i != self.blank_id)

    def piece_ids(self) -> tuple[int, ...]:
        """Ids usable as text pieces: everything except blank and mask."""
        return tuple(
            i for i in range(len(self.tokens)) if i != self.blank_id and i != self.mask_id
        )

    def to_dict(self) -> dict:
        return {
            "tokens": list(self.tokens),
            "blank": self.tokens[self.blank_id],
            "mask": None if self.mask_id is None else self.tokens[self.mask_id],
            "continuation_marker": self.continuation_marker,
        }

    @classmethod
    def from_dict(cls, payload: dict, name: str = "vocab") -> "Vocab":
        tokens = tuple(payload["tokens"])
        try:
            blank_id = tokens.index(payload["blank"])
        except ValueError:
            raise DataError("blank token missing from token list") from None
        mask = payload.get("mask")
        if mask is None:
            mask_id = None
        else:
            try:
                mask_id = tokens.index(mask)
            except ValueError:
                raise DataError("mask token missing from token list") from None
        return cls(
            tokens=tokens,
            blank_id=blank_id,
            mask_id=mask_id,
            continuation_marker=payload.get("continuation_marker", "##"),
            name=name,
        )


@dataclass(frozen=True)
class TokenSeq:
    """A blank-free sequence of token ids tagged with its vocabulary name."""

    ids: tuple[int, ...]
    vocab_tag: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))

    @classmethod
    def from_ids(cls, ids: Iterable[int], vocab: Vocab) -> "TokenSeq":
        ids = tuple(int(i) for i in ids)
        for i in ids:
            if not 0 <= i < vocab.size:
                raise UsageError(f"token id {i} out of range for vocabulary {vocab.name!r}")
            if i == vocab.blank_id:
                raise UsageError("token sequences must not contain the blank id")
        return cls(ids=ids, vocab_tag=vocab.name)

    @classmethod
    def from_tokens(cls, tokens: Iterable[str], vocab: Vocab) -> "TokenSeq":
        return cls.from_ids((vocab.id_of(t) for t in tokens), vocab)

    def tokens(self, vocab: Vocab) -> tuple[str, ...]:
        return tuple(vocab.token_of(i) for i in self.ids)

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class AlignmentSeq:
    """A symbol sequence over vocabulary-plus-blank (frame- or lattice-level)."""

    ids: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class MaskedSeq:
    """Token ids over the masked-LM vocabulary with per-position observed flags.

    ``observed[m]`` is False exactly when ``ids[m]`` is the mask id.
    """

    ids: tuple[int, ...]
    observed: tuple[bool, ...]
    mask_id: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        object.__setattr__(self, "observed", tuple(bool(b) for b in self.observed))
        if len(self.ids) != len(self.observed):
            raise DataError("ids and observed flags must have equal length")
        for i, obs in zip(self.ids, self.observed):
            if obs == (i == self.mask_id):
                raise DataError("observed flag inconsistent with mask id placement")

    @classmethod
    def all_masked(cls, length: int, vocab: Vocab) -> "MaskedSeq":
        if vocab.mask_id is None:
            raise UsageError(f"vocabulary {vocab.name!r} has no mask token")
        return cls(
            ids=(vocab.mask_id,) * length,
            observed=(False,) * length,
            mask_id=vocab.mask_id,
        )

    @classmethod
    def fully_observed(cls, seq: TokenSeq, vocab: Vocab) -> "MaskedSeq":
        if vocab.mask_id is None:
            raise UsageError(f"vocabulary {vocab.name!r} has no mask token")
        for i in seq.ids:
            if i == vocab.mask_id:
                raise UsageError("a fully observed sequence cannot contain the mask id")
        return cls(ids=seq.ids, observed=(True,) * len(seq), mask_id=vocab.mask_id)

    @property
    def n_masked(self) -> int:
        return sum(1 for o in self.observed if not o)

    def __len__(self) -> int:
        return len(self.ids)


# ---------------------------------------------------------------------------
# numeric containers
# ---------------------------------------------------------------------------


def _check_log_values(values: np.ndarray, what: str) -> None:
    if np.any(np.isnan(values)):
        raise DataError(f"{what} contains NaN entries")
    if np.any(np.isposinf(values)):
        raise DataError(f"{what} contains +inf entries")


def _check_normalized(values: np.ndarray, what: str) -> None:
    flat = values.reshape(-1, values.shape[-1])
    m = np.max(flat, axis=1, keepdims=True)
    if np.any(np.isneginf(m)):
        raise DataError(f"{what} flagged normalized but has an all--inf row")
    lse = m[:, 0] + np.log(np.sum(np.exp(flat - m), axis=1))
    if np.max(np.abs(lse)) > NORMALIZATION_TOL:
        raise DataError(f"{what} flagged normalized but a row sums to exp({np.max(np.abs(lse)):.3e})")


@dataclass(frozen=True)
class EmissionMatrix:
    """T x (|V|+1) log-probability lattice of per-frame symbol emissions."""

    log_probs: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        arr = np.array(self.log_probs, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DataError("emission matrix must be 2-D with at least one row and column")
        _check_log_values(arr, "emission matrix")
        if self.normalized:
            _check_normalized(arr, "emission matrix")
        arr.setflags(write=False)
        object.__setattr__(self, "log_probs", arr)

    @property
    def rows(self) -> int:
        return int(self.log_probs.shape[0])

    @property
    def cols(self) -> int:
        return int(self.log_probs.shape[1])

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "log_probs": [float(x) for x in self.log_probs.reshape(-1)],
            "normalized": self.normalized,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "EmissionMatrix":
        rows, cols = int(payload["rows"]), int(payload["cols"])
        arr = np.asarray(payload["log_probs"], dtype=np.float64)
        if arr.size != rows * cols:
            raise DataError("log_probs length does not match rows*cols")
        return cls(arr.reshape(rows, cols), normalized=bool(payload.get("normalized", False)))


@dataclass(frozen=True)
class JointLattice:
    """T x (N+1) x (|V|+1) log-probability tensor of per-node emissions.

    Index order is (t, u, v): frame, emitted-token count, symbol.
    """

    log_probs: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        arr = np.array(self.log_probs, dtype=np.float64, copy=True)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise DataError("joint lattice must be 3-D with positive extents")
        _check_log_values(arr, "joint lattice")
        if self.normalized:
            _check_normalized(arr, "joint lattice")
        arr.setflags(write=False)
        object.__setattr__(self, "log_probs", arr)

    @property
    def rows(self) -> int:
        return int(self.log_probs.shape[0])

    @property
    def u_rows(self) -> int:
        return int(self.log_probs.shape[1])

    @property
    def cols(self) -> int:
        return int(self.log_probs.shape[2])

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "u_rows": self.u_rows,
            "cols": self.cols,
            "log_probs": [float(x) for x in self.log_probs.reshape(-1)],
            "normalized": self.normalized,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "JointLattice":
        rows = int(payload["rows"])
        u_rows = int(payload["u_rows"])
        cols = int(payload["cols"])
        arr = np.asarray(payload["log_probs"], dtype=np.float64)
        if arr.size != rows * u_rows * cols:
            raise DataError("log_probs length does not match rows*u_rows*cols")
        return cls(
            arr.reshape(rows, u_rows, cols),
            normalized=bool(payload.get("normalized", False)),
        )


@dataclass(frozen=True)
class FeatureMatrix:
    """A dense real-valued feature sequence (rows x dim).

    Zero rows are permitted so that embedding an empty token sequence has a
    well-defined result; consumers that need at least one frame check that
    themselves.
    """

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[1] < 1:
            raise DataError("feature matrix must be 2-D with at least one column")
        if not np.all(np.isfinite(arr)) and arr.size:
            raise DataError("feature matrix entries must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def rows(self) -> int:
        return int(self.values.shape[0])

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "dim": self.dim,
            "values": [float(x) for x in self.values.reshape(-1)],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "FeatureMatrix":
        rows, dim = int(payload["rows"]), int(payload["dim"])
        arr = np.asarray(payload["values"], dtype=np.float64)
        if arr.size != rows * dim:
            raise DataError("values length does not match rows*dim")
        return cls(arr.reshape(rows, dim))


@dataclass(frozen=True)
class Hypothesis:
    """A decoded token sequence with its log score and per-token confidences.

    The score semantics depend on the decoder that produced it; greedy CTC
    reports the best-path log probability, which is not the marginal
    sequence probability.
    """

    tokens: TokenSeq
    score: float
    confidences: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.confidences is not None:
            conf = tuple(float(c) for c in self.confidences)
            if len(conf) != len(self.tokens):
                raise DataError("confidences length must equal token count")
            if any(not 0.0 <= c <= 1.0 for c in conf):
                raise DataError("confidences must lie in [0, 1]")
            object.__setattr__(self, "confidences", conf)

    def __len__(self) -> int:
        return len(self.tokens)

    def to_dict(self, vocab: Vocab | None = None) -> dict:
        payload: dict = {
            "ids": list(self.tokens.ids),
            "score": float(self.score),
            "confidences": None
            if self.confidences is None
            else [float(c) for c in self.confidences],
        }
        if vocab is not None:
            payload["tokens"] = list(self.tokens.tokens(vocab))
        return payload


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


def normalize_rows(matrix: EmissionMatrix | JointLattice):
    """Log-softmax every row (or lattice node) so each sums to one.

    Idempotent up to floating-point round-off; the result carries the
    ``normalized`` flag.
    """
    if isinstance(matrix, EmissionMatrix):
        return EmissionMatrix(log_softmax(matrix.log_probs), normalized=True)
    if isinstance(matrix, JointLattice):
        return JointLattice(log_softmax(matrix.log_probs), normalized=True)
    raise UsageError(f"cannot normalize object of type {type(matrix).__name__}")


# ---------------------------------------------------------------------------
# deterministic randomness
# ---------------------------------------------------------------------------


class Rng:
    """Seedable, platform-independent random generator (PCG64).

    Identical seeds yield identical draw sequences on every platform; there
    is no global state.  Instances are cheap; share one per logical stream
    and do not use a single instance from multiple threads.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def uniform_int(self, low: int, high: int) -> int:
        """A draw from the inclusive integer range [low, high]."""
        if high < low:
            raise UsageError("uniform_int requires low <= high")
        return int(self.generator.integers(low, high + 1))

    def subset(self, n: int, k: int) -> tuple[int, ...]:
        """A uniformly random size-k subset of range(n), sorted."""
        if not 0 <= k <= n:
            raise UsageError("subset size must satisfy 0 <= k <= n")
        picked = self.generator.choice(n, size=k, replace=False)
        return tuple(sorted(int(i) for i in picked))


# ---------------------------------------------------------------------------
# JSON file helpers
# ---------------------------------------------------------------------------


def _read_json(path: str | Path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise DataError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON in {path}: {exc}") from None


def _write_json(path: str | Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_vocab(path: str | Path, name: str = "vocab") -> Vocab:
    return Vocab.from_dict(_read_json(path), name=name)


def save_vocab(path: str | Path, vocab: Vocab) -> None:
    _write_json(path, vocab.to_dict())


def load_emissions(path: str | Path) -> EmissionMatrix:
    return EmissionMatrix.from_dict(_read_json(path))


def save_emissions(path: str | Path, matrix: EmissionMatrix) -> None:
    _write_json(path, matrix.to_dict())


def load_lattice(path: str | Path) -> JointLattice:
    return JointLattice.from_dict(_read_json(path))


def save_lattice(path: str | Path, lattice: JointLattice) -> None:
    _write_json(path, lattice.to_dict())


def load_features(path: str | Path) -> FeatureMatrix:
    return FeatureMatrix.from_dict(_read_json(path))


def save_features(path: str | Path, features: FeatureMatrix) -> None:
    _write_json(path, features.to_dict())
