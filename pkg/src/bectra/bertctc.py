"""Conditioned-emission contract, iterative mask-predict decoding, and the
masked-conditioning CTC training loss.

The decoder alternates between embedding a partially observed hypothesis,
emitting frame probabilities conditioned on those embeddings, decoding
greedily, and re-masking the least confident tokens on a linearly decaying
schedule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .core import (
    DataError,
    EmissionMatrix,
    FeatureMatrix,
    Hypothesis,
    MaskedSeq,
    Rng,
    TokenSeq,
    UsageError,
    Vocab,
    _read_json,
    _write_json,
    normalize_rows,
)
from .ctc import best_path_decode, ctc_loss
from .masklm import MaskedLm, apply_masks, sample_mask


@runtime_checkable
class ConditionedEmitter(Protocol):
    """Frame emissions conditioned on audio features and token embeddings.

    ``emit(H, E)`` returns a normalized EmissionMatrix with one row per
    audio frame and one column per masked-LM vocabulary symbol.
    Implementations must be deterministic.
    """

    vocab: Vocab

    def emit(self, H: FeatureMatrix, E: FeatureMatrix) -> EmissionMatrix: ...


@dataclass(frozen=True)
class BilinearConditionedEmitter:
    """Bilinear table emitter: logits[t, v] = H[t] . W[v] . pool(E) + bias[v].

    ``pool`` is the mean over embedding rows (zero when the sequence is
    empty), which keeps the emitter a pure deterministic function of its
    two inputs while reacting to which tokens are observed.
    """

    vocab: Vocab
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        w = np.array(self.weights, dtype=np.float64, copy=True)
        b = np.array(self.bias, dtype=np.float64, copy=True)
        if w.ndim != 3 or w.shape[0] != self.vocab.size:
            raise DataError("weights must have shape (|V|+1, dim_h, dim_e)")
        if b.shape != (self.vocab.size,):
            raise DataError("bias must have one entry per vocabulary symbol")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise DataError("emitter parameters must be finite")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def dim_h(self) -> int:
        return int(self.weights.shape[1])

    @property
    def dim_e(self) -> int:
        return int(self.weights.shape[2])

    def emit(self, H: FeatureMatrix, E: FeatureMatrix) -> EmissionMatrix:
        if H.rows < 1:
            raise UsageError("audio features must contain at least one frame")
        if H.dim != self.dim_h or E.dim != self.dim_e:
            raise UsageError("feature dimensions do not match the emitter parameters")
        pooled = E.values.mean(axis=0) if E.rows else np.zeros(self.dim_e)
        logits = np.einsum("ti,vij,j->tv", H.values, self.weights, pooled) + self.bias
        return normalize_rows(EmissionMatrix(logits))

    @classmethod
    def random(cls, vocab: Vocab, dim_h: int, dim_e: int, rng: Rng, scale: float = 1.0):
        return cls(
            vocab=vocab,
            weights=scale * rng.generator.standard_normal((vocab.size, dim_h, dim_e)),
            bias=scale * rng.generator.standard_normal(vocab.size),
        )

    def to_dict(self) -> dict:
        return {
            "cols": self.vocab.size,
            "dim_h": self.dim_h,
            "dim_e": self.dim_e,
            "weights": [float(x) for x in self.weights.reshape(-1)],
            "bias": [float(x) for x in self.bias],
        }

    @classmethod
    def from_dict(cls, payload: dict, vocab: Vocab) -> "BilinearConditionedEmitter":
        cols = int(payload["cols"])
        if cols != vocab.size:
            raise DataError("emitter width does not match the vocabulary")
        w = np.asarray(payload["weights"], dtype=np.float64).reshape(
            cols, int(payload["dim_h"]), int(payload["dim_e"])
        )
        return cls(vocab=vocab, weights=w, bias=np.asarray(payload["bias"], dtype=np.float64))

    @classmethod
    def load(cls, path, vocab: Vocab) -> "BilinearConditionedEmitter":
        return cls.from_dict(_read_json(path), vocab)

    def save(self, path) -> None:
        _write_json(path, self.to_dict())


@dataclass(frozen=True)
class RefinementStep:
    """One refinement iteration: its masked input, hypothesis, and mask count."""

    masked_input: MaskedSeq
    hypothesis: Hypothesis
    n_mask: int


@dataclass(frozen=True)
class RefinementTrace:
    """Per-iteration observability record of a refinement run."""

    steps: tuple[RefinementStep, ...]

    def __len__(self) -> int:
        return len(self.steps)

    def n_mask_schedule(self) -> tuple[int, ...]:
        return tuple(step.n_mask for step in self.steps)

    def to_dict(self, vocab: Vocab | None = None) -> dict:
        return {
            "steps": [
                {
                    "masked_input": {
                        "ids": list(step.masked_input.ids),
                        "observed": list(step.masked_input.observed),
                    },
                    "hypothesis": step.hypothesis.to_dict(vocab),
                    "n_mask": step.n_mask,
                }
                for step in self.steps
            ]
        }


def mask_schedule(length: int, K: int, k: int) -> int:
    """Linearly decaying mask count: floor(length * (K - k) / K)."""
    return (length * (K - k)) // K


def _lowest_confidence_positions(hyp: Hypothesis, n_mask: int) -> tuple[int, ...]:
    # ties break toward masking the earlier position
    order = sorted(range(len(hyp)), key=lambda i: (hyp.confidences[i], i))
    return tuple(sorted(order[:n_mask]))


def bertctc_decode(
    H: FeatureMatrix,
    K: int,
    emitter: ConditionedEmitter,
    lm: MaskedLm,
    init_len: int,
) -> tuple[Hypothesis, FeatureMatrix, RefinementTrace]:
    """Iteratively refine a hypothesis by re-masking low-confidence tokens.

    Starts from an all-masked sequence of ``init_len`` tokens and runs K
    iterations of embed / emit / greedy-decode / re-mask, where iteration
    k keeps masking the ``floor(|hyp| * (K - k) / K)`` lowest-confidence
    tokens of the current hypothesis.  Masking always applies to the
    current hypothesis, so its length may change between iterations; an
    empty intermediate hypothesis falls back to a fresh all-masked input.

    Returns the final (mask-free) hypothesis, embeddings recomputed from
    that final hypothesis, and the K-step trace.  With ``init_len`` of
    zero the hypothesis is immediately empty and the trace has one record.
    """
    if K < 1:
        raise UsageError("iteration count K must be at least 1")
    if init_len < 0:
        raise UsageError("init_len must be non-negative")
    vocab = lm.vocab
    if vocab.mask_id is None:
        raise UsageError(f"vocabulary {vocab.name!r} has no mask token")
    if init_len == 0:
        empty = TokenSeq((), vocab_tag=vocab.name)
        hyp = Hypothesis(tokens=empty, score=0.0, confidences=())
        masked = MaskedSeq(ids=(), observed=(), mask_id=vocab.mask_id)
        trace = RefinementTrace(steps=(RefinementStep(masked, hyp, 0),))
        return hyp, lm.embed(masked), trace
    masked = MaskedSeq.all_masked(init_len, vocab)
    steps: list[RefinementStep] = []
    hyp: Hypothesis | None = None
    for k in range(1, K + 1):
        E = lm.embed(masked)
        emissions = emitter.emit(H, E)
        # the mask token is an input-side placeholder, never an output
        hyp = best_path_decode(emissions, vocab, forbid=(vocab.mask_id,))
        n_mask = mask_schedule(len(hyp), K, k)
        steps.append(RefinementStep(masked, hyp, n_mask))
        if k < K:
            if len(hyp) == 0:
                masked = MaskedSeq.all_masked(init_len, vocab)
            else:
                positions = _lowest_confidence_positions(hyp, n_mask)
                masked = apply_masks(hyp.tokens, positions, vocab)
    final_embeddings = lm.embed(MaskedSeq.fully_observed(hyp.tokens, vocab))
    return hyp, final_embeddings, RefinementTrace(steps=tuple(steps))


def bertctc_loss(
    H: FeatureMatrix,
    w_b: TokenSeq,
    emitter: ConditionedEmitter,
    lm: MaskedLm,
    rng: Rng,
) -> float:
    """Single-sample masked-conditioning CTC loss.

    Draws one random masking of the target, embeds it, and scores the
    target under the conditioned emissions.  Averaging over draws
    approximates the expectation over masking patterns; +inf signals an
    infeasible target length.
    """
    if len(w_b) == 0:
        raise UsageError("target sequence must contain at least one token")
    masked = sample_mask(w_b, lm.vocab, rng)
    emissions = emitter.emit(H, lm.embed(masked))
    return ctc_loss(emissions, w_b, lm.vocab)
