"""BECTRA: masked-LM-conditioned refinement followed by transducer decoding
over a separate ASR vocabulary, plus the lambda-weighted combined loss.

The cascade first runs the iterative refinement to obtain embeddings of a
full hypothesis in the masked-LM vocabulary, conditions the frame features
on those embeddings, and then lets a transducer beam search generate the
final sequence in the ASR vocabulary.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Protocol, runtime_checkable

import numpy as np

from .bertctc import ConditionedEmitter, RefinementTrace, bertctc_decode
from .bridge import detokenize, normalize
from .core import (
    DataError,
    FeatureMatrix,
    Hypothesis,
    JointLattice,
    Rng,
    TokenSeq,
    UsageError,
    Vocab,
    _read_json,
    _write_json,
    log_softmax,
)
from .ctc import ctc_loss
from .masklm import MaskedLm, sample_mask
from .transducer import LmFusionHook, PredictionEmitter, beam_search, rnnt_loss


@runtime_checkable
class BectraJointEmitter(Protocol):
    """Joint emission contract over the ASR vocabulary.

    ``emit_row`` maps one conditioned feature row plus the previously
    emitted tokens to a normalized log-probability row; ``emit_lattice``
    is the full-lattice form consumed by the loss.
    """

    vocab: Vocab

    def emit_row(self, features_row: np.ndarray, prefix: TokenSeq) -> np.ndarray: ...

    def emit_lattice(self, features: FeatureMatrix, w: TokenSeq) -> JointLattice: ...


def conditioned_features(H: FeatureMatrix, E: FeatureMatrix) -> FeatureMatrix:
    """Combine audio frames with pooled hypothesis embeddings.

    Each output row is the audio frame concatenated with the mean
    embedding row (zeros when the hypothesis is empty), keeping one row
    per frame.
    """
    if H.rows < 1:
        raise UsageError("audio features must contain at least one frame")
    pooled = E.values.mean(axis=0) if E.rows else np.zeros(E.dim)
    stacked = np.hstack([H.values, np.tile(pooled, (H.rows, 1))])
    return FeatureMatrix(stacked)


@dataclass(frozen=True)
class TableJointEmitter:
    """Table-driven joint emitter with a last-token prediction state.

    logits[v] = features . W[v] . q + bias[v], where q is the embedding of
    the most recent non-blank token.  The blank's embedding row doubles as
    the start state for the empty prefix (blanks never occur in prefixes,
    so the row is otherwise unused).
    """

    vocab: Vocab
    token_embed: np.ndarray
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        emb = np.array(self.token_embed, dtype=np.float64, copy=True)
        w = np.array(self.weights, dtype=np.float64, copy=True)
        b = np.array(self.bias, dtype=np.float64, copy=True)
        if emb.ndim != 2 or emb.shape[0] != self.vocab.size:
            raise DataError("token_embed must have one row per vocabulary symbol")
        if w.ndim != 3 or w.shape[0] != self.vocab.size or w.shape[2] != emb.shape[1]:
            raise DataError("weights must have shape (|V|+1, dim_f, dim_p)")
        if b.shape != (self.vocab.size,):
            raise DataError("bias must have one entry per vocabulary symbol")
        for arr in (emb, w, b):
            if not np.all(np.isfinite(arr)):
                raise DataError("joint emitter parameters must be finite")
            arr.setflags(write=False)
        object.__setattr__(self, "token_embed", emb)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def dim_f(self) -> int:
        return int(self.weights.shape[1])

    @property
    def dim_p(self) -> int:
        return int(self.weights.shape[2])

    def _state(self, prefix: TokenSeq) -> np.ndarray:
        if len(prefix) == 0:
            return self.token_embed[self.vocab.blank_id]
        return self.token_embed[prefix.ids[-1]]

    def emit_row(self, features_row: np.ndarray, prefix: TokenSeq) -> np.ndarray:
        row = np.asarray(features_row, dtype=np.float64)
        if row.shape != (self.dim_f,):
            raise UsageError("feature row does not match the joint emitter dimension")
        q = self._state(prefix)
        logits = np.einsum("i,vij,j->v", row, self.weights, q) + self.bias
        return log_softmax(logits)

    def emit_lattice(self, features: FeatureMatrix, w: TokenSeq) -> JointLattice:
        T = features.rows
        rows = np.empty((T, len(w) + 1, self.vocab.size))
        for u in range(len(w) + 1):
            prefix = TokenSeq(w.ids[:u], vocab_tag=w.vocab_tag)
            for t in range(T):
                rows[t, u, :] = self.emit_row(features.values[t], prefix)
        return JointLattice(rows, normalized=True)

    @classmethod
    def random(cls, vocab: Vocab, dim_f: int, dim_p: int, rng: Rng, scale: float = 1.0):
        return cls(
            vocab=vocab,
            token_embed=rng.generator.standard_normal((vocab.size, dim_p)),
            weights=scale * rng.generator.standard_normal((vocab.size, dim_f, dim_p)),
            bias=scale * rng.generator.standard_normal(vocab.size),
        )

    def to_dict(self) -> dict:
        return {
            "cols": self.vocab.size,
            "dim_f": self.dim_f,
            "dim_p": self.dim_p,
            "token_embed": [float(x) for x in self.token_embed.reshape(-1)],
            "weights": [float(x) for x in self.weights.reshape(-1)],
            "bias": [float(x) for x in self.bias],
        }

    @classmethod
    def from_dict(cls, payload: dict, vocab: Vocab) -> "TableJointEmitter":
        cols = int(payload["cols"])
        if cols != vocab.size:
            raise DataError("joint emitter width does not match the vocabulary")
        dim_f, dim_p = int(payload["dim_f"]), int(payload["dim_p"])
        return cls(
            vocab=vocab,
            token_embed=np.asarray(payload["token_embed"], dtype=np.float64).reshape(cols, dim_p),
            weights=np.asarray(payload["weights"], dtype=np.float64).reshape(cols, dim_f, dim_p),
            bias=np.asarray(payload["bias"], dtype=np.float64),
        )

    @classmethod
    def load(cls, path, vocab: Vocab) -> "TableJointEmitter":
        return cls.from_dict(_read_json(path), vocab)

    def save(self, path) -> None:
        _write_json(path, self.to_dict())


@dataclass(frozen=True)
class _JointAdapter:
    """Present a joint emitter over fixed features as a PredictionEmitter."""

    joint: BectraJointEmitter
    features: FeatureMatrix

    @property
    def vocab(self) -> Vocab:
        return self.joint.vocab

    def step(self, prefix: TokenSeq, t: int) -> np.ndarray:
        return self.joint.emit_row(self.features.values[t], prefix)


class BectraDecodeResult(NamedTuple):
    hypothesis: Hypothesis
    intermediate: Hypothesis
    trace: RefinementTrace


def bectra_decode(
    H: FeatureMatrix,
    K: int,
    B: int,
    emitter_b: ConditionedEmitter,
    lm: MaskedLm,
    joint: BectraJointEmitter,
    init_len: int,
    fusion: LmFusionHook | None = None,
    max_symbols_per_frame: int = 5,
) -> BectraDecodeResult:
    """Two-stage decoding: refinement for embeddings, then beam search.

    Runs the iterative refinement over the masked-LM vocabulary, conditions
    the frame features on the embeddings of its final hypothesis, and beam
    searches the joint emitter over the ASR vocabulary.  Returns the top
    ASR hypothesis together with the intermediate hypothesis and trace.
    """
    if B < 1:
        raise UsageError("beam size must be at least 1")
    hyp_b, E, trace = bertctc_decode(H, K, emitter_b, lm, init_len)
    features = conditioned_features(H, E)
    hyps = beam_search(
        _JointAdapter(joint, features),
        features.rows,
        B,
        max_symbols_per_frame=max_symbols_per_frame,
        fusion=fusion,
    )
    return BectraDecodeResult(hypothesis=hyps[0], intermediate=hyp_b, trace=trace)


def _consistent_pair(w_a: TokenSeq, w_b: TokenSeq, vocab_a: Vocab, vocab_b: Vocab) -> None:
    # the two tokenizations must spell the same words; punctuation and
    # casing may legitimately differ between the two text styles
    text_a = normalize(detokenize(w_a, vocab_a), strip_punctuation=True, lowercase=True)
    text_b = normalize(detokenize(w_b, vocab_b), strip_punctuation=True, lowercase=True)
    if text_a != text_b:
        raise DataError(
            f"target pair is inconsistent: {text_a!r} (ASR) vs {text_b!r} (masked-LM)"
        )


def bectra_loss(
    H: FeatureMatrix,
    w_a: TokenSeq,
    w_b: TokenSeq,
    lam: float,
    emitter_b: ConditionedEmitter,
    lm: MaskedLm,
    joint: BectraJointEmitter,
    rng: Rng,
) -> float:
    """Combined objective: (1 - lambda) * masked CTC + lambda * transducer.

    One masked sample of the masked-LM target is shared by both terms:
    the CTC term scores the masked-LM target under the conditioned
    emissions, and the transducer term scores the ASR target on the joint
    lattice built from the same conditioned features.  Endpoints
    ``lam=0`` and ``lam=1`` reduce exactly to the respective single terms
    under the same seed.
    """
    if not 0.0 <= lam <= 1.0:
        raise UsageError("lambda must lie in [0, 1]")
    if len(w_b) == 0:
        raise UsageError("masked-LM target must contain at least one token")
    _consistent_pair(w_a, w_b, joint.vocab, lm.vocab)
    masked = sample_mask(w_b, lm.vocab, rng)
    E = lm.embed(masked)
    loss_ctc = ctc_loss(emitter_b.emit(H, E), w_b, lm.vocab)
    features = conditioned_features(H, E)
    loss_tra = rnnt_loss(joint.emit_lattice(features, w_a), w_a, joint.vocab)
    if lam == 0.0:
        return loss_ctc
    if lam == 1.0:
        return loss_tra
    return (1.0 - lam) * loss_ctc + lam * loss_tra
