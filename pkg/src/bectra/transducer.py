"""Transducer lattice loss, gradient, and time-synchronous beam search.

The loss marginalizes over monotone lattice paths that interleave T blanks
with the N target labels and terminate with the blank at node (T-1, N);
the same convention drives the enumeration oracle in :mod:`.collapse`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from . import _kernels
from .core import (
    DataError,
    DomainError,
    Hypothesis,
    JointLattice,
    NORMALIZATION_TOL,
    TokenSeq,
    UsageError,
    Vocab,
    log_softmax,
    logsumexp,
    normalize_rows,
)

NEG_INF = float("-inf")


@runtime_checkable
class PredictionEmitter(Protocol):
    """Per-step emission contract for the transducer.

    ``step(prefix, t)`` returns a normalized log-probability row over
    |V|+1 symbols for frame ``t`` given the previously emitted non-blank
    tokens.  Implementations must be deterministic and reentrant.
    """

    vocab: Vocab

    def step(self, prefix: TokenSeq, t: int) -> np.ndarray: ...


@runtime_checkable
class LmFusionHook(Protocol):
    """External-LM scores for shallow fusion, blended at weight mu >= 0."""

    weight: float

    def score(self, prefix: TokenSeq, token: int) -> float: ...


@dataclass(frozen=True)
class TableLmFusion:
    """Unigram table LM for shallow fusion; missing tokens score ``floor``."""

    vocab: Vocab
    weight: float
    scores: dict[int, float]
    floor: float = -10.0

    def score(self, prefix: TokenSeq, token: int) -> float:
        return float(self.scores.get(int(token), self.floor))

    def to_dict(self) -> dict:
        return {
            "weight": self.weight,
            "floor": self.floor,
            "scores": {self.vocab.token_of(i): s for i, s in sorted(self.scores.items())},
        }

    @classmethod
    def from_dict(cls, payload: dict, vocab: Vocab, weight: float | None = None) -> "TableLmFusion":
        scores = {vocab.id_of(tok): float(s) for tok, s in payload["scores"].items()}
        return cls(
            vocab=vocab,
            weight=float(payload["weight"] if weight is None else weight),
            scores=scores,
            floor=float(payload.get("floor", -10.0)),
        )


@dataclass(frozen=True)
class TableEmitter:
    """Table-driven prediction emitter for tests, fixtures, and the CLI.

    Rows are keyed by (prefix ids, frame); a missing key is a usage error
    so holes in a fixture fail loudly.
    """

    vocab: Vocab
    rows: dict[tuple[tuple[int, ...], int], np.ndarray]

    def step(self, prefix: TokenSeq, t: int) -> np.ndarray:
        key = (tuple(prefix.ids), int(t))
        try:
            return self.rows[key]
        except KeyError:
            raise UsageError(f"emitter table has no row for prefix={key[0]} t={t}") from None

    @classmethod
    def random(
        cls,
        vocab: Vocab,
        T: int,
        max_len: int,
        rng,
        scale: float = 1.5,
    ) -> "TableEmitter":
        """Random normalized rows for every prefix up to ``max_len`` labels.

        Prefixes of exactly ``max_len`` labels get a blank-forced row, so
        the emitter assigns zero probability to anything longer and the
        total mass over sequences of length <= max_len is exactly one.
        """
        labels = vocab.label_ids()
        forced = np.full(vocab.size, -math.inf)
        forced[vocab.blank_id] = 0.0
        rows = {}
        frontier: list[tuple[int, ...]] = [()]
        for depth in range(max_len + 1):
            for p in frontier:
                for t in range(T):
                    if depth == max_len:
                        rows[(p, t)] = forced
                    else:
                        logits = scale * rng.generator.standard_normal(vocab.size)
                        rows[(p, t)] = log_softmax(logits)
            frontier = [p + (v,) for p in frontier for v in labels]
        return cls(vocab=vocab, rows=rows)

    def to_dict(self) -> dict:
        entries = [
            {"prefix": list(p), "t": t, "log_probs": [float(x) for x in row]}
            for (p, t), row in sorted(self.rows.items())
        ]
        return {"cols": self.vocab.size, "entries": entries}

    @classmethod
    def from_dict(cls, payload: dict, vocab: Vocab) -> "TableEmitter":
        if int(payload["cols"]) != vocab.size:
            raise DataError("emitter table width does not match the vocabulary")
        rows = {}
        for entry in payload["entries"]:
            row = np.asarray(entry["log_probs"], dtype=np.float64)
            if row.shape != (vocab.size,):
                raise DataError("emitter table row has the wrong width")
            rows[(tuple(int(i) for i in entry["prefix"]), int(entry["t"]))] = row
        return cls(vocab=vocab, rows=rows)


def _check_lattice(lattice: JointLattice, w: TokenSeq, vocab: Vocab) -> np.ndarray:
    if not lattice.normalized:
        raise UsageError("joint lattice must be normalized per node")
    if lattice.cols != vocab.size:
        raise UsageError("joint lattice width does not match the vocabulary")
    if lattice.u_rows != len(w) + 1:
        raise UsageError(
            f"joint lattice has {lattice.u_rows} label rows but the target needs {len(w) + 1}"
        )
    for i in w.ids:
        if not 0 <= i < vocab.size or i == vocab.blank_id:
            raise UsageError(f"invalid target id {i}")
    return np.asarray(w.ids, dtype=np.int64)


def rnnt_loss(lattice: JointLattice, w: TokenSeq, vocab: Vocab) -> float:
    """Negative log-likelihood of ``w`` summed over all lattice paths."""
    labels = _check_lattice(lattice, w, vocab)
    ll, _ = _kernels.rnnt_forward(lattice.log_probs, labels, vocab.blank_id)
    return -float(ll)


def rnnt_grad(lattice: JointLattice, w: TokenSeq, vocab: Vocab) -> np.ndarray:
    """Gradient of the loss with respect to the node log-probabilities.

    Equals minus the posterior edge occupancy; summing the negated
    gradient over symbols gives the probability that a path visits each
    node, and the grand total is T+N (every path emits T+N symbols).
    """
    labels = _check_lattice(lattice, w, vocab)
    ll, gamma = _kernels.rnnt_posteriors(lattice.log_probs, labels, vocab.blank_id)
    if ll == NEG_INF:
        raise DomainError("no lattice path emits the target; loss is +inf")
    return -gamma


def rnnt_grad_logits(logits: np.ndarray, w: TokenSeq, vocab: Vocab) -> np.ndarray:
    """Gradient with respect to unnormalized per-node logits.

    Same chain rule as the CTC case, applied per (t, u) node:
    dL/dx = g - softmax(x) * sum_v g.
    """
    lattice = normalize_rows(JointLattice(logits))
    g = rnnt_grad(lattice, w, vocab)
    p = np.exp(lattice.log_probs)
    return g - p * g.sum(axis=2, keepdims=True)


def build_lattice(emitter: PredictionEmitter, w: TokenSeq, T: int) -> JointLattice:
    """Materialize the (T, N+1, |V|+1) lattice an emitter induces for ``w``."""
    vocab = emitter.vocab
    rows = np.empty((T, len(w) + 1, vocab.size))
    for u in range(len(w) + 1):
        prefix = TokenSeq(w.ids[:u], vocab_tag=w.vocab_tag)
        for t in range(T):
            rows[t, u, :] = _checked_row(emitter, prefix, t)
    return JointLattice(rows, normalized=True)


def _checked_row(emitter: PredictionEmitter, prefix: TokenSeq, t: int) -> np.ndarray:
    row = np.asarray(emitter.step(prefix, t), dtype=np.float64)
    if row.ndim != 1 or row.shape[0] != emitter.vocab.size:
        raise DataError("emitter returned a row of the wrong width")
    if abs(logsumexp(row)) > NORMALIZATION_TOL:
        raise DataError(f"emitter row for prefix={prefix.ids} t={t} is not normalized")
    return row


def _fusion_bonus(fusion: LmFusionHook | None, prefix: tuple[int, ...], token: int, tag: str) -> float:
    if fusion is None or fusion.weight == 0.0:
        return 0.0
    return fusion.weight * fusion.score(TokenSeq(prefix, vocab_tag=tag), token)


def _greedy_search(
    emitter: PredictionEmitter,
    T: int,
    max_symbols_per_frame: int,
    fusion: LmFusionHook | None,
) -> list[Hypothesis]:
    """Frame-synchronous greedy decoding (the beam-of-one search).

    At each frame the single hypothesis emits the locally best label while
    it beats the blank, up to ``max_symbols_per_frame`` emissions, then a
    blank advances the frame.  The score is the log probability of the
    followed path.
    """
    vocab = emitter.vocab
    tag = vocab.name
    prefix: tuple[int, ...] = ()
    score = 0.0
    confidences: list[float] = []
    for t in range(T):
        emitted = 0
        while True:
            row = _checked_row(emitter, TokenSeq(prefix, vocab_tag=tag), t)
            if emitted >= max_symbols_per_frame:
                score += row[vocab.blank_id]
                break
            # symbols compete in index order so ties go to the lowest id
            best_v = 0
            best_s = -math.inf
            for v in range(vocab.size):
                if v == vocab.blank_id:
                    s = row[v]
                else:
                    s = row[v] + _fusion_bonus(fusion, prefix, v, tag)
                if s > best_s:
                    best_v, best_s = v, s
            if best_v == vocab.blank_id:
                score += row[vocab.blank_id]
                break
            score += best_s
            confidences.append(min(1.0, float(math.exp(row[best_v]))))
            prefix = prefix + (best_v,)
            emitted += 1
    return [
        Hypothesis(
            tokens=TokenSeq(prefix, vocab_tag=tag),
            score=float(score),
            confidences=tuple(confidences),
        )
    ]


def _top_b(scores: dict[tuple[int, ...], float], beam: int) -> dict[tuple[int, ...], float]:
    if len(scores) <= beam:
        return scores
    kept = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:beam]
    return dict(kept)


def beam_search(
    emitter: PredictionEmitter,
    T: int,
    beam: int,
    max_symbols_per_frame: int = 5,
    fusion: LmFusionHook | None = None,
) -> list[Hypothesis]:
    """Time-synchronous beam search over a prediction emitter.

    At each frame, hypotheses expand by non-blank symbols up to
    ``max_symbols_per_frame``, then a blank advances the frame.  Identical
    prefixes merge their scores by logsumexp, so a surviving hypothesis
    carries the marginal mass of every alignment that produced it.
    Shallow fusion adds ``weight * lm.score`` on non-blank expansions
    only.  Returns up to ``beam`` hypotheses sorted by score descending.

    Pruning happens only at frame boundaries; expansion within a frame is
    exhaustive (at most ``beam * |V| ** max_symbols_per_frame`` children),
    which suits the small vocabularies this library targets and keeps a
    wider beam from ever scoring below a narrower one on the tiny
    instances the oracles can certify.

    A beam of one dispatches to frame-synchronous greedy decoding, whose
    score is the log probability of the single followed path rather than
    a marginal.
    """
    if beam < 1:
        raise UsageError("beam size must be at least 1")
    if max_symbols_per_frame < 1:
        raise UsageError("max_symbols_per_frame must be at least 1")
    if fusion is not None and fusion.weight < 0:
        raise UsageError("fusion weight must be non-negative")
    vocab = emitter.vocab
    tag = vocab.name
    if beam == 1:
        return _greedy_search(emitter, T, max_symbols_per_frame, fusion)
    labels = vocab.label_ids()
    beams: dict[tuple[int, ...], float] = {(): 0.0}
    for t in range(T):
        advanced: dict[tuple[int, ...], float] = {}
        frontier = beams
        for stage in range(max_symbols_per_frame + 1):
            expansions: dict[tuple[int, ...], float] = {}
            for prefix in sorted(frontier):
                sc = frontier[prefix]
                row = _checked_row(emitter, TokenSeq(prefix, vocab_tag=tag), t)
                blank_score = sc + row[vocab.blank_id]
                prev = advanced.get(prefix)
                advanced[prefix] = blank_score if prev is None else float(np.logaddexp(prev, blank_score))
                if stage < max_symbols_per_frame:
                    for v in labels:
                        if row[v] == NEG_INF:
                            continue
                        child = prefix + (v,)
                        s = sc + row[v] + _fusion_bonus(fusion, prefix, v, tag)
                        prev = expansions.get(child)
                        expansions[child] = s if prev is None else float(np.logaddexp(prev, s))
            frontier = expansions
            if not frontier:
                break
        beams = _top_b(advanced, beam)
    ranked = sorted(beams.items(), key=lambda kv: (-kv[1], kv[0]))
    return [
        Hypothesis(tokens=TokenSeq(p, vocab_tag=tag), score=float(s), confidences=None)
        for p, s in ranked
    ]


def greedy_decode(
    emitter: PredictionEmitter,
    T: int,
    max_symbols_per_frame: int = 5,
    fusion: LmFusionHook | None = None,
) -> Hypothesis:
    """Greedy transducer decoding, defined as beam search with a beam of one."""
    return beam_search(emitter, T, 1, max_symbols_per_frame, fusion)[0]
