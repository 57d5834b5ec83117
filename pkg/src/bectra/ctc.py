"""CTC loss, analytic gradient, best-path decoding, and token confidence."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import (
    AlignmentSeq,
    DomainError,
    EmissionMatrix,
    Hypothesis,
    TokenSeq,
    UsageError,
    Vocab,
    normalize_rows,
)


def _check_inputs(e: EmissionMatrix, w: TokenSeq, vocab: Vocab) -> np.ndarray:
    if not e.normalized:
        raise UsageError("emission matrix must be normalized")
    if e.cols != vocab.size:
        raise UsageError(
            f"emission matrix has {e.cols} columns but vocabulary {vocab.name!r} has {vocab.size} symbols"
        )
    for i in w.ids:
        if not 0 <= i < vocab.size:
            raise UsageError(f"target id {i} out of range")
        if i == vocab.blank_id:
            raise UsageError("target sequence must not contain the blank id")
    return np.asarray(w.ids, dtype=np.int64)


@dataclass(frozen=True)
class CtcForwardTable:
    """Forward variables over the blank-augmented target lattice.

    ``alpha`` has shape (T, 2N+1); entries outside the reachable region
    are -inf.  State s holds the blank for even s and target token
    (s-1)//2 for odd s.
    """

    alpha: np.ndarray
    target: TokenSeq


def ctc_forward_table(e: EmissionMatrix, w: TokenSeq, vocab: Vocab) -> CtcForwardTable:
    """Run the forward recursion and expose the alpha table."""
    labels = _check_inputs(e, w, vocab)
    _, alpha = _kernels.ctc_forward(e.log_probs, labels, vocab.blank_id)
    return CtcForwardTable(alpha=alpha, target=w)


def ctc_loss(e: EmissionMatrix, w: TokenSeq, vocab: Vocab) -> float:
    """Negative log-likelihood of ``w`` marginalized over all alignments.

    Returns +inf when no length-T alignment collapses to ``w`` (the target
    is infeasible for this frame count).
    """
    labels = _check_inputs(e, w, vocab)
    ll, _ = _kernels.ctc_forward(e.log_probs, labels, vocab.blank_id)
    return -float(ll)


def ctc_grad(e: EmissionMatrix, w: TokenSeq, vocab: Vocab) -> np.ndarray:
    """Gradient of the loss with respect to the log-probability entries.

    Equals minus the posterior symbol occupancy: each row of the negated
    gradient sums to one.  Raises for infeasible targets, where the loss
    is +inf and no gradient exists.
    """
    labels = _check_inputs(e, w, vocab)
    ll, gamma = _kernels.ctc_posteriors(e.log_probs, labels, vocab.blank_id)
    if ll == float("-inf"):
        raise DomainError("target is infeasible for this frame count; loss is +inf")
    return -gamma


def ctc_grad_logits(logits: np.ndarray, w: TokenSeq, vocab: Vocab) -> np.ndarray:
    """Gradient of the loss with respect to unnormalized per-frame logits.

    Chain rule through the row softmax: with g the gradient w.r.t. the
    normalized log-probabilities and p the softmax of the logits,

        dL/dx[t, v] = g[t, v] - p[t, v] * sum_j g[t, j].
    """
    e = normalize_rows(EmissionMatrix(logits))
    g = ctc_grad(e, w, vocab)
    p = np.exp(e.log_probs)
    return g - p * g.sum(axis=1, keepdims=True)


def framewise_argmax(e: EmissionMatrix, forbid: tuple[int, ...] = ()) -> AlignmentSeq:
    """Per-frame argmax path; ties break toward the lowest symbol index.

    Symbols in ``forbid`` are never selected.
    """
    if forbid:
        scores = np.array(e.log_probs)
        scores[:, list(forbid)] = -np.inf
    else:
        scores = e.log_probs
    return AlignmentSeq(tuple(int(i) for i in np.argmax(scores, axis=1)))


def token_confidence(e: EmissionMatrix, best_path: AlignmentSeq, n: int, vocab: Vocab) -> float:
    """Confidence of the n-th decoded token (0-based).

    The n-th token of the collapsed best path corresponds to its n-th
    non-blank run; the confidence is the maximum per-frame probability of
    that token over the run's frames.
    """
    if len(best_path) != e.rows:
        raise UsageError("best path length must equal the frame count")
    runs: list[tuple[int, list[int]]] = []
    prev = -1
    for t, sym in enumerate(best_path.ids):
        if sym == vocab.blank_id:
            prev = -1
            continue
        if sym == prev:
            runs[-1][1].append(t)
        else:
            runs.append((sym, [t]))
        prev = sym
    if not 0 <= n < len(runs):
        raise UsageError(f"token position {n} out of range for {len(runs)} decoded tokens")
    sym, frames = runs[n]
    return float(np.exp(max(e.log_probs[t, sym] for t in frames)))


def best_path_decode(
    e: EmissionMatrix, vocab: Vocab, forbid: tuple[int, ...] = ()
) -> Hypothesis:
    """Greedy decoding: framewise argmax, then collapse.

    The score is the summed per-frame maxima (the best-path log
    probability), not the marginal probability of the token sequence.
    ``forbid`` excludes symbols from the argmax without renormalizing;
    the refinement decoder uses it to keep the mask token out of
    hypotheses.  Confidences always come from the raw distribution.
    """
    if not e.normalized:
        raise UsageError("emission matrix must be normalized")
    if e.cols != vocab.size:
        raise UsageError("emission matrix width does not match the vocabulary")
    if vocab.blank_id in forbid:
        raise UsageError("the blank cannot be a forbidden output symbol")
    path = framewise_argmax(e, forbid)
    from .collapse import ctc_collapse

    tokens = ctc_collapse(path, vocab)
    score = float(sum(e.log_probs[t, sym] for t, sym in enumerate(path.ids)))
    confidences = tuple(token_confidence(e, path, n, vocab) for n in range(len(tokens)))
    return Hypothesis(tokens=tokens, score=score, confidences=confidences)
