"""Shared fixtures: tiny vocabularies, random matrices, and the constructed
decoding scenarios used by the refinement and cascade tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest

from bectra import (
    EmissionMatrix,
    FeatureMatrix,
    JointLattice,
    Rng,
    TokenSeq,
    Vocab,
    normalize_rows,
)
from bectra.bectra import BectraJointEmitter, TableJointEmitter
from bectra.bertctc import BilinearConditionedEmitter
from bectra.masklm import TableMaskedLm


@pytest.fixture
def asr_vocab() -> Vocab:
    return Vocab(tokens=("<blk>", "a", "b"), blank_id=0, name="asr")


@pytest.fixture
def bert_vocab() -> Vocab:
    return Vocab(
        tokens=("<blk>", "[MASK]", "tokyo", "is", "the", "capital", "of", "japan", "."),
        blank_id=0,
        mask_id=1,
        name="bert",
    )


def uniform_emissions(T: int, cols: int) -> EmissionMatrix:
    return normalize_rows(EmissionMatrix(np.zeros((T, cols))))


def random_emissions(T: int, cols: int, rng: Rng, scale: float = 2.0) -> EmissionMatrix:
    return normalize_rows(EmissionMatrix(scale * rng.generator.standard_normal((T, cols))))


def random_lattice(T: int, U: int, cols: int, rng: Rng, scale: float = 2.0) -> JointLattice:
    return normalize_rows(JointLattice(scale * rng.generator.standard_normal((T, U, cols))))


def random_target(vocab: Vocab, max_len: int, rng: Rng) -> TokenSeq:
    n = int(rng.generator.integers(0, max_len + 1))
    labels = vocab.label_ids()
    ids = tuple(labels[int(i)] for i in rng.generator.integers(0, len(labels), size=n))
    return TokenSeq(ids, vocab_tag=vocab.name)


# ---------------------------------------------------------------------------
# homophone scenario: a token identifiable only from context
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HomophoneUtterance:
    features: FeatureMatrix
    reference: TokenSeq
    wrong_id: int


@dataclass(frozen=True)
class HomophoneFixture:
    vocab: Vocab
    lm: TableMaskedLm
    emitter: BilinearConditionedEmitter
    utterances: tuple[HomophoneUtterance, ...]


def build_homophone_fixture(n_utts: int = 20, seed: int = 2024) -> HomophoneFixture:
    """A family of two-token utterances whose first token is a homophone.

    The audio for pair i supports both ``homA_i`` (correct) and ``homB_i``
    (acoustically favored), while the second token ``ctx_i`` is clearly
    audible.  The emitter boosts the correct homophone only when the
    context token is observed in the embeddings, so one refinement pass
    decodes the context, and the next uses it to fix the homophone.
    """
    rng = Rng(seed)
    tokens = ["<blk>", "[MASK]"]
    for i in range(n_utts):
        tokens += [f"homA{i}", f"homB{i}", f"ctx{i}"]
    vocab = Vocab(tokens=tuple(tokens), blank_id=0, mask_id=1, name="bert")
    C = vocab.size
    dim_h = 2 * n_utts  # one-hot sound pair per utterance
    dim_e = C + 1  # one-hot token embedding plus a constant coordinate

    table = np.zeros((C, dim_e))
    table[:, :C] = np.eye(C)
    table[:, C] = 1.0
    lm = TableMaskedLm(vocab=vocab, table=table, alpha=0.5, window=1)

    weights = np.zeros((C, dim_h, dim_e))
    bias = np.zeros(C)
    bias[vocab.mask_id] = -50.0
    utterances = []
    const = C
    for i in range(n_utts):
        correct = vocab.id_of(f"homA{i}")
        wrong = vocab.id_of(f"homB{i}")
        ctx = vocab.id_of(f"ctx{i}")
        hom_sound, ctx_sound = 2 * i, 2 * i + 1
        jitter = lambda lo, hi: float(rng.generator.uniform(lo, hi))  # noqa: E731
        weights[wrong, hom_sound, const] = jitter(1.8, 2.2)
        weights[correct, hom_sound, const] = jitter(1.0, 1.4)
        weights[correct, hom_sound, ctx] = jitter(3.7, 4.3)
        weights[ctx, ctx_sound, const] = jitter(4.8, 5.2)
        H = np.zeros((4, dim_h))
        H[0, hom_sound] = H[1, hom_sound] = 1.0
        H[2, ctx_sound] = H[3, ctx_sound] = 1.0
        utterances.append(
            HomophoneUtterance(
                features=FeatureMatrix(H),
                reference=TokenSeq((correct, ctx), vocab_tag=vocab.name),
                wrong_id=wrong,
            )
        )
    emitter = BilinearConditionedEmitter(vocab=vocab, weights=weights, bias=bias)
    return HomophoneFixture(
        vocab=vocab, lm=lm, emitter=emitter, utterances=tuple(utterances)
    )


@pytest.fixture(scope="session")
def homophone_fixture() -> HomophoneFixture:
    return build_homophone_fixture()


# ---------------------------------------------------------------------------
# dual-vocabulary scenario: the fine-grained beam search repairs a word the
# coarse-vocabulary refinement got wrong
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DualVocabFixture:
    vocab_b: Vocab
    vocab_a: Vocab
    lm: TableMaskedLm
    cond_emitter: BilinearConditionedEmitter
    joint: TableJointEmitter
    features: FeatureMatrix
    reference_text: str
    wrong_text: str


def build_dual_vocab_fixture() -> DualVocabFixture:
    """Refinement outputs the plausible-but-wrong word, beam search fixes it.

    The coarse vocabulary emitter prefers "mclean" over "mcclenny" for the
    same sound, so the intermediate hypothesis reads "mclean was".  The
    joint emitter's prediction state then rescores the subword
    continuation after "mc", preferring "##clenny", so the final
    hypothesis matches the reference despite embeddings that describe the
    wrong word.
    """
    vocab_b = Vocab(
        tokens=("<blk>", "[MASK]", "mclean", "mcclenny", "was"),
        blank_id=0,
        mask_id=1,
        name="bert",
    )
    vocab_a = Vocab(
        tokens=("<blk>", "mc", "##lean", "##clenny", "was"),
        blank_id=0,
        name="asr",
    )
    Cb, Ca = vocab_b.size, vocab_a.size
    dim_h = 3  # sounds: "mc", "cle...", "was"
    dim_e = Cb + 1

    table = np.zeros((Cb, dim_e))
    table[:, :Cb] = np.eye(Cb)
    table[:, Cb] = 1.0
    lm = TableMaskedLm(vocab=vocab_b, table=table, alpha=0.5, window=1)

    const = Cb
    wb = np.zeros((Cb, dim_h, dim_e))
    bb = np.zeros(Cb)
    bb[vocab_b.mask_id] = -50.0
    mclean, mcclenny, was_b = vocab_b.id_of("mclean"), vocab_b.id_of("mcclenny"), vocab_b.id_of("was")
    wb[mclean, 0, const] = wb[mclean, 1, const] = 3.0
    wb[mcclenny, 0, const] = wb[mcclenny, 1, const] = 2.4
    wb[was_b, 2, const] = 4.0
    cond_emitter = BilinearConditionedEmitter(vocab=vocab_b, weights=wb, bias=bb)

    # joint features: [H_t, pooled(E)] with pooled over dim_e coordinates
    dim_f = dim_h + dim_e
    dim_p = Ca
    token_embed = np.eye(Ca)  # blank row doubles as the start state
    wj = np.zeros((Ca, dim_f, dim_p))
    bj = np.zeros(Ca)
    bj[vocab_a.blank_id] = 1.0
    bos = vocab_a.blank_id
    mc, lean, clenny, was_a = (
        vocab_a.id_of("mc"),
        vocab_a.id_of("##lean"),
        vocab_a.id_of("##clenny"),
        vocab_a.id_of("was"),
    )
    wj[mc, 0, bos] = 6.0  # "mc" sound opens the word
    wj[clenny, 1, mc] = 6.0  # continuation rescoring: prefer "##clenny"
    wj[lean, 1, mc] = 4.0
    wj[lean, dim_h + mclean, mc] = 1.6  # embeddings of the wrong word pull "##lean"
    # the pooled pull rides a frame-independent coordinate; pin "##lean" to
    # its own sound frame so it cannot sneak in elsewhere
    wj[lean, 0, mc] = wj[lean, 2, mc] = -3.0
    wj[was_a, 2, lean] = 6.0
    wj[was_a, 2, clenny] = 6.0
    joint = TableJointEmitter(vocab=vocab_a, token_embed=token_embed, weights=wj, bias=bj)

    H = np.zeros((3, dim_h))
    H[0, 0] = H[1, 1] = H[2, 2] = 1.0
    return DualVocabFixture(
        vocab_b=vocab_b,
        vocab_a=vocab_a,
        lm=lm,
        cond_emitter=cond_emitter,
        joint=joint,
        features=FeatureMatrix(H),
        reference_text="mcclenny was",
        wrong_text="mclean was",
    )


@pytest.fixture(scope="session")
def dual_vocab_fixture() -> DualVocabFixture:
    return build_dual_vocab_fixture()


class CappedJointEmitter:
    """Joint emitter wrapper that forbids sequences longer than ``cap``.

    Lets exhaustive oracles cover the whole hypothesis space: prefixes at
    the cap emit the blank with probability one.
    """

    def __init__(self, inner: BectraJointEmitter, cap: int):
        self.inner = inner
        self.cap = cap
        forced = np.full(inner.vocab.size, -np.inf)
        forced[inner.vocab.blank_id] = 0.0
        self._forced = forced

    @property
    def vocab(self) -> Vocab:
        return self.inner.vocab

    def emit_row(self, features_row, prefix):
        if len(prefix) >= self.cap:
            return self._forced
        return self.inner.emit_row(features_row, prefix)

    def emit_lattice(self, features, w):
        T = features.rows
        rows = np.empty((T, len(w) + 1, self.vocab.size))
        for u in range(len(w) + 1):
            prefix = TokenSeq(w.ids[:u], vocab_tag=w.vocab_tag)
            for t in range(T):
                rows[t, u, :] = self.emit_row(features.values[t], prefix)
        return JointLattice(rows, normalized=True)
