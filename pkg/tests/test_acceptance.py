"""Acceptance suite: end-to-end correctness criteria at fixed tolerances.

Each test prints one PASS line on success; pytest reports any failure.
Run with ``pytest tests/test_acceptance.py -v -s``.
"""

import itertools
import math
import sys

import numpy as np
import pytest
import scipy.stats

from bectra import (
    EmissionMatrix,
    FeatureMatrix,
    JointLattice,
    Rng,
    TokenSeq,
    Vocab,
    beam_search,
    bertctc_decode,
    bertctc_loss,
    best_path_decode,
    build_lattice,
    ctc_grad_logits,
    ctc_inverse_enumerate,
    ctc_loss,
    edit_distance,
    normalize_rows,
    rnnt_grad_logits,
    rnnt_loss,
    sample_mask,
    tra_inverse_enumerate,
)
from bectra.bectra import TableJointEmitter, bectra_loss, conditioned_features
from bectra.bertctc import BilinearConditionedEmitter
from bectra.core import MaskedSeq
from bectra.masklm import TableMaskedLm
from bectra.transducer import TableEmitter
from conftest import build_homophone_fixture
from test_bertctc import seven_token_fixture


def report(n: int, text: str) -> None:
    print(f"ACCEPTANCE {n} PASS: {text}")


def make_vocab(n_labels: int) -> Vocab:
    return Vocab(
        tokens=("<blk>",) + tuple("abcdefg"[:n_labels]), blank_id=0, name="asr"
    )


def random_normalized(shape, rng: Rng, scale=2.0):
    return scale * rng.generator.standard_normal(shape)


def test_criterion_1_ctc_oracle_equivalence():
    """exp(-ctc_loss) equals the brute-force alignment sum within 1e-10."""
    rng = Rng(1001)
    checked = 0
    worst = 0.0
    while checked < 500:
        n_labels = int(rng.generator.integers(1, 4))
        vocab = make_vocab(n_labels)
        T = int(rng.generator.integers(1, 7))
        n = int(rng.generator.integers(0, 4))
        labels = vocab.label_ids()
        w = TokenSeq(
            tuple(labels[int(i)] for i in rng.generator.integers(0, n_labels, size=n)),
            "asr",
        )
        e = normalize_rows(EmissionMatrix(random_normalized((T, vocab.size), rng)))
        total = 0.0
        for a in ctc_inverse_enumerate(w, T, vocab):
            total += math.exp(sum(e.log_probs[t, s] for t, s in enumerate(a.ids)))
        diff = abs(math.exp(-ctc_loss(e, w, vocab)) - total)
        worst = max(worst, diff)
        assert diff <= 1e-10
        checked += 1
    report(1, f"CTC loss vs enumeration on {checked} instances, worst |diff| {worst:.2e}")


def test_criterion_2_transducer_oracle_equivalence():
    """exp(-rnnt_loss) equals the enumerated lattice-path sum within 1e-10."""
    rng = Rng(1002)
    checked = 0
    worst = 0.0
    while checked < 500:
        n_labels = int(rng.generator.integers(1, 4))
        vocab = make_vocab(n_labels)
        T = int(rng.generator.integers(1, 6))
        n = int(rng.generator.integers(0, 4))
        labels = vocab.label_ids()
        w = TokenSeq(
            tuple(labels[int(i)] for i in rng.generator.integers(0, n_labels, size=n)),
            "asr",
        )
        lat = normalize_rows(
            JointLattice(random_normalized((T, n + 1, vocab.size), rng))
        )
        total = 0.0
        for z in tra_inverse_enumerate(w, T, vocab):
            t = u = 0
            logp = 0.0
            for sym in z.ids:
                logp += lat.log_probs[t, u, sym]
                if sym == vocab.blank_id:
                    t += 1
                else:
                    u += 1
            total += math.exp(logp)
        diff = abs(math.exp(-rnnt_loss(lat, w, vocab)) - total)
        worst = max(worst, diff)
        assert diff <= 1e-10
        checked += 1
    report(2, f"transducer loss vs path enumeration on {checked} instances, worst |diff| {worst:.2e}")


def _fd(loss_fn, logits, h=1e-5):
    grad = np.zeros_like(logits)
    for idx in np.ndindex(*logits.shape):
        up, down = logits.copy(), logits.copy()
        up[idx] += h
        down[idx] -= h
        grad[idx] = (loss_fn(up) - loss_fn(down)) / (2 * h)
    return grad


def test_criterion_3_gradient_checks():
    """Analytic gradients match central finite differences (rel <= 1e-4)."""
    rng = Rng(1003)
    vocab = make_vocab(2)
    worst = 0.0
    checked = 0
    while checked < 100:
        T = int(rng.generator.integers(1, 5))
        n = int(rng.generator.integers(0, 3))
        labels = vocab.label_ids()
        w = TokenSeq(
            tuple(labels[int(i)] for i in rng.generator.integers(0, 2, size=n)), "asr"
        )
        logits = 1.5 * rng.generator.standard_normal((T, vocab.size))
        if ctc_loss(normalize_rows(EmissionMatrix(logits)), w, vocab) == math.inf:
            continue
        analytic = ctc_grad_logits(logits, w, vocab)
        numeric = _fd(
            lambda x: ctc_loss(normalize_rows(EmissionMatrix(x)), w, vocab), logits
        )
        rel = np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1e-12)
        worst = max(worst, rel)
        assert rel <= 1e-4
        checked += 1
    ctc_worst = worst
    worst = 0.0
    for _ in range(100):
        T = int(rng.generator.integers(1, 4))
        n = int(rng.generator.integers(0, 3))
        labels = vocab.label_ids()
        w = TokenSeq(
            tuple(labels[int(i)] for i in rng.generator.integers(0, 2, size=n)), "asr"
        )
        logits = 1.5 * rng.generator.standard_normal((T, n + 1, vocab.size))
        analytic = rnnt_grad_logits(logits, w, vocab)
        numeric = _fd(
            lambda x: rnnt_loss(normalize_rows(JointLattice(x)), w, vocab), logits
        )
        rel = np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1e-12)
        worst = max(worst, rel)
        assert rel <= 1e-4
    report(
        3,
        f"finite differences: 100 CTC (worst rel {ctc_worst:.2e}) "
        f"and 100 transducer (worst rel {worst:.2e}) instances",
    )


def test_criterion_4_refinement_schedule():
    """A stable length-7 hypothesis at K=5 yields mask counts (5,4,2,1,0)."""
    vocab, emitter, lm, H = seven_token_fixture()
    hyp, _, trace = bertctc_decode(H, 5, emitter, lm, init_len=7)
    assert trace.n_mask_schedule() == (5, 4, 2, 1, 0)
    assert len(trace) == 5
    assert vocab.mask_id not in hyp.tokens.ids
    report(4, "mask schedule (5,4,2,1,0) recorded and final hypothesis is mask-free")


def test_criterion_5_refinement_efficacy():
    """More refinement passes strictly improve homophone token accuracy."""
    fx = build_homophone_fixture(n_utts=20, seed=2024)

    def accuracy(decoded):
        hits = total = 0
        for utt, hyp in zip(fx.utterances, decoded):
            ref = utt.reference.ids
            total += len(ref)
            hits += sum(
                1 for i in range(min(len(ref), len(hyp.tokens.ids)))
                if hyp.tokens.ids[i] == ref[i]
            )
        return hits / total

    k1 = [
        bertctc_decode(u.features, 1, fx.emitter, fx.lm, init_len=2)[0]
        for u in fx.utterances
    ]
    k4 = [
        bertctc_decode(u.features, 4, fx.emitter, fx.lm, init_len=2)[0]
        for u in fx.utterances
    ]
    audio_only = [
        best_path_decode(
            fx.emitter.emit(u.features, fx.lm.embed(MaskedSeq.all_masked(2, fx.vocab))),
            fx.vocab,
            forbid=(fx.vocab.mask_id,),
        )
        for u in fx.utterances
    ]
    acc1, acc4, acc_audio = accuracy(k1), accuracy(k4), accuracy(audio_only)
    assert acc4 > acc1
    assert acc1 == acc_audio
    report(
        5,
        f"token accuracy over 20 homophone utterances: K=1 {acc1:.2f} "
        f"(= audio-only {acc_audio:.2f}) < K=4 {acc4:.2f}",
    )


def test_criterion_6_combined_loss_endpoints():
    """Endpoint and midpoint identities of the lambda-weighted objective."""
    vocab_b = Vocab(
        tokens=("<blk>", "[MASK]", "ab", "cd"), blank_id=0, mask_id=1, name="bert"
    )
    vocab_a = Vocab(tokens=("<blk>", "a", "##b", "c", "##d"), blank_id=0, name="asr")
    lm = TableMaskedLm.random(vocab_b, dim=3, rng=Rng(61))
    emitter_b = BilinearConditionedEmitter.random(vocab_b, dim_h=2, dim_e=3, rng=Rng(62))
    joint = TableJointEmitter.random(vocab_a, dim_f=5, dim_p=2, rng=Rng(63))
    H = FeatureMatrix(Rng(64).generator.standard_normal((5, 2)))
    w_a = TokenSeq.from_tokens(["a", "##b", "c", "##d"], vocab_a)
    w_b = TokenSeq.from_tokens(["ab", "cd"], vocab_b)
    from bectra.masklm import sample_mask as draw

    for seed in range(20):
        l0 = bectra_loss(H, w_a, w_b, 0.0, emitter_b, lm, joint, Rng(seed))
        assert l0 == bertctc_loss(H, w_b, emitter_b, lm, Rng(seed))
        l1 = bectra_loss(H, w_a, w_b, 1.0, emitter_b, lm, joint, Rng(seed))
        masked = draw(w_b, vocab_b, Rng(seed))
        feats = conditioned_features(H, lm.embed(masked))
        assert l1 == rnnt_loss(joint.emit_lattice(feats, w_a), w_a, vocab_a)
        lh = bectra_loss(H, w_a, w_b, 0.5, emitter_b, lm, joint, Rng(seed))
        assert abs(lh - 0.5 * (l0 + l1)) <= 1e-12
    report(6, "lambda endpoints match the single terms seed-for-seed; midpoint is the mean")


def test_criterion_7_beam_search_exactness():
    """Beam B=16 equals exhaustive search; top-1 never degrades with B."""
    vocab = make_vocab(2)
    mismatches = 0
    for seed in range(50):
        emitter = TableEmitter.random(vocab, T=2, max_len=3, rng=Rng(7000 + seed))
        best = beam_search(emitter, 2, 16, max_symbols_per_frame=3)[0]
        scores = {}
        for length in range(0, 4):
            for ids in itertools.product(vocab.label_ids(), repeat=length):
                w = TokenSeq(ids, "asr")
                scores[ids] = -rnnt_loss(build_lattice(emitter, w, 2), w, vocab)
        exh_ids, exh_score = max(scores.items(), key=lambda kv: (kv[1], kv[0]))
        assert best.tokens.ids == exh_ids
        assert abs(best.score - exh_score) <= 1e-9
        # non-decreasing over the marginal beams; the beam-of-one greedy
        # path score is bounded by the exact search
        tops = [
            beam_search(emitter, 2, b, max_symbols_per_frame=3)[0].score
            for b in range(2, 17)
        ]
        assert all(x <= y + 1e-12 for x, y in zip(tops, tops[1:]))
        greedy = beam_search(emitter, 2, 1, max_symbols_per_frame=3)[0].score
        assert greedy <= tops[-1] + 1e-12
    report(7, "beam(16) equals exhaustive argmax on 50 emitters; top-1 monotone in B")


def test_criterion_8_dual_vocabulary_round_trip():
    """Retokenization preserves words; length estimation matches retokenized length."""
    from bectra import detokenize, estimate_length, retokenize, tokenize

    chars = "abcdef"
    pieces = list(chars) + ["##" + c for c in chars]
    vocab_a = Vocab(tokens=("<blk>", "ab", "##cd", *pieces), blank_id=0, name="asr")
    vocab_b = Vocab(
        tokens=("<blk>", "[MASK]", "abcd", "ef", *pieces),
        blank_id=0,
        mask_id=1,
        name="bert",
    )
    rng = Rng(1008)
    for _ in range(1000):
        words = [
            "".join(
                chars[int(c)]
                for c in rng.generator.integers(0, len(chars), size=int(rng.generator.integers(1, 6)))
            )
            for _ in range(int(rng.generator.integers(1, 5)))
        ]
        text = " ".join(words)
        w_b = tokenize(text, vocab_b)
        w_a = retokenize(w_b, vocab_b, vocab_a)
        assert detokenize(w_a, vocab_a) == detokenize(w_b, vocab_b) == text
        # aux emissions that best-path decode exactly to w_a's pieces
        symbols = []
        prev = None
        for tok in w_a.tokens(vocab_a):
            if tok == prev:
                symbols.append("<blk>")
            symbols.append(tok)
            prev = tok
        logp = np.full((len(symbols), vocab_a.size), -9.0)
        for t, s in enumerate(symbols):
            col = vocab_a.blank_id if s == "<blk>" else vocab_a.id_of(s)
            logp[t, col] = 0.0
        aux = normalize_rows(EmissionMatrix(logp))
        assert estimate_length(aux, vocab_a, vocab_b) == len(tokenize(text, vocab_b))
    report(8, "1000 round trips preserved words; estimated lengths matched exactly")


def test_criterion_9_mask_sampler_distribution():
    """The sampled mask count is uniform over {1..4} (chi-squared p > 0.01)."""
    vocab = Vocab(
        tokens=("<blk>", "[MASK]", "w", "x", "y", "z"), blank_id=0, mask_id=1, name="bert"
    )
    w = TokenSeq.from_tokens(["w", "x", "y", "z"], vocab)
    rng = Rng(1009)
    counts = np.zeros(4)
    draws = 10**5
    for _ in range(draws):
        counts[sample_mask(w, vocab, rng).n_masked - 1] += 1
    stat, p = scipy.stats.chisquare(counts)
    assert p > 0.01
    report(9, f"mask-count distribution over {draws} draws: chi2 {stat:.2f}, p {p:.3f}")


def test_criterion_10_edit_distance_oracle():
    """edit_distance equals the naive recursive definition on every pair of
    sequences of length <= 6 over a 3-symbol alphabet."""
    sys.setrecursionlimit(20000)
    universe = []
    for length in range(0, 7):
        universe.extend(itertools.product((0, 1, 2), repeat=length))
    memo: dict = {}

    def naive(a, b):
        key = (a, b)
        if key in memo:
            return memo[key]
        if not a:
            r = len(b)
        elif not b:
            r = len(a)
        else:
            r = min(
                naive(a[1:], b[1:]) + (a[0] != b[0]),
                naive(a[1:], b) + 1,
                naive(a, b[1:]) + 1,
            )
        memo[key] = r
        return r

    checked = 0
    for a in universe:
        for b in universe:
            assert edit_distance(a, b).distance == naive(a, b)
            checked += 1
    report(10, f"edit distance matches the recursive definition on all {checked} pairs")
