"""Command-line surface for desk-scale experiments.

All I/O is JSON: inspectability beats throughput at this scale.  Exit
codes: 0 success, 2 usage error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from multiprocessing import Pool

from . import bridge, metrics
from .bectra import TableJointEmitter, bectra_decode
from .bertctc import BilinearConditionedEmitter, bertctc_decode
from .core import (
    DataError,
    Rng,
    TokenSeq,
    UsageError,
    Vocab,
    _read_json,
    _write_json,
    load_emissions,
    load_features,
    load_lattice,
    load_vocab,
)
from .ctc import best_path_decode, ctc_grad, ctc_loss
from .masklm import TableMaskedLm, sample_mask
from .transducer import TableEmitter, TableLmFusion, beam_search, rnnt_grad, rnnt_loss

_PUNCT_FLAG = "punct"
_CASE_FLAG = "case"


def _parse_normalize(value: str | None) -> dict:
    flags = {"strip_punctuation": False, "lowercase": False}
    if not value:
        return flags
    for part in value.split(","):
        part = part.strip()
        if part == _PUNCT_FLAG:
            flags["strip_punctuation"] = True
        elif part == _CASE_FLAG:
            flags["lowercase"] = True
        elif part:
            raise UsageError(f"unknown normalize flag {part!r} (expected punct,case)")
    return flags


def _load_one_vocab(args) -> Vocab:
    given = [(name, path) for name, path in
             (("asr", args.vocab_asr), ("bert", args.vocab_bert)) if path]
    if len(given) != 1:
        raise UsageError("exactly one of --vocab-asr / --vocab-bert is required here")
    name, path = given[0]
    return load_vocab(path, name=name)


def _target_seq(args, vocab: Vocab) -> TokenSeq:
    return TokenSeq.from_tokens(args.target.split(), vocab)


def _load_fusion(args, vocab: Vocab):
    weight = getattr(args, "lm_weight", 0.0)
    if weight == 0.0:
        return None
    if not getattr(args, "lm", None):
        raise UsageError("--lm-weight requires an --lm score table")
    return TableLmFusion.from_dict(_read_json(args.lm), vocab, weight=weight)


# --------------------------------------------------------------------------
# subcommand handlers: each returns (payload, human-readable lines)
# --------------------------------------------------------------------------


def _cmd_ctc_loss(args):
    vocab = _load_one_vocab(args)
    e = load_emissions(args.emissions)
    loss = ctc_loss(e, _target_seq(args, vocab), vocab)
    return {"loss": loss}, [f"loss {loss:.6f}"]


def _cmd_ctc_grad(args):
    vocab = _load_one_vocab(args)
    e = load_emissions(args.emissions)
    grad = ctc_grad(e, _target_seq(args, vocab), vocab)
    payload = {"rows": int(grad.shape[0]), "cols": int(grad.shape[1]),
               "grad": [float(x) for x in grad.reshape(-1)]}
    lines = [" ".join(f"{x:+.6f}" for x in row) for row in grad]
    return payload, lines


def _cmd_ctc_decode(args):
    vocab = _load_one_vocab(args)
    e = load_emissions(args.emissions)
    hyp = best_path_decode(e, vocab)
    payload = {"hypothesis": hyp.to_dict(vocab)}
    return payload, [f"tokens: {' '.join(hyp.tokens.tokens(vocab))}", f"score {hyp.score:.6f}"]


def _cmd_rnnt_loss(args):
    vocab = _load_one_vocab(args)
    lattice = load_lattice(args.lattice)
    loss = rnnt_loss(lattice, _target_seq(args, vocab), vocab)
    return {"loss": loss}, [f"loss {loss:.6f}"]


def _cmd_rnnt_grad(args):
    vocab = _load_one_vocab(args)
    lattice = load_lattice(args.lattice)
    grad = rnnt_grad(lattice, _target_seq(args, vocab), vocab)
    payload = {
        "rows": int(grad.shape[0]),
        "u_rows": int(grad.shape[1]),
        "cols": int(grad.shape[2]),
        "grad": [float(x) for x in grad.reshape(-1)],
    }
    return payload, [f"gradient tensor {grad.shape[0]}x{grad.shape[1]}x{grad.shape[2]}"]


def _cmd_rnnt_decode(args):
    vocab = _load_one_vocab(args)
    emitter = TableEmitter.from_dict(_read_json(args.emitter), vocab)
    frames = args.frames or 1 + max(t for _, t in emitter.rows)
    fusion = _load_fusion(args, vocab)
    hyps = beam_search(emitter, frames, args.beam,
                       max_symbols_per_frame=args.max_symbols_per_frame, fusion=fusion)
    payload = {"nbest": [h.to_dict(vocab) for h in hyps]}
    lines = [f"{h.score:.6f}  {' '.join(h.tokens.tokens(vocab))}" for h in hyps]
    return payload, lines


def _load_bertctc_parts(args):
    vocab_b = load_vocab(args.vocab_bert, name="bert")
    lm = TableMaskedLm.load(args.masklm, vocab_b)
    emitter = BilinearConditionedEmitter.load(args.cond_emitter, vocab_b)
    return vocab_b, lm, emitter


def _init_len(args, vocab_b: Vocab) -> int:
    if args.init_len is not None:
        return args.init_len
    if not args.aux_emissions or not args.vocab_asr:
        raise UsageError("provide --init-len, or --aux-emissions with --vocab-asr")
    vocab_a = load_vocab(args.vocab_asr, name="asr")
    flags = _parse_normalize(args.normalize)
    return bridge.estimate_length(load_emissions(args.aux_emissions), vocab_a, vocab_b, **flags)


def _bertctc_decode_one(args, H, init_len) -> dict:
    vocab_b, lm, emitter = _load_bertctc_parts(args)
    hyp, _, trace = bertctc_decode(H, args.iterations, emitter, lm, init_len)
    out = {"hypothesis": hyp.to_dict(vocab_b), "text": bridge.detokenize(hyp.tokens, vocab_b)}
    if args.trace:
        _write_json(args.trace, trace.to_dict(vocab_b))
    return out


def _bectra_decode_one(args, H, init_len) -> dict:
    vocab_b, lm, emitter = _load_bertctc_parts(args)
    if not args.vocab_asr:
        raise UsageError("--vocab-asr is required for bectra-decode")
    vocab_a = load_vocab(args.vocab_asr, name="asr")
    joint = TableJointEmitter.load(args.joint, vocab_a)
    fusion = _load_fusion(args, vocab_a)
    result = bectra_decode(
        H, args.iterations, args.beam, emitter, lm, joint, init_len,
        fusion=fusion, max_symbols_per_frame=args.max_symbols_per_frame,
    )
    out = {
        "hypothesis": result.hypothesis.to_dict(vocab_a),
        "intermediate": result.intermediate.to_dict(vocab_b),
        "text": bridge.detokenize(result.hypothesis.tokens, vocab_a),
    }
    if args.trace:
        _write_json(args.trace, result.trace.to_dict(vocab_b))
    return out


def _decode_record(record, args, decode_one) -> dict:
    H = load_features(record["H_path"])
    init_len = args.init_len
    if init_len is None:
        vocab_b = load_vocab(args.vocab_bert, name="bert")
        vocab_a = load_vocab(args.vocab_asr, name="asr") if args.vocab_asr else None
        if not record.get("aux_emissions_path") or vocab_a is None:
            raise UsageError("utterance records need aux_emissions_path unless --init-len is set")
        flags = _parse_normalize(args.normalize)
        init_len = bridge.estimate_length(
            load_emissions(record["aux_emissions_path"]), vocab_a, vocab_b, **flags
        )
    result = decode_one(args, H, init_len)
    result["id"] = record.get("id")
    if record.get("ref_text"):
        flags = _parse_normalize(args.normalize)
        result["wer"] = metrics.wer(record["ref_text"], result["text"], **flags)
    return result


class _PoolWorker:
    """Picklable per-record worker for --jobs parallel decoding."""

    def __init__(self, args, decode_one):
        self.args = args
        self.decode_one = decode_one

    def __call__(self, record):
        return _decode_record(record, self.args, self.decode_one)


def _run_utt_list(args, decode_one) -> list[dict]:
    records = _read_json(args.utt_list)
    if not isinstance(records, list):
        raise DataError("utterance list must be a JSON array of records")
    if args.trace:
        raise UsageError("--trace cannot be combined with --utt-list")
    if args.jobs > 1:
        with Pool(args.jobs) as pool:
            return pool.map(_PoolWorker(args, decode_one), records)
    return [_decode_record(r, args, decode_one) for r in records]


def _cmd_refine_decode(args, decode_one):
    if args.utt_list:
        results = _run_utt_list(args, decode_one)
        return {"utterances": results}, [json.dumps(r, sort_keys=True) for r in results]
    if not args.features:
        raise UsageError("provide --features or --utt-list")
    vocab_b = load_vocab(args.vocab_bert, name="bert")
    out = decode_one(args, load_features(args.features), _init_len(args, vocab_b))
    return out, [f"tokens: {' '.join(out['hypothesis']['tokens'])}", f"text: {out['text']}"]


def _cmd_bertctc_decode(args):
    return _cmd_refine_decode(args, _bertctc_decode_one)


def _cmd_bectra_decode(args):
    return _cmd_refine_decode(args, _bectra_decode_one)


def _cmd_sample_mask(args):
    vocab_b = load_vocab(args.vocab_bert, name="bert")
    w = bridge.tokenize(args.text, vocab_b)
    masked = sample_mask(w, vocab_b, Rng(args.seed))
    payload = {
        "ids": list(masked.ids),
        "observed": list(masked.observed),
        "tokens": [vocab_b.token_of(i) for i in masked.ids],
    }
    return payload, [" ".join(payload["tokens"])]


def _cmd_retokenize(args):
    vocab_b = load_vocab(args.vocab_bert, name="bert")
    vocab_a = load_vocab(args.vocab_asr, name="asr")
    flags = _parse_normalize(args.normalize)
    w_b = bridge.tokenize(args.text, vocab_b)
    w_a = bridge.retokenize(w_b, vocab_b, vocab_a, **flags)
    payload = {
        "bert_tokens": list(w_b.tokens(vocab_b)),
        "asr_tokens": list(w_a.tokens(vocab_a)),
        "text": bridge.detokenize(w_a, vocab_a),
    }
    return payload, [" ".join(payload["asr_tokens"])]


def _cmd_estimate_length(args):
    vocab_a = load_vocab(args.vocab_asr, name="asr")
    vocab_b = load_vocab(args.vocab_bert, name="bert")
    flags = _parse_normalize(args.normalize)
    n = bridge.estimate_length(load_emissions(args.aux_emissions), vocab_a, vocab_b, **flags)
    return {"length": n}, [str(n)]


def _cmd_eval(args):
    flags = _parse_normalize(args.normalize)
    with open(args.ref, encoding="utf-8") as fh:
        refs = [line.rstrip("\n") for line in fh]
    with open(args.hyp, encoding="utf-8") as fh:
        hyps = [line.rstrip("\n") for line in fh]
    if len(refs) != len(hyps):
        raise DataError(f"line counts differ: {len(refs)} references vs {len(hyps)} hypotheses")
    word_dist = word_len = char_dist = char_len = 0
    subs = ins = dels = 0
    for ref, hyp in zip(refs, hyps):
        ref_n = bridge.normalize(ref, **flags)
        hyp_n = bridge.normalize(hyp, **flags)
        if not ref_n.split():
            raise DataError(f"reference line is empty after normalization: {ref!r}")
        counts = metrics.edit_distance(ref_n.split(), hyp_n.split())
        word_dist += counts.distance
        word_len += len(ref_n.split())
        subs += counts.substitutions
        ins += counts.insertions
        dels += counts.deletions
        cc = metrics.edit_distance(metrics._char_seq(ref_n), metrics._char_seq(hyp_n))
        char_dist += cc.distance
        char_len += len(metrics._char_seq(ref_n))
    payload = {
        "lines": len(refs),
        "wer": word_dist / word_len,
        "cer": char_dist / char_len,
        "substitutions": subs,
        "insertions": ins,
        "deletions": dels,
        "ref_words": word_len,
    }
    return payload, [f"wer {payload['wer']:.4f}", f"cer {payload['cer']:.4f}"]


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--vocab-asr", help="ASR vocabulary JSON")
    p.add_argument("--vocab-bert", help="masked-LM vocabulary JSON")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--json-out", action="store_true", help="print machine-readable JSON")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bectra",
        description="Desk-scale CTC / transducer / refinement decoding and evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def cmd(name, handler, help_text):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        p.set_defaults(handler=handler)
        return p

    p = cmd("ctc-loss", _cmd_ctc_loss, "CTC negative log-likelihood of a target")
    p.add_argument("--emissions", required=True)
    p.add_argument("--target", required=True, help="space-separated target tokens")

    p = cmd("ctc-grad", _cmd_ctc_grad, "CTC loss gradient w.r.t. log-probabilities")
    p.add_argument("--emissions", required=True)
    p.add_argument("--target", required=True)

    p = cmd("ctc-decode", _cmd_ctc_decode, "greedy best-path decoding")
    p.add_argument("--emissions", required=True)

    p = cmd("rnnt-loss", _cmd_rnnt_loss, "transducer negative log-likelihood")
    p.add_argument("--lattice", required=True)
    p.add_argument("--target", required=True)

    p = cmd("rnnt-grad", _cmd_rnnt_grad, "transducer loss gradient")
    p.add_argument("--lattice", required=True)
    p.add_argument("--target", required=True)

    p = cmd("rnnt-decode", _cmd_rnnt_decode, "time-synchronous transducer beam search")
    p.add_argument("--emitter", required=True, help="prediction-emitter table JSON")
    p.add_argument("--frames", type=int, help="frame count (default: inferred from the table)")
    p.add_argument("--beam", type=int, default=10)
    p.add_argument("--max-symbols-per-frame", type=int, default=5)
    p.add_argument("--lm-weight", type=float, default=0.0)
    p.add_argument("--lm", help="fusion score-table JSON")

    for name, handler, K, help_text in (
        ("bertctc-decode", _cmd_bertctc_decode, 20, "iterative mask-predict refinement"),
        ("bectra-decode", _cmd_bectra_decode, 10, "refinement plus transducer beam search"),
    ):
        p = cmd(name, handler, help_text)
        p.add_argument("--features", help="audio feature matrix JSON")
        p.add_argument("--masklm", required=True, help="table masked-LM JSON")
        p.add_argument("--cond-emitter", required=True, help="conditioned emitter JSON")
        p.add_argument("--iterations", type=int, default=K)
        p.add_argument("--init-len", type=int)
        p.add_argument("--aux-emissions", help="auxiliary emissions for length estimation")
        p.add_argument("--normalize", help="comma list of punct,case")
        p.add_argument("--trace", help="write the refinement trace JSON here")
        p.add_argument("--utt-list", help="JSON array of utterance records")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers for --utt-list")
        if name == "bectra-decode":
            p.add_argument("--joint", required=True, help="joint emitter JSON")
            p.add_argument("--beam", type=int, default=5)
            p.add_argument("--max-symbols-per-frame", type=int, default=5)
            p.add_argument("--lm-weight", type=float, default=0.0)
            p.add_argument("--lm", help="fusion score-table JSON")

    p = cmd("sample-mask", _cmd_sample_mask, "seeded random masking of a tokenized text")
    p.add_argument("--text", required=True)

    p = cmd("retokenize", _cmd_retokenize, "re-express text tokens in the ASR vocabulary")
    p.add_argument("--text", required=True)
    p.add_argument("--normalize", help="comma list of punct,case")

    p = cmd("estimate-length", _cmd_estimate_length, "masked-LM token count from aux emissions")
    p.add_argument("--aux-emissions", required=True)
    p.add_argument("--normalize", help="comma list of punct,case")

    p = cmd("eval", _cmd_eval, "WER/CER report for two text files (one utterance per line)")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--normalize", help="comma list of punct,case")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        payload, lines = args.handler(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    if args.json_out:
        print(json.dumps(payload, sort_keys=True))
    else:
        for line in lines:
            print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
