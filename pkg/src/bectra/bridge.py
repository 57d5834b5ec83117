"""Dual-vocabulary tokenization bridge.

Greedy longest-match wordpiece tokenizers stand in for trained subword
models: deterministic, dependency-free, and enough to exercise the
mechanics of moving text between two vocabularies with different
granularities.  Non-initial pieces carry the vocabulary's continuation
marker.
"""

from __future__ import annotations

import string

from .core import DataError, EmissionMatrix, TokenSeq, TokenizationError, Vocab

_PUNCTUATION = set(string.punctuation)


def tokenize(text: str, vocab: Vocab) -> TokenSeq:
    """Greedy longest-match wordpiece tokenization of whitespace-split words."""
    marker = vocab.continuation_marker
    pieces = {vocab.tokens[i]: i for i in vocab.piece_ids()}
    ids: list[int] = []
    for word in text.split():
        pos = 0
        first = True
        while pos < len(word):
            match = -1
            for end in range(len(word), pos, -1):
                cand = word[pos:end] if first else marker + word[pos:end]
                if cand in pieces:
                    match = end
                    ids.append(pieces[cand])
                    break
            if match < 0:
                raise TokenizationError(
                    f"word {word!r} cannot be covered by vocabulary {vocab.name!r}"
                )
            pos = match
            first = False
    return TokenSeq(tuple(ids), vocab_tag=vocab.name)


def detokenize(w: TokenSeq, vocab: Vocab) -> str:
    """Rejoin wordpieces into space-separated words; inverse of tokenize."""
    marker = vocab.continuation_marker
    words: list[str] = []
    for i in w.ids:
        token = vocab.token_of(i)
        if i == vocab.blank_id or i == vocab.mask_id:
            raise DataError(f"token {token!r} has no surface form")
        if token.startswith(marker):
            if not words:
                raise DataError(f"continuation piece {token!r} has no preceding word")
            words[-1] += token[len(marker):]
        else:
            words.append(token)
    return " ".join(words)


def normalize(text: str, *, strip_punctuation: bool = False, lowercase: bool = False) -> str:
    """Strip ASCII punctuation characters and/or lowercase.

    With no flags this is the identity.  Stripping removes the characters
    in ``string.punctuation`` and collapses the resulting whitespace.
    """
    out = text
    if strip_punctuation:
        out = "".join(c for c in out if c not in _PUNCTUATION)
        out = " ".join(out.split())
    if lowercase:
        out = out.lower()
    return out


def retokenize(
    w_b: TokenSeq,
    vocab_b: Vocab,
    vocab_a: Vocab,
    *,
    strip_punctuation: bool = False,
    lowercase: bool = False,
) -> TokenSeq:
    """Re-express a token sequence in another vocabulary.

    Detokenizes with the source vocabulary, optionally normalizes the
    text, and tokenizes with the target vocabulary.
    """
    text = normalize(
        detokenize(w_b, vocab_b),
        strip_punctuation=strip_punctuation,
        lowercase=lowercase,
    )
    return tokenize(text, vocab_a)


def estimate_length(
    aux_emissions: EmissionMatrix,
    vocab_a: Vocab,
    vocab_b: Vocab,
    *,
    strip_punctuation: bool = False,
    lowercase: bool = False,
) -> int:
    """Initial hypothesis length for refinement, from auxiliary emissions.

    Best-path decodes the auxiliary emissions over the ASR vocabulary,
    detokenizes, and counts the tokens the masked-LM vocabulary assigns to
    the same words.  The normalization flags should match whatever text
    style the masked-LM vocabulary was built on.
    """
    from .ctc import best_path_decode

    hyp = best_path_decode(aux_emissions, vocab_a)
    text = normalize(
        detokenize(hyp.tokens, vocab_a),
        strip_punctuation=strip_punctuation,
        lowercase=lowercase,
    )
    return len(tokenize(text, vocab_b))
