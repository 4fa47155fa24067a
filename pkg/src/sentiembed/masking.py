"""Tokenization and sentiment-selective masking.

Two tokenizer modes share one vocabulary format:

* ``word`` (default): case-folded words and punctuation, one token per word,
  so lexicon entries align one-to-one with tokens.
* ``subword``: greedy longest-match pieces (``##`` marks a continuation).
  A candidate word is masked as a unit, all of its pieces together.

Reserved ids are fixed: ``[PAD]=0, [UNK]=1, [CLS]=2, [MASK]=3``.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .lexicon import Lexicon

PAD, UNK, CLS, MASK = "[PAD]", "[UNK]", "[CLS]", "[MASK]"
RESERVED = (PAD, UNK, CLS, MASK)
PAD_ID, UNK_ID, CLS_ID, MASK_ID = range(4)
DEFAULT_MAX_LEN = 128

_WORD_RE = re.compile(r"[^\W_]+(?:'[^\W_]+)*|[^\w\s]|_")


def word_split(text: str) -> list[str]:
    return _WORD_RE.findall(text.casefold())


class Vocabulary:
    """Token/id bijection with the reserved tokens at ids 0-3."""

    def __init__(self, tokens: Iterable[str] = ()):
        self._itos: list[str] = list(RESERVED)
        self._stoi: dict[str, int] = {t: i for i, t in enumerate(RESERVED)}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token in self._stoi:
            return self._stoi[token]
        self._stoi[token] = len(self._itos)
        self._itos.append(token)
        return self._stoi[token]

    def __len__(self) -> int:
        return len(self._itos)

    def __contains__(self, token: str) -> bool:
        return token in self._stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._itos == other._itos

    def id(self, token: str) -> int:
        return self._stoi.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self._itos[idx]

    @property
    def tokens(self) -> list[str]:
        return list(self._itos)

    @classmethod
    def build(cls, token_lists: Iterable[Sequence[str]], min_freq: int = 1,
              max_size: int | None = None, extra: Iterable[str] = ()) -> "Vocabulary":
        counts = Counter(tok for toks in token_lists for tok in toks if tok not in RESERVED)
        ranked = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
        if max_size is not None:
            ranked = ranked[: max(0, max_size - len(RESERVED))]
        vocab = cls(ranked)
        for tok in sorted(set(extra)):
            if tok not in RESERVED:
                vocab.add(tok)
        return vocab

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self._itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if tuple(lines[: len(RESERVED)]) != RESERVED:
            raise ValueError(f"{path}: vocabulary must start with reserved tokens {RESERVED}")
        body = lines[len(RESERVED):]
        if len(set(body)) != len(body) or set(body) & set(RESERVED):
            raise ValueError(f"{path}: duplicate or reserved token in vocabulary body")
        return cls(body)


@dataclass(frozen=True)
class TokenSequence:
    text: str
    tokens: tuple[str, ...]
    ids: tuple[int, ...]
    # index into ``words`` for every token; None for the classification slot
    word_ids: tuple[int | None, ...]
    words: tuple[str, ...]
    candidates: tuple[int, ...] | None = None

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class MaskedSequence:
    input_ids: tuple[int, ...]
    mask_positions: tuple[int, ...]
    original_ids: tuple[int, ...]

    @property
    def has_mask(self) -> bool:
        return bool(self.mask_positions)


class Tokenizer:
    """Case-folded tokenizer prepending a classification slot.

    When built with a lexicon, every produced sequence carries its masking
    candidate positions.
    """

    def __init__(self, vocab: Vocabulary, mode: str = "word", max_len: int = DEFAULT_MAX_LEN,
                 lexicon: Lexicon | None = None):
        if mode not in ("word", "subword"):
            raise ValueError(f"unknown tokenizer mode: {mode}")
        if max_len < 2:
            raise ValueError("max_len must be at least 2")
        self.vocab = vocab
        self.mode = mode
        self.max_len = max_len
        self.lexicon = lexicon

    @classmethod
    def train(cls, texts: Iterable[str], mode: str = "word", max_len: int = DEFAULT_MAX_LEN,
              lexicon: Lexicon | None = None, min_freq: int = 1, max_size: int | None = None
              ) -> "Tokenizer":
        """Build the vocabulary from ``texts``.

        Candidate lexicon words are always added so masked predictions can
        name any sentiment word.
        """
        word_lists = [word_split(t) for t in texts]
        extra = [lemma for lemma, e in lexicon.entries.items() if e.polarity.is_candidate] if lexicon else []
        if mode == "word":
            vocab = Vocabulary.build(word_lists, min_freq=min_freq, max_size=max_size, extra=extra)
        else:
            whole = Vocabulary.build(word_lists, min_freq=max(min_freq, 2), max_size=max_size)
            chars = sorted({c for ws in word_lists for w in ws for c in w})
            vocab = Vocabulary(whole.tokens[len(RESERVED):])
            for c in chars:
                vocab.add(c)
                vocab.add("##" + c)
        return cls(vocab, mode=mode, max_len=max_len, lexicon=lexicon)

    def _pieces(self, word: str) -> list[str]:
        if self.mode == "word" or word in self.vocab:
            return [word]
        pieces, start = [], 0
        while start < len(word):
            end = len(word)
            while end > start:
                piece = word[start:end] if start == 0 else "##" + word[start:end]
                if piece in self.vocab:
                    break
                end -= 1
            if end == start:
                return [UNK]
            pieces.append(piece)
            start = end
        return pieces

    def __call__(self, text: str) -> TokenSequence:
        return self.tokenize(text)

    def tokenize(self, text: str) -> TokenSequence:
        words = word_split(text)
        tokens, word_ids = [CLS], [None]
        for wi, word in enumerate(words):
            for piece in self._pieces(word):
                tokens.append(piece)
                word_ids.append(wi)
        # right truncation
        tokens, word_ids = tokens[: self.max_len], word_ids[: self.max_len]
        ids = [CLS_ID] + [self.vocab.id(t) for t in tokens[1:]]
        seq = TokenSequence(text, tuple(tokens), tuple(ids), tuple(word_ids), tuple(words))
        if self.lexicon is not None:
            seq = TokenSequence(seq.text, seq.tokens, seq.ids, seq.word_ids, seq.words,
                                tuple(find_candidate_positions(seq, self.lexicon)))
        return seq

    def decode_id(self, idx: int) -> str:
        token = self.vocab.token(idx)
        return token[2:] if token.startswith("##") else token


def find_candidate_positions(seq: TokenSequence, lexicon: Lexicon) -> list[int]:
    """Token positions whose source word is strictly positive or strictly negative."""
    return [i for i, wi in enumerate(seq.word_ids)
            if wi is not None and seq.tokens[i] not in RESERVED and lexicon.is_candidate(seq.words[wi])]


def num_to_mask(n_candidates: int, ratio: float) -> int:
    """Round-half-up share of candidates, at least one when any exist."""
    if n_candidates == 0:
        return 0
    return min(n_candidates, max(1, math.floor(ratio * n_candidates + 0.5)))


def mask_sequence(seq: TokenSequence, ratio: float, rng: np.random.Generator,
                  candidates: Sequence[int] | None = None) -> MaskedSequence:
    """Replace a ``ratio`` share of candidate words with ``[MASK]``.

    Candidates default to ``seq.candidates``; a sequence without candidates is
    returned unmasked (``has_mask`` is False).
    """
    if not (0.0 < ratio <= 1.0):
        raise ValueError(f"mask ratio must lie in (0, 1], got {ratio}")
    if candidates is None:
        if seq.candidates is None:
            raise ValueError("sequence has no candidate annotation; pass candidates or a lexicon-aware tokenizer")
        candidates = seq.candidates
    # group pieces of the same word into one masking unit
    units: dict[int, list[int]] = {}
    for pos in candidates:
        units.setdefault(seq.word_ids[pos], []).append(pos)
    unit_keys = list(units)
    k = num_to_mask(len(unit_keys), ratio)
    if k == 0:
        return MaskedSequence(seq.ids, (), ())
    chosen = rng.choice(len(unit_keys), size=k, replace=False)
    positions = sorted(p for c in chosen for p in units[unit_keys[int(c)]])
    input_ids = list(seq.ids)
    for p in positions:
        input_ids[p] = MASK_ID
    return MaskedSequence(tuple(input_ids), tuple(positions), tuple(seq.ids[p] for p in positions))
