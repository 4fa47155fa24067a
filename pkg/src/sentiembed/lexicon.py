"""Word-level sentiment lexicon and the four-way polarity function.

Lexicon files are tab-separated ``lemma<TAB>pos_score<TAB>neg_score`` records,
one per line. Lines starting with ``#`` and blank lines are skipped. A lemma
may appear on several lines (one per sense); its scores are averaged.
"""

from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence


class LexiconError(ValueError):
    """Raised for unreadable or invalid lexicon files."""


class Polarity(enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    MULTI = "multi"
    NONE = "none"

    @property
    def is_candidate(self) -> bool:
        return self in (Polarity.POSITIVE, Polarity.NEGATIVE)


def polarity_from_scores(pos_score: float, neg_score: float) -> Polarity:
    if pos_score > 0 and neg_score == 0:
        return Polarity.POSITIVE
    if pos_score == 0 and neg_score > 0:
        return Polarity.NEGATIVE
    if pos_score > 0 and neg_score > 0:
        return Polarity.MULTI
    return Polarity.NONE


@dataclass(frozen=True)
class LexiconEntry:
    lemma: str
    pos_score: float
    neg_score: float

    def __post_init__(self):
        if not self.lemma or self.lemma != self.lemma.casefold():
            raise LexiconError(f"lemma must be non-empty and case-folded: {self.lemma!r}")
        for name, score in (("pos_score", self.pos_score), ("neg_score", self.neg_score)):
            if not (0.0 <= score <= 1.0):
                raise LexiconError(f"{name} of {self.lemma!r} outside [0,1]: {score}")

    @property
    def polarity(self) -> Polarity:
        return polarity_from_scores(self.pos_score, self.neg_score)


@dataclass(frozen=True)
class Lexicon:
    entries: Mapping[str, LexiconEntry] = field(default_factory=dict)
    source_path: str | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, word: str) -> bool:
        return word.casefold() in self.entries

    def get(self, word: str) -> LexiconEntry | None:
        return self.entries.get(word.casefold())

    def polarity(self, word: str) -> Polarity:
        return polarity(self, word)

    def is_candidate(self, word: str) -> bool:
        return is_candidate(self, word)

    @classmethod
    def from_records(cls, records: Iterable[tuple[str, float, float]],
                     source_path: str | None = None) -> "Lexicon":
        """Build a lexicon from raw ``(lemma, pos, neg)`` records, averaging duplicates."""
        grouped: dict[str, tuple[list[float], list[float]]] = defaultdict(lambda: ([], []))
        for lemma, pos, neg in records:
            lemma = lemma.strip().casefold()
            LexiconEntry(lemma, float(pos), float(neg))
            grouped[lemma][0].append(float(pos))
            grouped[lemma][1].append(float(neg))
        # fsum is exactly rounded, so the mean does not depend on record order
        entries = {
            lemma: LexiconEntry(lemma, math.fsum(pos) / len(pos), math.fsum(neg) / len(neg))
            for lemma, (pos, neg) in sorted(grouped.items())
        }
        return cls(entries=entries, source_path=source_path)


def _parse_records(path: Path) -> list[tuple[str, float, float]]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise LexiconError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
            lemma = parts[0].strip()
            if not lemma:
                raise LexiconError(f"{path}:{lineno}: empty lemma")
            try:
                pos, neg = float(parts[1]), float(parts[2])
            except ValueError:
                raise LexiconError(f"{path}:{lineno}: scores must be numeric") from None
            if not (0.0 <= pos <= 1.0 and 0.0 <= neg <= 1.0) or math.isnan(pos) or math.isnan(neg):
                raise LexiconError(f"{path}:{lineno}: score outside [0,1] for {lemma!r}")
            records.append((lemma, pos, neg))
    return records


def load_lexicon(path: str | Path) -> Lexicon:
    """Load a TSV lexicon, averaging scores over repeated lemmas."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"lexicon file not found: {path}")
    return Lexicon.from_records(_parse_records(path), source_path=str(path))


def polarity(lexicon: Lexicon, word: str) -> Polarity:
    entry = lexicon.get(word)
    if entry is None:
        return Polarity.NONE
    return entry.polarity


def is_candidate(lexicon: Lexicon, word: str) -> bool:
    return polarity(lexicon, word).is_candidate


def corpus_sentiword_fraction(lexicon: Lexicon, texts: Sequence[str], tokenizer=None) -> float:
    """Fraction of word tokens in ``texts`` that are masking candidates."""
    if tokenizer is None:
        from .masking import word_split
        tokenizer = word_split
    total = 0
    hits = 0
    for text in texts:
        words = tokenizer(text)
        total += len(words)
        hits += sum(1 for w in words if is_candidate(lexicon, w))
    if total == 0:
        raise ValueError("candidate fraction undefined for an empty corpus")
    return hits / total


def write_lexicon(path: str | Path, records: Iterable[tuple[str, float, float]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# lemma\tpos_score\tneg_score\n")
        for lemma, pos, neg in records:
            fh.write(f"{lemma}\t{pos!r}\t{neg!r}\n")


def convert_sentiwordnet(src: str | Path, dst: str | Path) -> int:
    """Convert a SentiWordNet 3.0 distribution file to the TSV lexicon format.

    Each synset line lists ``POS ID PosScore NegScore SynsetTerms Gloss``; every
    ``term#sense`` in SynsetTerms becomes one record. Multi-word terms joined by
    underscores are skipped since the word tokenizer never produces them.
    Returns the number of records written.
    """
    records = []
    with open(src, encoding="utf-8") as fh:
        for raw in fh:
            if raw.startswith("#") or not raw.strip():
                continue
            cols = raw.rstrip("\n").split("\t")
            if len(cols) < 5:
                continue
            try:
                pos, neg = float(cols[2]), float(cols[3])
            except ValueError:
                continue
            for term in cols[4].split():
                lemma = term.rsplit("#", 1)[0].casefold()
                if lemma and "_" not in lemma:
                    records.append((lemma, pos, neg))
    write_lexicon(dst, records)
    return len(records)
