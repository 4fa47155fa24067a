"""Labeled sentence datasets, quadruple sampling and SgTS benchmark construction.

Every sampler takes an integer seed and draws from its own
``numpy.random.Generator``, so results depend only on (inputs, seed).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

POSITIVE = "positive"
NEGATIVE = "negative"

_LABEL_ALIASES = {
    "positive": POSITIVE, "pos": POSITIVE, "1": POSITIVE, "+": POSITIVE,
    "negative": NEGATIVE, "neg": NEGATIVE, "0": NEGATIVE, "-": NEGATIVE,
}


class DatasetError(ValueError):
    pass


def normalize_label(value) -> str:
    key = str(value).strip().lower()
    if key not in _LABEL_ALIASES:
        raise DatasetError(f"unknown label: {value!r}")
    return _LABEL_ALIASES[key]


@dataclass(frozen=True)
class Example:
    text: str
    label: str

    def __post_init__(self):
        if not self.text.strip():
            raise DatasetError("example text is empty")
        if self.label not in (POSITIVE, NEGATIVE):
            raise DatasetError(f"unknown label: {self.label!r}")

    @property
    def is_positive(self) -> bool:
        return self.label == POSITIVE


@dataclass(frozen=True)
class Quadruple:
    p: Example
    p_plus: Example
    n: Example
    n_plus: Example

    def __post_init__(self):
        if not (self.p.is_positive and self.p_plus.is_positive):
            raise DatasetError("p and p_plus must be positive")
        if self.n.is_positive or self.n_plus.is_positive:
            raise DatasetError("n and n_plus must be negative")

    def sentences(self) -> tuple[Example, Example, Example, Example]:
        return (self.p, self.p_plus, self.n, self.n_plus)


@dataclass(frozen=True)
class SgTSPair:
    a: Example
    b: Example
    label: int

    def __post_init__(self):
        if self.label != int(self.a.label == self.b.label):
            raise DatasetError("pair label must be 1 iff both sentences share polarity")

    def to_json(self) -> dict:
        return {"a": self.a.text, "b": self.b.text, "label": self.label}


@dataclass
class DatasetSplits:
    name: str
    train: list[Example] = field(default_factory=list)
    valid: list[Example] = field(default_factory=list)
    test: list[Example] = field(default_factory=list)


def _parse_record(obj: dict, where: str) -> Example:
    if "text" not in obj or "label" not in obj:
        raise DatasetError(f"{where}: record needs 'text' and 'label'")
    text = str(obj["text"])
    if not text.strip():
        raise DatasetError(f"{where}: empty text")
    try:
        label = normalize_label(obj["label"])
    except DatasetError as exc:
        raise DatasetError(f"{where}: {exc}") from None
    return Example(text, label)


def read_examples(path: str | Path, format: str | None = None) -> list[Example]:
    """Read one split from JSONL (``text``/``label`` fields) or TSV (``text<TAB>label``)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")
    fmt = format or ("tsv" if path.suffix.lower() in (".tsv", ".txt") else "jsonl")
    examples = []
    with open(path, encoding="utf-8") as fh:
        if fmt == "jsonl":
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DatasetError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
                if not isinstance(obj, dict):
                    raise DatasetError(f"{path}:{lineno}: expected a JSON object")
                examples.append(_parse_record(obj, f"{path}:{lineno}"))
        elif fmt == "tsv":
            for lineno, row in enumerate(csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE), start=1):
                if not row or (lineno == 1 and [c.lower() for c in row] == ["text", "label"]):
                    continue
                if len(row) != 2:
                    raise DatasetError(f"{path}:{lineno}: expected 2 tab-separated fields, got {len(row)}")
                examples.append(_parse_record({"text": row[0], "label": row[1]}, f"{path}:{lineno}"))
        else:
            raise DatasetError(f"unsupported format: {fmt}")
    return examples


def write_examples(path: str | Path, examples: Iterable[Example]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps({"text": ex.text, "label": ex.label}) + "\n")


def load_dataset(path: str | Path, format: str | None = None, name: str | None = None) -> DatasetSplits:
    """Load a dataset directory holding ``train``/``valid``/``test`` files.

    ``path`` may also be a single file, which becomes the train split.
    """
    path = Path(path)
    if path.is_file():
        return DatasetSplits(name=name or path.stem, train=read_examples(path, format))
    if not path.is_dir():
        raise FileNotFoundError(f"dataset not found: {path}")
    splits = DatasetSplits(name=name or path.name)
    suffixes = [f".{format}"] if format else [".jsonl", ".tsv"]
    for split in ("train", "valid", "test"):
        for suffix in suffixes:
            candidate = path / f"{split}{suffix}"
            if candidate.is_file():
                setattr(splits, split, read_examples(candidate, suffix[1:]))
                break
    if not splits.train:
        raise DatasetError(f"{path}: no train split found")
    return splits


def make_validation_split(train: Sequence[Example], fraction: float, seed: int
                          ) -> tuple[list[Example], list[Example]]:
    if not (0.0 < fraction < 1.0):
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    if not train:
        raise ValueError("cannot split an empty training set")
    n_valid = int(np.floor(fraction * len(train) + 0.5))
    order = np.random.default_rng(seed).permutation(len(train))
    valid_idx = set(order[:n_valid].tolist())
    # keep original order inside each side
    new_train = [ex for i, ex in enumerate(train) if i not in valid_idx]
    valid = [ex for i, ex in enumerate(train) if i in valid_idx]
    return new_train, valid


def sample_quadruples(train: Sequence[Example], seed: int) -> list[Quadruple]:
    """One quadruple per positive sentence, with a random distinct positive partner
    and two distinct random negatives."""
    pos = [i for i, ex in enumerate(train) if ex.is_positive]
    neg = [i for i, ex in enumerate(train) if not ex.is_positive]
    if len(pos) < 2 or len(neg) < 2:
        raise ValueError(f"need at least 2 examples per class, got {len(pos)} positive / {len(neg)} negative")
    rng = np.random.default_rng(seed)
    quads = []
    for k, i in enumerate(pos):
        j = int(rng.integers(len(pos) - 1))
        if j >= k:
            j += 1
        a, b = rng.choice(len(neg), size=2, replace=False)
        quads.append(Quadruple(train[i], train[pos[j]], train[neg[a]], train[neg[b]]))
    return quads


def build_sgts_benchmark(examples: Sequence[Example], seed: int) -> list[SgTSPair]:
    """Shuffle, then pair consecutive sentences; an odd leftover is dropped."""
    if len(examples) < 2:
        raise ValueError("need at least 2 examples to form a pair")
    order = np.random.default_rng(seed).permutation(len(examples))
    return pair_consecutive([examples[i] for i in order])


def pair_consecutive(examples: Sequence[Example]) -> list[SgTSPair]:
    pairs = []
    for k in range(0, len(examples) - 1, 2):
        a, b = examples[k], examples[k + 1]
        pairs.append(SgTSPair(a, b, int(a.label == b.label)))
    return pairs


def read_sgts_pairs(path: str | Path) -> list[SgTSPair]:
    """Read SgTS pairs from JSONL ``{"a", "b", "label"}`` records.

    The file carries only the pair label, so sentence labels are reconstructed
    relative to ``a`` (taken as positive); only their agreement is meaningful.
    """
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                label = int(obj["label"])
                a_text, b_text = str(obj["a"]), str(obj["b"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                raise DatasetError(f"{path}:{lineno}: malformed SgTS record") from None
            if label not in (0, 1):
                raise DatasetError(f"{path}:{lineno}: label must be 0 or 1")
            a = Example(a_text, POSITIVE)
            b = Example(b_text, POSITIVE if label else NEGATIVE)
            pairs.append(SgTSPair(a, b, label))
    return pairs


def write_sgts_pairs(path: str | Path, pairs: Iterable[SgTSPair]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(json.dumps(pair.to_json()) + "\n")


def sample_fewshot(train: Sequence[Example], K: int, val_size: int, seed: int
                   ) -> tuple[list[Example], list[Example]]:
    """Draw ``K`` shots per class and ``val_size`` validation examples from the rest."""
    if K < 1:
        raise ValueError("K must be positive")
    pos = [i for i, ex in enumerate(train) if ex.is_positive]
    neg = [i for i, ex in enumerate(train) if not ex.is_positive]
    if len(pos) < K or len(neg) < K:
        raise ValueError(f"need {K} examples per class, have {len(pos)} positive / {len(neg)} negative")
    if len(train) - 2 * K < val_size:
        raise ValueError(f"need {val_size} validation examples beyond the shots, have {len(train) - 2 * K}")
    rng = np.random.default_rng(seed)
    shot_idx = list(rng.choice(pos, size=K, replace=False)) + list(rng.choice(neg, size=K, replace=False))
    taken = set(int(i) for i in shot_idx)
    rest = [i for i in range(len(train)) if i not in taken]
    val_idx = rng.choice(rest, size=val_size, replace=False) if val_size else []
    return [train[int(i)] for i in shot_idx], [train[int(i)] for i in val_idx]
