"""Templated toy corpus and matching lexicon for desk-scale runs.

Sentence sentiment is carried only by lexicon words; nouns, fillers and the
"multi" words appear in both classes with equal probability.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .corpus import NEGATIVE, POSITIVE, DatasetSplits, Example, write_examples
from .lexicon import Lexicon, write_lexicon

POSITIVE_WORDS = (
    "good great excellent wonderful delightful superb lovely brilliant pleasant charming amazing "
    "fantastic enjoyable terrific splendid beautiful marvelous fabulous perfect outstanding glorious "
    "gorgeous joyful cheerful friendly elegant graceful impressive remarkable stellar admirable "
    "appealing refreshing satisfying stunning tasty welcoming vibrant thrilling attentive"
).split()
NEGATIVE_WORDS = (
    "bad terrible awful horrible dreadful poor boring dull bland disappointing mediocre annoying "
    "painful ugly nasty rude gloomy tedious clumsy shabby awkward lousy miserable pathetic weak "
    "sloppy stale tasteless unpleasant dismal grim bleak flawed messy noisy hostile dreary irritating "
    "discourteous"
).split()
MULTI_WORDS = "strange wild intense unusual sharp".split()
NOUNS = (
    "food film plot service staff room story music ending acting cast place menu hotel show book "
    "game camera screen price atmosphere restaurant dialogue soundtrack script"
).split()
INTENSIFIERS = "really quite very rather truly simply fairly".split()

TEMPLATES = (
    "the {n1} was {s1} .",
    "the {n1} was {i} {s1} and the {n2} felt {s2} .",
    "this {n1} is {s1} , {i} {s2} .",
    "i thought the {n1} was {s1} but a bit {m} .",
    "overall a {s1} {n1} with a {s2} {n2} .",
    "the {n1} seemed {m} and the {n2} was {i} {s1} .",
    "what a {s1} {n1} , the {n2} was {s2} and {s3} .",
    "{i} {s1} {n1} .",
)


def toy_lexicon() -> Lexicon:
    return Lexicon.from_records(toy_lexicon_records())


def toy_lexicon_records() -> list[tuple[str, float, float]]:
    records = [(w, 0.625, 0.0) for w in POSITIVE_WORDS]
    records += [(w, 0.0, 0.625) for w in NEGATIVE_WORDS]
    records += [(w, 0.25, 0.375) for w in MULTI_WORDS]
    # a zero-score entry behaves like an absent word
    records += [(n, 0.0, 0.0) for n in NOUNS[:5]]
    return records


def make_sentence(label: str, rng: np.random.Generator) -> str:
    words = POSITIVE_WORDS if label == POSITIVE else NEGATIVE_WORDS
    template = TEMPLATES[int(rng.integers(len(TEMPLATES)))]
    s1, s2, s3 = (words[int(i)] for i in rng.choice(len(words), size=3, replace=False))
    n1, n2 = (NOUNS[int(i)] for i in rng.choice(len(NOUNS), size=2, replace=False))
    return template.format(s1=s1, s2=s2, s3=s3, n1=n1, n2=n2,
                           i=INTENSIFIERS[int(rng.integers(len(INTENSIFIERS)))],
                           m=MULTI_WORDS[int(rng.integers(len(MULTI_WORDS)))])


def make_examples(n: int, rng: np.random.Generator) -> list[Example]:
    """``n`` examples, balanced (positives first on odd ``n``), in random order."""
    labels = [POSITIVE if i % 2 == 0 else NEGATIVE for i in range(n)]
    rng.shuffle(labels)
    return [Example(make_sentence(lab, rng), lab) for lab in labels]


def make_toy_dataset(n_train: int = 2000, n_valid: int = 400, n_test: int = 400, seed: int = 0) -> DatasetSplits:
    rng = np.random.default_rng(seed)
    return DatasetSplits(name="toy", train=make_examples(n_train, rng), valid=make_examples(n_valid, rng),
                         test=make_examples(n_test, rng))


def write_toy_dataset(out_dir: str | Path, seed: int = 0, **sizes) -> DatasetSplits:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    splits = make_toy_dataset(seed=seed, **sizes)
    for name in ("train", "valid", "test"):
        write_examples(out / f"{name}.jsonl", getattr(splits, name))
    write_lexicon(out / "lexicon.tsv", toy_lexicon_records())
    return splits
