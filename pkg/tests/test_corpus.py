import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sentiembed import corpus
from sentiembed.corpus import NEGATIVE, POSITIVE, DatasetError, Example, Quadruple, SgTSPair


def _examples(n_pos, n_neg):
    return ([Example(f"positive sentence {i}", POSITIVE) for i in range(n_pos)]
            + [Example(f"negative sentence {i}", NEGATIVE) for i in range(n_neg)])


def _jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


def test_load_jsonl_single_file(tmp_path):
    p = _jsonl(tmp_path / "d.jsonl", [{"text": "a", "label": "pos"}, {"text": "b", "label": "pos"},
                                      {"text": "c", "label": "neg"}])
    splits = corpus.load_dataset(p)
    assert len(splits.train) == 3
    assert [e.label for e in splits.train] == [POSITIVE, POSITIVE, NEGATIVE]


def test_unknown_label_rejected(tmp_path):
    p = _jsonl(tmp_path / "d.jsonl", [{"text": "a", "label": "neutral"}])
    with pytest.raises(DatasetError, match="unknown label"):
        corpus.load_dataset(p)


def test_malformed_json_line_number(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text('{"text": "a", "label": 1}\n{oops\n', encoding="utf-8")
    with pytest.raises(DatasetError, match=":2:"):
        corpus.read_examples(p)


def test_tsv_with_header(tmp_path):
    p = tmp_path / "train.tsv"
    p.write_text("text\tlabel\nnice one\t1\nawful one\t0\n", encoding="utf-8")
    exs = corpus.read_examples(p)
    assert exs == [Example("nice one", POSITIVE), Example("awful one", NEGATIVE)]


def test_dataset_directory(tmp_path):
    for split in ("train", "valid", "test"):
        corpus.write_examples(tmp_path / f"{split}.jsonl", _examples(2, 2))
    splits = corpus.load_dataset(tmp_path)
    assert splits.name == tmp_path.name
    assert len(splits.train) == len(splits.valid) == len(splits.test) == 4


def test_missing_dataset(tmp_path):
    with pytest.raises(FileNotFoundError):
        corpus.load_dataset(tmp_path / "nothing")


def test_example_invariants():
    with pytest.raises(DatasetError):
        Example("   ", POSITIVE)
    with pytest.raises(DatasetError):
        Example("x", "neutral")


def test_quadruple_and_pair_invariants():
    p, n = Example("p", POSITIVE), Example("n", NEGATIVE)
    with pytest.raises(DatasetError):
        Quadruple(p, n, n, n)
    with pytest.raises(DatasetError):
        SgTSPair(p, n, 1)
    assert SgTSPair(p, p, 1).label == 1


@pytest.mark.parametrize("n,fraction,expected", [(100, 0.1, (90, 10)), (25_000, 0.1, (22_500, 2_500))])
def test_validation_split_sizes(n, fraction, expected):
    exs = [Example(f"s{i}", POSITIVE if i % 2 else NEGATIVE) for i in range(n)]
    train, valid = corpus.make_validation_split(exs, fraction, seed=0)
    assert (len(train), len(valid)) == expected
    assert set(train).isdisjoint(valid)


def test_validation_split_deterministic():
    exs = _examples(50, 50)
    assert corpus.make_validation_split(exs, 0.1, 7) == corpus.make_validation_split(exs, 0.1, 7)
    assert corpus.make_validation_split(exs, 0.1, 7) != corpus.make_validation_split(exs, 0.1, 8)


def test_forced_choice_quadruples():
    exs = _examples(2, 2)
    quads = corpus.sample_quadruples(exs, seed=0)
    assert len(quads) == 2
    p0, p1, n0, n1 = exs
    assert (quads[0].p, quads[0].p_plus) == (p0, p1)
    assert (quads[1].p, quads[1].p_plus) == (p1, p0)
    for q in quads:
        assert {q.n, q.n_plus} == {n0, n1}


def test_quadruples_need_two_per_class():
    with pytest.raises(ValueError):
        corpus.sample_quadruples(_examples(1, 3), seed=0)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 40), st.integers(2, 40), st.integers(0, 2**32 - 1))
def test_quadruple_properties(n_pos, n_neg, seed):
    exs = _examples(n_pos, n_neg)
    quads = corpus.sample_quadruples(exs, seed)
    assert len(quads) == n_pos
    for q in quads:
        assert q.p.is_positive and q.p_plus.is_positive and q.p != q.p_plus
        assert not q.n.is_positive and not q.n_plus.is_positive and q.n != q.n_plus
    assert [q.p for q in quads] == exs[:n_pos]
    assert quads == corpus.sample_quadruples(exs, seed)


def test_sgts_pairing_definition():
    exs = [Example("a", POSITIVE), Example("b", POSITIVE), Example("c", NEGATIVE), Example("d", NEGATIVE)]
    pairs = corpus.pair_consecutive(exs)
    # two negatives share polarity, so the second pair is labeled 1
    assert [(p.a.text, p.b.text, p.label) for p in pairs] == [("a", "b", 1), ("c", "d", 1)]
    exs[3] = Example("d", POSITIVE)
    pairs = corpus.pair_consecutive(exs)
    assert [(p.a.text, p.b.text, p.label) for p in pairs] == [("a", "b", 1), ("c", "d", 0)]


@pytest.mark.parametrize("n,expected", [(872, 436), (3, 1), (2, 1)])
def test_sgts_pair_count(n, expected):
    exs = [Example(f"s{i}", POSITIVE if i % 3 else NEGATIVE) for i in range(n)]
    assert len(corpus.build_sgts_benchmark(exs, seed=0)) == expected


@settings(max_examples=40, deadline=None)
@given(st.lists(st.booleans(), min_size=2, max_size=60), st.integers(0, 1000))
def test_sgts_labels_match_polarity(labels, seed):
    exs = [Example(f"s{i}", POSITIVE if b else NEGATIVE) for i, b in enumerate(labels)]
    pairs = corpus.build_sgts_benchmark(exs, seed)
    assert len(pairs) == len(exs) // 2
    for p in pairs:
        assert p.label == int(p.a.label == p.b.label)
    used = [p.a for p in pairs] + [p.b for p in pairs]
    assert len(set(used)) == len(used)


def test_sgts_round_trip(tmp_path):
    pairs = corpus.build_sgts_benchmark(_examples(5, 5), seed=1)
    corpus.write_sgts_pairs(tmp_path / "p.jsonl", pairs)
    back = corpus.read_sgts_pairs(tmp_path / "p.jsonl")
    assert [(p.a.text, p.b.text, p.label) for p in back] == [(p.a.text, p.b.text, p.label) for p in pairs]


def test_sgts_bad_record(tmp_path):
    p = tmp_path / "p.jsonl"
    p.write_text('{"a": "x", "b": "y", "label": 2}\n', encoding="utf-8")
    with pytest.raises(DatasetError):
        corpus.read_sgts_pairs(p)


def test_fewshot_sizes():
    exs = _examples(300, 300)
    shots, val = corpus.sample_fewshot(exs, K=5, val_size=100, seed=0)
    assert len(shots) == 10
    assert sum(e.is_positive for e in shots) == 5
    shots, val = corpus.sample_fewshot(exs, K=1, val_size=500, seed=0)
    assert (len(shots), len(val)) == (2, 500)
    assert set(shots).isdisjoint(val)


def test_fewshot_too_large_k():
    with pytest.raises(ValueError):
        corpus.sample_fewshot(_examples(3, 30), K=4, val_size=0, seed=0)


def test_fewshot_seed_determinism():
    exs = _examples(50, 50)
    assert corpus.sample_fewshot(exs, 3, 20, 5) == corpus.sample_fewshot(exs, 3, 20, 5)
    assert corpus.sample_fewshot(exs, 3, 20, 5) != corpus.sample_fewshot(exs, 3, 20, 6)
