import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from torch import nn

from sentiembed import corpus
from sentiembed.corpus import NEGATIVE, POSITIVE, Example, SgTSPair
from sentiembed.evaluation import (FewShotConfig, alignment, alignment_uniformity, cosine, fewshot_eval,
                                   labels_of, linear_probe, load_reference_scores, metric_correlation,
                                   nn_query, pca_project, probe_dataset, reference_correlation,
                                   render_scatter, sgts_from_embeddings, sgts_score, spearman, uniformity,
                                   write_pca_csv)
from sentiembed.masking import Tokenizer


def brute_ranks(v):
    # average rank: 1 + (#smaller) + (#ties - 1) / 2, counted pairwise
    return [1 + sum(w < x for w in v) + (sum(w == x for w in v) - 1) / 2 for x in v]


def brute_spearman(xs, ys):
    rx, ry = brute_ranks(list(xs)), brute_ranks(list(ys))
    n = len(rx)
    mx, my = math.fsum(rx) / n, math.fsum(ry) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(rx, ry))
    sxx = math.fsum((a - mx) ** 2 for a in rx)
    syy = math.fsum((b - my) ** 2 for b in ry)
    return sxy / math.sqrt(sxx * syy)


class LookupEmbedder:
    """Maps each text to a fixed vector."""

    def __init__(self, table):
        self.table = {k: np.asarray(v, dtype=float) for k, v in table.items()}

    def embed(self, texts):
        return np.stack([self.table[t] for t in texts]) if texts else np.zeros((0, 2))


@pytest.mark.parametrize("a,b,expected", [([1, 2], [1, 2], 1.0), ([1, 0], [0, 3], 0.0), ([1, -2], [-1, 2], -1.0)])
def test_cosine(a, b, expected):
    assert cosine(a, b) == pytest.approx(expected, abs=1e-12)


def test_cosine_zero_vector():
    with pytest.raises(ValueError):
        cosine([0, 0], [1, 0])


def test_spearman_examples():
    assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)
    assert spearman([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)
    assert spearman([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == pytest.approx(2 / math.sqrt(5), abs=1e-12)
    assert brute_spearman([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == pytest.approx(2 / math.sqrt(5), abs=1e-12)


def test_spearman_errors():
    with pytest.raises(ValueError):
        spearman([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        spearman([1], [1])
    with pytest.raises(ValueError):
        spearman([1, 1, 1], [1, 2, 3])


values = st.lists(st.integers(-5, 5), min_size=2, max_size=30)


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_spearman_matches_brute_force(data):
    xs = data.draw(values)
    ys = data.draw(st.lists(st.integers(-5, 5), min_size=len(xs), max_size=len(xs)))
    if len(set(xs)) < 2 or len(set(ys)) < 2:
        return
    assert abs(spearman(xs, ys) - brute_spearman(xs, ys)) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=3, max_size=30, unique=True), st.integers(0, 1000))
def test_spearman_monotone_invariance(xs, seed):
    ys = np.random.default_rng(seed).normal(size=len(xs))
    base = spearman(xs, ys)
    # strictly increasing maps that cannot merge distinct floats
    assert spearman(4.0 * np.asarray(xs), ys) == base
    assert spearman(np.argsort(np.argsort(xs)), ys) == base
    assert spearman(xs, 0.5 * ys) == base


def _pairs(labels):
    return [SgTSPair(Example(f"a{i}", POSITIVE), Example(f"b{i}", POSITIVE if l else NEGATIVE), l)
            for i, l in enumerate(labels)]


def test_sgts_perfect_ranking():
    labels = [1, 0, 1, 0, 1, 1, 0]
    table = {}
    for i, l in enumerate(labels):
        table[f"a{i}"] = [1.0, 0.0]
        c = 0.9 if l else 0.1
        table[f"b{i}"] = [c, math.sqrt(1 - c * c)]
    report = sgts_score(LookupEmbedder(table), _pairs(labels))
    assert report.spearman_rho == pytest.approx(1.0) and report.n_pairs == len(labels)


def test_sgts_scale_and_flip():
    rs = np.random.default_rng(0)
    a, b = rs.normal(size=(50, 8)), rs.normal(size=(50, 8))
    labels = rs.integers(0, 2, size=50)
    rho = sgts_from_embeddings(a, b, labels).spearman_rho
    assert sgts_from_embeddings(3.5 * a, 0.2 * b, labels).spearman_rho == pytest.approx(rho, abs=1e-12)
    assert sgts_from_embeddings(a, b, 1 - labels).spearman_rho == pytest.approx(-rho, abs=1e-12)


def test_sgts_single_class_rejected():
    with pytest.raises(ValueError):
        sgts_from_embeddings(np.ones((3, 2)), np.ones((3, 2)), [1, 1, 1])
    with pytest.raises(ValueError):
        sgts_score(LookupEmbedder({}), [])


def test_sgts_random_null():
    # |rho| < 0.1 for random unit embeddings over 1,000 pairs, in more than 99% of draws
    rs = np.random.default_rng(7)
    labels = np.arange(1000) % 2
    hits = 0
    trials = 500
    for _ in range(trials):
        a, b = rs.normal(size=(1000, 16)), rs.normal(size=(1000, 16))
        hits += abs(sgts_from_embeddings(a, b, labels).spearman_rho) < 0.1
    assert hits / trials > 0.99


def test_alignment_closed_forms():
    x = np.eye(3)
    assert alignment(x, x) == 0.0
    assert alignment([[1, 0]], [[0, 1]]) == pytest.approx(2.0, abs=1e-12)
    assert alignment([[1, 0]], [[-1, 0]]) == pytest.approx(4.0, abs=1e-12)
    with pytest.raises(ValueError):
        alignment(np.zeros((0, 2)), np.zeros((0, 2)))


def test_uniformity_closed_forms():
    assert uniformity([[1, 0], [-1, 0]]) == pytest.approx(-8.0, abs=1e-9)
    assert uniformity([[1, 0], [0, 1]]) == pytest.approx(-4.0, abs=1e-9)
    assert uniformity([[0.6, 0.8]] * 4) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        uniformity([[1, 0]])


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 20), st.integers(2, 6), st.integers(0, 1000))
def test_alignment_uniformity_ranges(n, d, seed):
    x = np.random.default_rng(seed).normal(size=(n, d))
    y = np.random.default_rng(seed + 1).normal(size=(n, d))
    assert 0.0 <= alignment(x, y) <= 4.0 + 1e-12
    assert -8.0 - 1e-12 <= uniformity(x) <= 1e-12


def test_alignment_uniformity_from_encoder():
    table = {"a0": [1, 0], "b0": [1, 0], "a1": [1, 0], "b1": [-1, 0]}
    out = alignment_uniformity(LookupEmbedder(table), _pairs([1, 0]))
    assert out["alignment"] == 0.0
    assert out["uniformity"] == pytest.approx(np.log(np.mean(np.exp(-2 * np.array([0, 0, 4, 0, 4, 4])))))


def test_probe_separable():
    rs = np.random.default_rng(0)

    def split(n):
        y = rs.integers(0, 2, size=n)
        x = rs.normal(size=(n, 2)) * 0.3 + np.where(y[:, None] == 1, 2.0, -2.0)
        return x, y
    res = linear_probe(split(200), split(50), split(200))
    assert res.accuracy == 1.0
    assert res.regularization in (1e-4, 1e-3, 1e-2, 1e-1, 1.0)


def test_probe_permuted_labels_near_chance():
    rs = np.random.default_rng(1)
    y = np.arange(4000) % 2
    x = rs.normal(size=(4000, 8)) + y[:, None]
    perm = rs.permutation(y)
    res = linear_probe((x[:2000], perm[:2000]), (x[2000:2400], perm[2000:2400]), (x[2400:], perm[2400:]))
    assert abs(res.accuracy - 0.5) <= 0.05


def test_probe_selection_ignores_test_labels():
    rs = np.random.default_rng(2)
    y = np.arange(600) % 2
    x = rs.normal(size=(600, 4)) + 0.5 * y[:, None]
    tr, va = (x[:300], y[:300]), (x[300:400], y[300:400])
    a = linear_probe(tr, va, (x[400:], y[400:]))
    b = linear_probe(tr, va, (x[400:], 1 - y[400:]))
    assert a.regularization == b.regularization
    assert a.accuracy == pytest.approx(1 - b.accuracy)


def test_probe_single_class():
    x = np.zeros((4, 2))
    with pytest.raises(ValueError):
        linear_probe((x, np.ones(4)), (x, np.ones(4)), (x, np.ones(4)))


def test_probe_dataset_with_encoder(tiny_encoder, toy_small):
    res = probe_dataset(tiny_encoder, toy_small.train, toy_small.valid, toy_small.test)
    assert res.n_train == len(toy_small.train) and res.n_test == len(toy_small.test)
    assert 0.0 <= res.accuracy <= 1.0


class BagModel(nn.Module):
    """Sums fixed word vectors: positive words +e1, negative words -e1."""

    def __init__(self, tokenizer, lexicon):
        super().__init__()
        self.tokenizer = tokenizer
        vocab = tokenizer.vocab.tokens
        w = torch.zeros(len(vocab), 4)
        for i, tok in enumerate(vocab):
            pol = lexicon.polarity(tok).value
            w[i, 0] = {"positive": 1.0, "negative": -1.0}.get(pol, 0.0)
            w[i, 1] = 0.01 * (i % 7)
        self.emb = nn.Embedding.from_pretrained(w, freeze=False)

    def encode(self, batch):
        summed = torch.stack([self.emb(torch.tensor(ids)).sum(0) for ids in batch])
        return summed[:, None, :], torch.ones(len(batch), 1, dtype=torch.bool)

    @staticmethod
    def pool(hidden):
        return hidden[:, 0]


class BagEncoder:
    def __init__(self, model):
        self.model = model
        self.tokenizer = model.tokenizer

    def forward_pooled(self, texts):
        return self.model.pool(self.model.encode([self.tokenizer(t).ids for t in texts])[0])


def test_fewshot_perfect_model_keeps_frozen_accuracy(toy_small, lexicon):
    tok = Tokenizer.train([e.text for e in toy_small.train], lexicon=lexicon)
    enc = BagEncoder(BagModel(tok, lexicon))
    cfg = FewShotConfig(epochs=5, eval_steps=1, val_size=50, learning_rate=1e-2)
    res = fewshot_eval(enc, toy_small.train, toy_small.test, K=2, seeds=[0, 1, 2], cfg=cfg)
    # the sign of the first coordinate already separates every sentence
    frozen = np.mean([(enc.forward_pooled([e.text])[0, 0] > 0).item() == e.is_positive for e in toy_small.test])
    assert frozen == 1.0
    assert res.accuracies == [1.0, 1.0, 1.0] and res.best_steps == [0, 0, 0]
    assert res.mean == 1.0 and res.std == 0.0


def test_fewshot_reproducible(tiny_encoder, toy_small):
    cfg = FewShotConfig(epochs=2, eval_steps=1, val_size=20, learning_rate=1e-3)
    a = fewshot_eval(tiny_encoder, toy_small.train, toy_small.test, K=3, seeds=[0, 1], cfg=cfg)
    b = fewshot_eval(tiny_encoder, toy_small.train, toy_small.test, K=3, seeds=[0, 1], cfg=cfg)
    assert a == b
    assert a.to_json()["mean"] == pytest.approx(np.mean(a.accuracies))


def test_fewshot_leaves_encoder_untouched(tiny_encoder, toy_small):
    before = [p.detach().clone() for p in tiny_encoder.model.parameters()]
    cfg = FewShotConfig(epochs=1, eval_steps=1, val_size=20, learning_rate=1e-2)
    fewshot_eval(tiny_encoder, toy_small.train, toy_small.test, K=2, seeds=[0], cfg=cfg)
    assert all(torch.equal(a, b) for a, b in zip(before, tiny_encoder.model.parameters()))


def test_fewshot_insufficient_data(tiny_encoder, toy_small):
    with pytest.raises(ValueError):
        fewshot_eval(tiny_encoder, toy_small.train[:20], toy_small.test, K=5, seeds=[0], cfg=FewShotConfig())


def test_pca_plane_in_high_dim():
    rs = np.random.default_rng(0)
    basis, _ = np.linalg.qr(rs.normal(size=(768, 2)))
    coeffs = rs.normal(size=(50, 2)) * [3.0, 1.0]
    x = coeffs @ basis.T + rs.normal(size=768)
    res = pca_project(x, k=2)
    recon = res.coords @ res.components + x.mean(axis=0)
    assert np.abs(recon - x).max() < 1e-9
    assert res.explained_variance[0] >= res.explained_variance[1]
    assert not res.rank_deficient


def test_pca_translation_invariant():
    x = np.random.default_rng(1).normal(size=(20, 5))
    assert np.allclose(pca_project(x).coords, pca_project(x + 7.5).coords, atol=1e-10)


def test_pca_rank_deficient():
    x = np.outer(np.arange(6.0), [1.0, 2.0, 0.0])
    res = pca_project(x, k=2)
    assert res.rank_deficient
    assert np.all(res.coords[:, 1] == 0)
    with pytest.raises(ValueError):
        pca_project(np.ones((2, 4)), k=2)


def test_pca_outputs(tmp_path):
    x = np.random.default_rng(2).normal(size=(10, 4))
    res = pca_project(x)
    write_pca_csv(tmp_path / "p.csv", res.coords, ["pos", "neg"] * 5)
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "pc_1,pc_2,label" and len(lines) == 11
    render_scatter(tmp_path / "p.svg", res.coords, ["pos", "neg"] * 5)
    assert (tmp_path / "p.svg").read_text().lstrip().startswith("<?xml")


def test_nn_query_constructed():
    enc = LookupEmbedder({"q": [1, 0], "c1": [1, 0], "c2": [0, 1], "c3": [1, 0]})
    hits = nn_query("q", ["c1", "c2"], enc, k=1)
    assert hits == [("c1", 1.0)]
    assert [c for c, _ in nn_query("q", ["c2", "c3", "c1"], enc, k=10)] == ["c3", "c1", "c2"]
    with pytest.raises(ValueError):
        nn_query("q", ["c1"], enc, k=0)
    with pytest.raises(ValueError):
        nn_query("q", [], enc, k=1)


def test_metric_correlation():
    x = [0.1, 0.5, 0.3, 0.9]
    assert metric_correlation(x, [2 * v + 1 for v in x])[0] == pytest.approx(1.0)
    assert metric_correlation(x, [-3 * v for v in x])[0] == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        metric_correlation([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        metric_correlation([1, 2], [1, 2])


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 40), st.integers(0, 1000))
def test_metric_correlation_matches_scipy(n, seed):
    rs = np.random.default_rng(seed)
    x, y = rs.normal(size=n), rs.normal(size=n)
    r, p = metric_correlation(x, y)
    ref = stats.pearsonr(x, y)
    assert r == pytest.approx(ref.statistic, abs=1e-12)
    assert p == pytest.approx(ref.pvalue, rel=1e-6, abs=1e-15)


def test_reference_grid():
    ref = load_reference_scores()
    best_mr = max(ref["sgts"], key=lambda m: ref["sgts"][m]["MR"])
    assert ref["sgts"][best_mr]["MR"] == 0.69
    assert ref["1-shot"][best_mr]["MR"] == 87.38
    assert len(ref["sgts"]) == 9 and all(len(row) == 5 for row in ref["sgts"].values())
    for shots in ("1-shot", "5-shot"):
        xs = [ref["sgts"][m][d] for m in ref["sgts"] for d in ref["sgts"][m]]
        ys = [ref[shots][m][d] for m in ref["sgts"] for d in ref["sgts"][m]]
        r, p = reference_correlation(shots)
        assert r == pytest.approx(stats.pearsonr(xs, ys).statistic, abs=1e-12)
        assert r > 0.7 and p < 0.01


def test_labels_of():
    assert labels_of([Example("a", POSITIVE), Example("b", NEGATIVE)]).tolist() == [1, 0]
