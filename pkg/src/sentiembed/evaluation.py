"""Representation-quality metrics and downstream harnesses.

SgTS scores an encoder by the Spearman correlation between cosine
similarities of sentence pairs and their binary same-polarity labels.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import torch
from scipy import stats
from torch import nn

from .corpus import Example, SgTSPair, sample_fewshot

log = logging.getLogger(__name__)

DEFAULT_PROBE_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)


class Embedder(Protocol):
    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


def cosine(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine undefined for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def rowwise_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na, nb = np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("cosine undefined for a zero vector")
    return np.clip(np.einsum("ij,ij->i", a, b) / (na * nb), -1.0, 1.0)


def spearman(xs, ys) -> float:
    """Pearson correlation of tie-averaged ranks."""
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError(f"length mismatch: {xs.shape} vs {ys.shape}")
    if len(xs) < 2:
        raise ValueError("need at least two observations")
    rx = stats.rankdata(xs, method="average")
    ry = stats.rankdata(ys, method="average")
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx @ rx) * (ry @ ry))
    if denom == 0:
        raise ValueError("correlation undefined for constant input")
    return float(np.clip((rx @ ry) / denom, -1.0, 1.0))


@dataclass
class SgTSReport:
    spearman_rho: float
    n_pairs: int
    similarities: list[float] = field(repr=False)

    def to_json(self) -> dict:
        return {"spearman_rho": self.spearman_rho, "n_pairs": self.n_pairs, "similarities": self.similarities}


def sgts_from_embeddings(emb_a: np.ndarray, emb_b: np.ndarray, labels: Sequence[int]) -> SgTSReport:
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("empty benchmark")
    if len(np.unique(labels)) < 2:
        raise ValueError("benchmark needs both 0 and 1 labels")
    sims = rowwise_cosine(np.asarray(emb_a, dtype=float), np.asarray(emb_b, dtype=float))
    return SgTSReport(spearman(sims, labels), len(labels), sims.tolist())


def sgts_score(encoder: Embedder, benchmark: Sequence[SgTSPair]) -> SgTSReport:
    """Embed every pair and correlate cosine similarity with the 0/1 labels, all pairs pooled."""
    if not benchmark:
        raise ValueError("empty benchmark")
    emb = encoder.embed([p.a.text for p in benchmark] + [p.b.text for p in benchmark])
    n = len(benchmark)
    return sgts_from_embeddings(emb[:n], emb[n:], [p.label for p in benchmark])


# -- alignment / uniformity ----------------------------------------------

def _unit(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def alignment(emb_a, emb_b, normalize: bool = True) -> float:
    """Mean squared distance between paired (same-polarity) embeddings."""
    a, b = np.atleast_2d(np.asarray(emb_a, dtype=float)), np.atleast_2d(np.asarray(emb_b, dtype=float))
    if a.shape[0] == 0:
        raise ValueError("alignment needs at least one pair")
    if normalize:
        a, b = _unit(a), _unit(b)
    return float(np.mean(np.sum((a - b) ** 2, axis=1)))


def uniformity(embeddings, normalize: bool = True, t: float = 2.0) -> float:
    """Log of the mean Gaussian kernel ``exp(-t * dist^2)`` over distinct pairs."""
    x = np.asarray(embeddings, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("uniformity needs at least two embeddings")
    if normalize:
        x = _unit(x)
    from scipy.spatial.distance import pdist
    sq = pdist(x, "sqeuclidean")
    return float(np.log(np.mean(np.exp(-t * sq))))


def alignment_uniformity(encoder: Embedder, benchmark: Sequence[SgTSPair]) -> dict:
    same = [p for p in benchmark if p.label == 1]
    texts = [p.a.text for p in benchmark] + [p.b.text for p in benchmark]
    emb = encoder.embed(texts)
    n = len(benchmark)
    idx = [i for i, p in enumerate(benchmark) if p.label == 1]
    out = {"uniformity": uniformity(emb)}
    out["alignment"] = alignment(emb[idx], emb[[n + i for i in idx]]) if same else None
    return out


# -- linear probing ---------------------------------------------------------

@dataclass
class ProbeResult:
    accuracy: float
    regularization: float
    valid_accuracy: float
    n_train: int
    n_valid: int
    n_test: int


def _select_probe(train_x, train_y, valid_x, valid_y, grid):
    from sklearn.linear_model import LogisticRegression

    if len(np.unique(train_y)) < 2:
        raise ValueError("linear probe needs both classes in the training set")
    best = None
    for reg in grid:
        # sklearn minimizes C * sum(loss) + 0.5 |w|^2, i.e. mean loss + (reg/2)|w|^2 with C = 1/(reg n)
        clf = LogisticRegression(C=1.0 / (reg * len(train_y)), max_iter=2000)
        clf.fit(train_x, train_y)
        acc = float(np.mean(clf.predict(valid_x) == valid_y)) if len(valid_y) else 0.0
        if best is None or acc > best[0]:
            best = (acc, reg, clf)
    return best


def linear_probe(train: tuple[np.ndarray, np.ndarray], valid: tuple[np.ndarray, np.ndarray],
                 test: tuple[np.ndarray, np.ndarray], grid: Sequence[float] = DEFAULT_PROBE_GRID) -> ProbeResult:
    """L2-regularized logistic regression on frozen embeddings.

    Regularization is chosen on ``valid``; ``test`` is scored once afterwards.
    """
    valid_acc, reg, clf = _select_probe(*train, *valid, grid)
    test_x, test_y = test
    acc = float(np.mean(clf.predict(test_x) == np.asarray(test_y)))
    return ProbeResult(acc, reg, valid_acc, len(train[1]), len(valid[1]), len(test_y))


def labels_of(examples: Sequence[Example]) -> np.ndarray:
    return np.array([int(ex.is_positive) for ex in examples])


def probe_dataset(encoder: Embedder, train: Sequence[Example], valid: Sequence[Example],
                  test: Sequence[Example], grid: Sequence[float] = DEFAULT_PROBE_GRID) -> ProbeResult:
    def xy(exs):
        return encoder.embed([e.text for e in exs]), labels_of(exs)
    return linear_probe(xy(train), xy(valid), xy(test), grid)


# -- few-shot fine-tuning ---------------------------------------------------

@dataclass
class FewShotConfig:
    batch_size: int = 16
    learning_rate: float = 1e-5
    epochs: int = 100
    eval_steps: int = 20
    weight_decay: float = 0.01
    patience: int = 5
    val_size: int = 500


FEWSHOT_PROFILES = {
    "backbone": {},
    "desk": dict(learning_rate=1e-4),
}


@dataclass
class FewShotResult:
    K: int
    seeds: list[int]
    accuracies: list[float]
    best_steps: list[int]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))

    def to_json(self) -> dict:
        return {**asdict(self), "mean": self.mean, "std": self.std}


def _prototype_head(pooled: torch.Tensor, y: torch.Tensor) -> nn.Linear:
    """Linear head initialized as the nearest-class-mean classifier of the shots."""
    mu_pos, mu_neg = pooled[y == 1].mean(0), pooled[y == 0].mean(0)
    d = mu_pos - mu_neg
    d = d / d.norm().clamp_min(1e-12)
    mid = (mu_pos + mu_neg) / 2
    head = nn.Linear(pooled.shape[1], 2).to(pooled.dtype)
    with torch.no_grad():
        head.weight.copy_(torch.stack([-d / 2, d / 2]))
        head.bias.copy_(torch.stack([(d @ mid) / 2, -(d @ mid) / 2]))
    return head


def _accuracy(encoder, head, examples: Sequence[Example], batch_size: int = 128) -> float:
    encoder.model.eval()
    correct = 0
    with torch.no_grad():
        for i in range(0, len(examples), batch_size):
            chunk = examples[i:i + batch_size]
            pred = head(encoder.forward_pooled([e.text for e in chunk])).argmax(-1)
            correct += int((pred == torch.as_tensor(labels_of(chunk))).sum())
    return correct / len(examples)


def fewshot_run(encoder, train: Sequence[Example], test: Sequence[Example], K: int, seed: int,
                cfg: FewShotConfig) -> tuple[float, int]:
    """Fine-tune a copy of ``encoder`` plus a linear head on K shots per class.

    Validation accuracy is checked at step 0 and every ``eval_steps`` steps;
    the best state (earliest on ties) is restored before testing, and training
    stops after ``patience`` checks without improvement. Returns
    ``(test accuracy, best step)``.
    """
    from .encoder import SentenceEncoder

    shots, val = sample_fewshot(train, K, cfg.val_size, seed)
    torch.manual_seed(seed)
    enc = SentenceEncoder(copy.deepcopy(encoder.model), encoder.tokenizer)
    y = torch.as_tensor(labels_of(shots))
    enc.model.eval()
    with torch.no_grad():
        head = _prototype_head(enc.forward_pooled([e.text for e in shots]), y)
    params = list(enc.model.parameters()) + list(head.parameters())
    opt = torch.optim.AdamW(params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    val_set = val if val else shots
    best_acc = _accuracy(enc, head, val_set)
    best_state = (copy.deepcopy(enc.model.state_dict()), copy.deepcopy(head.state_dict()))
    best_step, step, stale = 0, 0, 0
    gen = torch.Generator().manual_seed(seed)
    done = False
    for _ in range(cfg.epochs):
        order = torch.randperm(len(shots), generator=gen).tolist()
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            enc.model.train()
            opt.zero_grad(set_to_none=True)
            logits = head(enc.forward_pooled([shots[j].text for j in idx]))
            loss = nn.functional.cross_entropy(logits, y[idx])
            if not torch.isfinite(loss):
                raise RuntimeError(f"few-shot fine-tuning diverged at step {step}")
            loss.backward()
            opt.step()
            step += 1
            if step % cfg.eval_steps == 0:
                acc = _accuracy(enc, head, val_set)
                if acc > best_acc:
                    best_acc, best_step, stale = acc, step, 0
                    best_state = (copy.deepcopy(enc.model.state_dict()), copy.deepcopy(head.state_dict()))
                else:
                    stale += 1
                    if stale >= cfg.patience:
                        done = True
                        break
        if done:
            break
    enc.model.load_state_dict(best_state[0])
    head.load_state_dict(best_state[1])
    return _accuracy(enc, head, test), best_step


def fewshot_eval(encoder, train: Sequence[Example], test: Sequence[Example], K: int,
                 seeds: Sequence[int] = tuple(range(10)), cfg: FewShotConfig | None = None) -> FewShotResult:
    """Repeat :func:`fewshot_run` once per seed and aggregate."""
    cfg = cfg or FewShotConfig()
    if isinstance(encoder, (str, Path)):
        from .encoder import load_checkpoint
        encoder = load_checkpoint(encoder)
    accs, steps = [], []
    for seed in seeds:
        acc, best = fewshot_run(encoder, train, test, K, int(seed), cfg)
        log.info("few-shot K=%d seed=%d acc=%.4f (best step %d)", K, seed, acc, best)
        accs.append(acc)
        steps.append(best)
    return FewShotResult(K, [int(s) for s in seeds], accs, steps)


# -- PCA, nearest neighbours ------------------------------------------------

@dataclass
class PCAResult:
    coords: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    rank_deficient: bool


def pca_project(embeddings, k: int = 2, tol: float = 1e-10) -> PCAResult:
    """Project mean-centered embeddings onto the top-``k`` principal directions.

    Directions beyond the numerical rank are zero-filled and flagged.
    """
    x = np.asarray(embeddings, dtype=float)
    if x.ndim != 2 or x.shape[0] < k + 1:
        raise ValueError(f"PCA to {k} dims needs at least {k + 1} points")
    centered = x - x.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    rank = int(np.sum(s > tol * max(1.0, s[0] if len(s) else 0.0)))
    comps = np.zeros((k, x.shape[1]))
    m = min(k, rank)
    comps[:m] = vt[:m]
    # deterministic sign: largest-magnitude loading positive
    for i in range(m):
        j = np.argmax(np.abs(comps[i]))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    var = np.zeros(k)
    var[:m] = s[:m] ** 2 / max(1, x.shape[0] - 1)
    return PCAResult(centered @ comps.T, comps, var, rank < k)


def write_pca_csv(path: str | Path, coords: np.ndarray, labels: Sequence) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"pc_{i + 1}" for i in range(coords.shape[1])] + ["label"])
        for row, label in zip(coords, labels):
            w.writerow([repr(float(v)) for v in row] + [label])


def render_scatter(path: str | Path, coords: np.ndarray, labels: Sequence, title: str = "") -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 5))
    labels = np.asarray([str(l) for l in labels])
    for lab in sorted(set(labels)):
        pts = coords[labels == lab]
        ax.scatter(pts[:, 0], pts[:, 1] if coords.shape[1] > 1 else np.zeros(len(pts)), s=6, label=lab)
    ax.set_title(title)
    ax.legend()
    fig.savefig(path)
    plt.close(fig)


def nn_query(query, candidates: Sequence, encoder: Embedder, k: int) -> list[tuple[object, float]]:
    """Top-``k`` candidates by cosine similarity to ``query`` (ties keep input order)."""
    if k <= 0:
        raise ValueError("k must be positive")
    if not candidates:
        raise ValueError("no candidates")
    text = lambda c: c.text if isinstance(c, Example) else str(c)  # noqa: E731
    emb = encoder.embed([text(query)] + [text(c) for c in candidates])
    sims = rowwise_cosine(np.repeat(emb[:1], len(candidates), axis=0), emb[1:])
    order = sorted(range(len(candidates)), key=lambda i: (-sims[i], i))
    return [(candidates[i], float(sims[i])) for i in order[:k]]


# -- metric correlation -------------------------------------------------------

def metric_correlation(sgts_scores, accuracies) -> tuple[float, float]:
    """Pearson correlation and its two-sided p-value (t-distribution, n-2 df)."""
    x, y = np.asarray(sgts_scores, dtype=float), np.asarray(accuracies, dtype=float)
    if x.shape != y.shape or len(x) < 3:
        raise ValueError("need two equal-length sequences of at least 3 values")
    xc, yc = x - x.mean(), y - y.mean()
    denom = np.sqrt((xc @ xc) * (yc @ yc))
    if denom == 0:
        raise ValueError("correlation undefined for constant input")
    r = float(np.clip((xc @ yc) / denom, -1.0, 1.0))
    dof = len(x) - 2
    if abs(r) == 1.0:
        return r, 0.0
    t = r * np.sqrt(dof / (1 - r * r))
    return r, float(2 * stats.t.sf(abs(t), dof))


def load_reference_scores() -> dict:
    """Published SgTS and few-shot accuracy grid (models x datasets)."""
    with resources.files("sentiembed").joinpath("data/reference_scores.json").open(encoding="utf-8") as fh:
        return json.load(fh)


def reference_correlation(shots: str = "1-shot") -> tuple[float, float]:
    ref = load_reference_scores()
    xs, ys = [], []
    for model, row in ref["sgts"].items():
        for dataset, score in row.items():
            xs.append(score)
            ys.append(ref[shots][model][dataset])
    return metric_correlation(xs, ys)
