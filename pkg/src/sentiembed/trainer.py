"""Pre-training over quadruple batches with SgTS-based checkpoint selection."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .corpus import Quadruple, SgTSPair
from .encoder import SentenceEncoder, pad_batch, save_checkpoint
from .evaluation import sgts_score
from .masking import TokenSequence, mask_sequence
from .objectives import (HyperParams, LossBreakdown, LossSelection, NonFiniteLoss, QuadEmbeddings, combine,
                         vocab_polarity_codes, word_level_loss)

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, what: str):
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 64
    max_steps: int = 20_000
    eval_interval: int = 500
    seed: int = 0
    output_dir: str = "runs/pretrain"
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    mask_ratio: float = 0.1
    keep_checkpoints: str = "best"  # "best" or "all"

    def __post_init__(self):
        if self.batch_size < 1 or self.max_steps < 0 or self.eval_interval < 1:
            raise ValueError("batch_size and eval_interval must be positive, max_steps non-negative")
        if self.keep_checkpoints not in ("best", "all"):
            raise ValueError("keep_checkpoints must be 'best' or 'all'")


TRAIN_PROFILES = {
    "backbone": dict(learning_rate=1e-5, batch_size=64, max_steps=20_000, eval_interval=500),
    "desk": dict(learning_rate=3e-4, batch_size=16, max_steps=1_000, eval_interval=50),
}


@dataclass
class TrainingLog:
    steps: list[dict] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)

    @property
    def best(self) -> tuple[int, float] | None:
        if not self.evals:
            return None
        # earliest step wins ties
        rec = max(self.evals, key=lambda r: (r["sgts"], -r["step"]))
        return rec["step"], rec["sgts"]

    def records(self) -> list[dict]:
        """Merged per-step records, as written to the JSONL log."""
        merged: dict[int, dict] = {}
        for rec in self.steps:
            merged[rec["step"]] = {**rec, "sgts": None}
        for rec in self.evals:
            merged.setdefault(rec["step"], {"step": rec["step"], "l_w": None, "l_pos": None,
                                             "l_neg": None, "l_s": None, "total": None})["sgts"] = rec["sgts"]
        return [merged[k] for k in sorted(merged)]


@dataclass
class QuadBatch:
    """A tokenized, masked batch of N quadruples (4N sentences, order p|p+|n|n+)."""
    clean_ids: list[tuple[int, ...]]
    masked_ids: list[tuple[int, ...]]
    mask_rows: list[int]
    mask_positions: list[int]
    original_ids: list[int]

    @property
    def size(self) -> int:
        return len(self.clean_ids) // 4


def prepare_batch(quads: Sequence[Quadruple], tokenize, mask_ratio: float, rng: np.random.Generator,
                  mask_words: bool = True) -> QuadBatch:
    """Tokenize every quadruple member and mask candidates in all four sentences."""
    if not quads:
        raise ValueError("empty batch")
    seqs: list[TokenSequence] = [tokenize(getattr(q, slot).text)
                                 for slot in ("p", "p_plus", "n", "n_plus") for q in quads]
    masked, rows, positions, originals = [], [], [], []
    for row, seq in enumerate(seqs):
        if not mask_words:
            masked.append(seq.ids)
            continue
        m = mask_sequence(seq, mask_ratio, rng)
        masked.append(m.input_ids)
        rows.extend([row] * len(m.mask_positions))
        positions.extend(m.mask_positions)
        originals.extend(m.original_ids)
    return QuadBatch([s.ids for s in seqs], masked, rows, positions, originals)


def forward_losses(encoder: SentenceEncoder, batch: QuadBatch, hp: HyperParams, select: LossSelection,
                   polarity_codes: torch.Tensor) -> tuple[torch.Tensor, LossBreakdown]:
    model = encoder.model
    device = model.tok_emb.weight.device
    ids, mask = pad_batch(batch.clean_ids, device=device)
    pooled = model.pool(model(ids, mask))
    N = batch.size
    emb = QuadEmbeddings(pooled[:N], pooled[N:2 * N], pooled[2 * N:3 * N], pooled[3 * N:])
    if select.use_word_loss and batch.mask_positions:
        # masked forward pass only over sentences that carry a mask
        rows = sorted(set(batch.mask_rows))
        remap = {r: i for i, r in enumerate(rows)}
        m_ids, m_mask = pad_batch([batch.masked_ids[r] for r in rows], device=device)
        hidden = model(m_ids, m_mask)
        logits = model.mlm_logits(hidden, [(remap[r], p) for r, p in zip(batch.mask_rows, batch.mask_positions)])
        targets = torch.as_tensor(batch.original_ids, dtype=torch.long, device=device)
        l_w, _ = word_level_loss(logits, targets, polarity_codes.to(device))
    else:
        l_w = pooled.new_zeros(())
    return combine(l_w, emb, hp, select)


def training_step(encoder: SentenceEncoder, optimizer: torch.optim.Optimizer, batch: QuadBatch,
                  hp: HyperParams, select: LossSelection, polarity_codes: torch.Tensor,
                  grad_clip: float | None = 1.0, step: int = 0) -> LossBreakdown:
    """One optimizer update; returns the loss breakdown measured before it."""
    encoder.model.train()
    optimizer.zero_grad(set_to_none=True)
    try:
        total, breakdown = forward_losses(encoder, batch, hp, select, polarity_codes)
    except NonFiniteLoss as exc:
        raise TrainingDiverged(step, "loss") from exc
    if not math.isfinite(breakdown.total):
        raise TrainingDiverged(step, "loss")
    total.backward()
    params = [p for p in encoder.model.parameters() if p.grad is not None]
    if grad_clip:
        norm = torch.nn.utils.clip_grad_norm_(params, grad_clip)
    else:
        norm = torch.linalg.vector_norm(torch.stack([p.grad.norm() for p in params]))
    if not torch.isfinite(norm):
        raise TrainingDiverged(step, "gradient")
    optimizer.step()
    return breakdown


def make_optimizer(encoder: SentenceEncoder, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.AdamW(encoder.model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)


class _TokenCache:
    def __init__(self, tokenizer):
        self.tokenizer = tokenizer
        self._cache: dict[str, TokenSequence] = {}

    def __call__(self, text: str) -> TokenSequence:
        seq = self._cache.get(text)
        if seq is None:
            seq = self._cache[text] = self.tokenizer(text)
        return seq


def pretrain(quadruples: Sequence[Quadruple], benchmark: Sequence[SgTSPair], encoder: SentenceEncoder,
             hp: HyperParams, cfg: TrainConfig, select: LossSelection = LossSelection(),
             log_path: str | Path | None = None) -> tuple[Path, TrainingLog]:
    """Train ``encoder`` in place and return ``(best checkpoint path, log)``.

    SgTS on ``benchmark`` is evaluated every ``eval_interval`` steps (and at the
    final step); the best-scoring state is checkpointed. The tokenizer must
    carry a lexicon when the word-level loss is enabled.
    """
    if not quadruples or not benchmark:
        raise ValueError("pretraining needs non-empty quadruples and benchmark")
    lexicon = encoder.tokenizer.lexicon
    if select.use_word_loss and lexicon is None:
        raise ValueError("word-level loss needs a lexicon-aware tokenizer")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = Path(log_path) if log_path else out / "training_log.jsonl"
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    codes = vocab_polarity_codes(encoder.tokenizer.vocab, lexicon) if lexicon else torch.zeros(0, dtype=torch.long)
    tokenize = _TokenCache(encoder.tokenizer)
    optimizer = make_optimizer(encoder, cfg)
    train_log = TrainingLog()
    best_path: Path | None = None
    best_score = -math.inf

    def evaluate(step: int) -> float:
        nonlocal best_path, best_score
        score = sgts_score(encoder, benchmark).spearman_rho
        train_log.evals.append({"step": step, "sgts": score})
        log.info("step %d sgts %.4f", step, score)
        path = out / f"checkpoint-step{step:06d}.bin"
        if cfg.keep_checkpoints == "all":
            save_checkpoint(encoder, path, {"step": step, "sgts": score})
        if score > best_score:
            if cfg.keep_checkpoints == "best":
                if best_path is not None and best_path.exists():
                    best_path.unlink()
                save_checkpoint(encoder, path, {"step": step, "sgts": score})
            best_score, best_path = score, path
        return score

    n = len(quadruples)
    bs = min(cfg.batch_size, n)
    order = rng.permutation(n)
    cursor = 0
    with open(log_path, "w", encoding="utf-8") as fh:
        if cfg.max_steps == 0:
            empty = dict.fromkeys(("l_w", "l_pos", "l_neg", "l_s", "total"))
            fh.write(json.dumps({"step": 0, **empty, "sgts": evaluate(0)}) + "\n")
        for step in range(1, cfg.max_steps + 1):
            if cursor + bs > n:
                order, cursor = rng.permutation(n), 0
            idx = order[cursor:cursor + bs]
            cursor += bs
            batch = prepare_batch([quadruples[i] for i in idx], tokenize, cfg.mask_ratio, rng,
                                  mask_words=select.use_word_loss)
            breakdown = training_step(encoder, optimizer, batch, hp, select, codes, cfg.grad_clip, step)
            rec = {"step": step, **breakdown.as_dict()}
            train_log.steps.append(rec)
            sgts = None
            if step % cfg.eval_interval == 0 or step == cfg.max_steps:
                sgts = evaluate(step)
            fh.write(json.dumps({**rec, "sgts": sgts}) + "\n")
    encoder.model.eval()
    return best_path, train_log
