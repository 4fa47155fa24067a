"""Polarity-gated masked-word loss and quadruple contrastive losses."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn.functional as F

from .encoder import argmax_lowest
from .lexicon import Lexicon, Polarity
from .masking import Vocabulary

# integer codes used for the per-vocabulary polarity table
POLARITY_CODES = {Polarity.NONE: 0, Polarity.POSITIVE: 1, Polarity.NEGATIVE: 2, Polarity.MULTI: 3}


class NonFiniteLoss(ValueError):
    pass


@dataclass(frozen=True)
class HyperParams:
    tau: float = 0.05
    alpha: float = 1.0
    lambda_w: float = 0.15

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.alpha < 0 or self.lambda_w < 0:
            raise ValueError("alpha and lambda_w must be non-negative")


@dataclass(frozen=True)
class LossSelection:
    use_word_loss: bool = True
    use_pos_loss: bool = True
    use_neg_loss: bool = True

    def __post_init__(self):
        if not (self.use_pos_loss or self.use_neg_loss):
            raise ValueError("at least one contrastive term must be enabled")


ABLATIONS = {
    "pos": LossSelection(use_word_loss=False, use_pos_loss=True, use_neg_loss=False),
    "neg": LossSelection(use_word_loss=False, use_pos_loss=False, use_neg_loss=True),
    "pos+neg": LossSelection(use_word_loss=False, use_pos_loss=True, use_neg_loss=True),
    "word+pos": LossSelection(use_word_loss=True, use_pos_loss=True, use_neg_loss=False),
    "word+neg": LossSelection(use_word_loss=True, use_pos_loss=False, use_neg_loss=True),
    "full": LossSelection(),
}


@dataclass
class LossBreakdown:
    l_w: float
    l_pos: float
    l_neg: float
    l_s: float
    total: float

    def as_dict(self) -> dict:
        return {"l_w": self.l_w, "l_pos": self.l_pos, "l_neg": self.l_neg, "l_s": self.l_s, "total": self.total}


class QuadEmbeddings(NamedTuple):
    p: torch.Tensor
    p_plus: torch.Tensor
    n: torch.Tensor
    n_plus: torch.Tensor

    def swapped(self) -> "QuadEmbeddings":
        """Exchange positive and negative roles.

        The positive-side loss repels the other side's anchors while the
        negative-side loss repels the other side's partners, so the role
        exchange is p->n, p+->n+, n->p+, n+->p (not a plain p<->n swap).
        Then ``contrastive_neg(e.swapped()) == contrastive_pos(e)``.
        """
        return QuadEmbeddings(self.n_plus, self.n, self.p, self.p_plus)


def _normalize(x: torch.Tensor) -> torch.Tensor:
    norms = x.norm(dim=-1, keepdim=True)
    if bool((norms == 0).any()):
        raise ValueError("zero-norm embedding: cosine similarity undefined")
    return x / norms


def cosine_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return _normalize(a) @ _normalize(b).T


def _anchored_loss(anchor, partner, repelled, hp: HyperParams) -> torch.Tensor:
    # -log(e^{s+/t} / (e^{s+/t} + sum_j a e^{s_j/t})) == softplus(logsumexp_j(log a + (s_j - s+)/t))
    attract = (_normalize(anchor) * _normalize(partner)).sum(-1)
    repel = cosine_matrix(anchor, repelled)
    if hp.alpha == 0:
        return torch.zeros_like(attract)
    gaps = (repel - attract[:, None]) / hp.tau + math.log(hp.alpha)
    lse = torch.logsumexp(gaps, dim=1)
    return torch.logaddexp(torch.zeros_like(lse), lse)


def contrastive_pos(emb: QuadEmbeddings, hp: HyperParams) -> torch.Tensor:
    """Per-quadruple loss pulling p toward p+ and away from every n_j in the batch."""
    return _anchored_loss(emb.p, emb.p_plus, emb.n, hp)


def contrastive_neg(emb: QuadEmbeddings, hp: HyperParams) -> torch.Tensor:
    """Per-quadruple loss pulling n toward n+ and away from every p+_j in the batch."""
    return _anchored_loss(emb.n, emb.n_plus, emb.p_plus, hp)


def sentence_loss(l_pos: torch.Tensor, l_neg: torch.Tensor) -> torch.Tensor:
    if l_pos.shape != l_neg.shape:
        raise ValueError(f"length mismatch: {tuple(l_pos.shape)} vs {tuple(l_neg.shape)}")
    return (l_pos + l_neg).mean()


def total_loss(l_w, l_s, hp: HyperParams):
    for name, v in (("l_w", l_w), ("l_s", l_s)):
        v = float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        if not math.isfinite(v):
            raise NonFiniteLoss(f"{name} is not finite: {v}")
    return hp.lambda_w * l_w + l_s


def delta(original_word: str, predicted_word: str, lexicon: Lexicon) -> int:
    """0 when the prediction keeps the original's strict polarity, else 1."""
    original = lexicon.polarity(original_word)
    if not original.is_candidate:
        raise ValueError(f"{original_word!r} is not a masking candidate ({original.value})")
    return int(lexicon.polarity(predicted_word) != original)


def vocab_polarity_codes(vocab: Vocabulary, lexicon: Lexicon) -> torch.Tensor:
    """Polarity code per vocabulary id (see ``POLARITY_CODES``)."""
    codes = [POLARITY_CODES[lexicon.polarity(tok[2:] if tok.startswith("##") else tok)]
             if i >= 4 else 0 for i, tok in enumerate(vocab.tokens)]
    return torch.tensor(codes, dtype=torch.long)


def delta_gate(logits: torch.Tensor, original_ids: torch.Tensor, polarity_codes: torch.Tensor) -> torch.Tensor:
    """Vectorized indicator over masked positions, computed without gradient."""
    with torch.no_grad():
        predicted = argmax_lowest(logits)
        orig = polarity_codes[original_ids]
        pred = polarity_codes[predicted]
        strict = (orig == POLARITY_CODES[Polarity.POSITIVE]) | (orig == POLARITY_CODES[Polarity.NEGATIVE])
        return (~(strict & (pred == orig))).to(logits.dtype)


def word_level_loss(logits: torch.Tensor, original_ids: torch.Tensor, polarity_codes: torch.Tensor
                    ) -> tuple[torch.Tensor, torch.Tensor]:
    """Summed cross-entropy at masked positions, gated by the polarity indicator.

    ``logits`` holds one row per masked position across the whole batch
    (M, V); ``original_ids`` the true ids (M,). Summing per sentence and then
    over the batch equals this flat sum. Returns ``(l_w, gate)``.
    """
    if logits.shape[0] != original_ids.shape[0]:
        raise ValueError(f"{original_ids.shape[0]} masked positions but {logits.shape[0]} logits rows")
    if logits.shape[0] == 0:
        return logits.sum() * 0.0, logits.new_zeros(0)
    gate = delta_gate(logits, original_ids, polarity_codes)
    nll = F.cross_entropy(logits, original_ids, reduction="none")
    return (nll * gate).sum(), gate


def combine(l_w: torch.Tensor, emb: QuadEmbeddings, hp: HyperParams, select: LossSelection
            ) -> tuple[torch.Tensor, LossBreakdown]:
    """Assemble the training objective under ``select``; returns (total, breakdown)."""
    zeros = emb.p.new_zeros(emb.p.shape[0])
    l_pos = contrastive_pos(emb, hp) if select.use_pos_loss else zeros
    l_neg = contrastive_neg(emb, hp) if select.use_neg_loss else zeros
    l_s = sentence_loss(l_pos, l_neg)
    if not select.use_word_loss:
        l_w = l_s.new_zeros(())
    total = total_loss(l_w, l_s, hp) if select.use_word_loss else l_s
    breakdown = LossBreakdown(*(float(t.detach()) for t in (l_w, l_pos.mean(), l_neg.mean(), l_s, total)))
    return total, breakdown
