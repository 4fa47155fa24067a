"""Bidirectional transformer encoder with classification-slot pooling and an MLM head.

The from-scratch encoder uses learned positional embeddings, pre-layer-norm
blocks and GELU feed-forward layers. Anything exposing ``encode``, ``pool`` and
``mlm_logits`` with the same shapes can stand in for it.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .masking import PAD_ID, Tokenizer, Vocabulary

CHECKPOINT_MAGIC = b"SENTIEMB"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class EncoderConfig:
    vocab_size: int
    num_layers: int = 4
    hidden_dim: int = 128
    num_heads: int = 4
    max_len: int = 128
    ffn_dim: int | None = None
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.hidden_dim % self.num_heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}")
        if self.max_len < 2:
            raise ValueError("max_len must be at least 2")
        if self.ffn_dim is None:
            self.ffn_dim = 4 * self.hidden_dim


PROFILES = {
    "desk": dict(num_layers=4, hidden_dim=128, num_heads=4),
    "backbone": dict(num_layers=12, hidden_dim=768, num_heads=12),
}


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, key_padding: torch.Tensor) -> torch.Tensor:
        B, L, D = x.shape
        q, k, v = self.qkv(x).view(B, L, 3, self.heads, D // self.heads).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(D // self.heads)
        scores = scores.masked_fill(key_padding[:, None, None, :], float("-inf"))
        attn = self.dropout(scores.softmax(dim=-1))
        return self.out((attn @ v).transpose(1, 2).reshape(B, L, D))


class Block(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.hidden_dim)
        self.attn = SelfAttention(cfg.hidden_dim, cfg.num_heads, cfg.dropout)
        self.ln2 = nn.LayerNorm(cfg.hidden_dim)
        self.ff = nn.Sequential(nn.Linear(cfg.hidden_dim, cfg.ffn_dim), nn.GELU(),
                                nn.Linear(cfg.ffn_dim, cfg.hidden_dim))
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, key_padding):
        x = x + self.drop(self.attn(self.ln1(x), key_padding))
        return x + self.drop(self.ff(self.ln2(x)))


class TransformerEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.config = cfg
        gen = torch.Generator().manual_seed(cfg.seed)
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.hidden_dim, padding_idx=PAD_ID)
        self.pos_emb = nn.Embedding(cfg.max_len, cfg.hidden_dim)
        self.emb_drop = nn.Dropout(cfg.dropout)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.num_layers))
        self.ln_f = nn.LayerNorm(cfg.hidden_dim)
        self.mlm_head = nn.Linear(cfg.hidden_dim, cfg.vocab_size)
        self._init_weights(gen)

    @torch.no_grad()
    def _init_weights(self, gen: torch.Generator) -> None:
        # own generator: initialization must not depend on global RNG state
        for name, p in self.named_parameters():
            if p.dim() >= 2:
                p.copy_(torch.randn(p.shape, generator=gen) * 0.02)
            elif name.endswith("weight"):
                p.fill_(1.0)
            else:
                p.zero_()
        self.tok_emb.weight[PAD_ID].zero_()

    def forward(self, input_ids: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        """Hidden states (B, L, D) for padded ``input_ids`` (B, L)."""
        if input_ids.numel() == 0:
            raise ValueError("empty batch")
        if int(input_ids.max()) >= self.config.vocab_size or int(input_ids.min()) < 0:
            raise ValueError(f"token id outside vocabulary of size {self.config.vocab_size}")
        L = input_ids.shape[1]
        if L > self.config.max_len:
            raise ValueError(f"sequence length {L} exceeds max_len {self.config.max_len}")
        pos = torch.arange(L, device=input_ids.device)
        x = self.emb_drop(self.tok_emb(input_ids) + self.pos_emb(pos)[None])
        key_padding = ~attention_mask
        for block in self.blocks:
            x = block(x, key_padding)
        return self.ln_f(x)

    def encode(self, batch: Sequence[Sequence[int]]) -> tuple[torch.Tensor, torch.Tensor]:
        """Pad ``batch`` to its longest member and run the encoder.

        Returns ``(hidden, attention_mask)``.
        """
        ids, mask = pad_batch(batch, device=self.tok_emb.weight.device)
        return self(ids, mask), mask

    @staticmethod
    def pool(hidden: torch.Tensor) -> torch.Tensor:
        return hidden[..., 0, :]

    def mlm_logits(self, hidden: torch.Tensor, positions) -> torch.Tensor:
        """Vocabulary logits at ``positions``.

        For a single sequence (L, D) ``positions`` is a list of indices; for a
        batch (B, L, D) it is a list of ``(row, index)`` pairs.
        """
        if hidden.dim() == 2:
            pos = torch.as_tensor(list(positions), dtype=torch.long)
            if pos.numel() and (pos.min() < 0 or pos.max() >= hidden.shape[0]):
                raise IndexError("mask position outside sequence")
            rows = hidden[pos]
        else:
            pairs = torch.as_tensor(list(positions), dtype=torch.long).reshape(-1, 2)
            if pairs.numel() and (pairs[:, 1].min() < 0 or pairs[:, 1].max() >= hidden.shape[1]
                                  or pairs[:, 0].max() >= hidden.shape[0]):
                raise IndexError("mask position outside sequence")
            rows = hidden[pairs[:, 0], pairs[:, 1]]
        return self.mlm_head(rows)


def pad_batch(batch: Sequence[Sequence[int]], device=None) -> tuple[torch.Tensor, torch.Tensor]:
    if len(batch) == 0:
        raise ValueError("empty batch")
    width = max(len(s) for s in batch)
    ids = torch.full((len(batch), width), PAD_ID, dtype=torch.long)
    mask = torch.zeros((len(batch), width), dtype=torch.bool)
    for i, seq in enumerate(batch):
        ids[i, : len(seq)] = torch.as_tensor(list(seq), dtype=torch.long)
        mask[i, : len(seq)] = True
    if device is not None:
        ids, mask = ids.to(device), mask.to(device)
    return ids, mask


def argmax_lowest(logits: torch.Tensor) -> torch.Tensor:
    """Row-wise argmax; ties resolve to the lowest vocabulary id.

    NaN counts as the maximum (as in ``torch.argmax``), so the result is
    always a valid id.
    """
    top = logits.max(dim=-1, keepdim=True).values
    ids = torch.arange(logits.shape[-1], device=logits.device).expand_as(logits)
    hit = (logits == top) | torch.isnan(logits)
    return torch.where(hit, ids, logits.shape[-1]).min(dim=-1).values


class SentenceEncoder:
    """A tokenizer plus encoder producing pooled sentence embeddings."""

    def __init__(self, model: TransformerEncoder, tokenizer: Tokenizer):
        self.model = model
        self.tokenizer = tokenizer

    def forward_pooled(self, texts: Sequence[str]) -> torch.Tensor:
        ids = [self.tokenizer(t).ids for t in texts]
        hidden, _ = self.model.encode(ids)
        return self.model.pool(hidden)

    @torch.no_grad()
    def embed(self, texts: Sequence[str], batch_size: int = 128) -> np.ndarray:
        was_training = self.model.training
        self.model.eval()
        try:
            out = [self.forward_pooled(texts[i:i + batch_size]).double().cpu().numpy()
                   for i in range(0, len(texts), batch_size)]
        finally:
            self.model.train(was_training)
        if not out:
            return np.zeros((0, self.model.config.hidden_dim))
        return np.concatenate(out)


def build_encoder(tokenizer: Tokenizer, seed: int = 0, profile: str = "desk", **overrides) -> SentenceEncoder:
    kwargs = dict(PROFILES[profile])
    kwargs.update(overrides)
    cfg = EncoderConfig(vocab_size=len(tokenizer.vocab), max_len=tokenizer.max_len, seed=seed, **kwargs)
    return SentenceEncoder(TransformerEncoder(cfg), tokenizer)


# -- checkpoint container ---------------------------------------------------
#
# layout: MAGIC | u32 version | u64 header length | header JSON | tensor blobs | sha256
# The digest covers every preceding byte.

def save_checkpoint(encoder: SentenceEncoder | TransformerEncoder, path: str | Path,
                    metadata: dict | None = None) -> Path:
    model = encoder.model if isinstance(encoder, SentenceEncoder) else encoder
    tokenizer = encoder.tokenizer if isinstance(encoder, SentenceEncoder) else None
    state = model.state_dict()
    blobs, params, offset = [], [], 0
    for name, tensor in state.items():
        arr = tensor.detach().cpu().contiguous().numpy()
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        params.append({"name": name, "dtype": arr.dtype.str.lstrip("<>|="), "shape": list(arr.shape),
                       "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "config": asdict(model.config),
        "params": params,
        "tokenizer": None if tokenizer is None else {
            "mode": tokenizer.mode, "max_len": tokenizer.max_len, "vocab": tokenizer.vocab.tokens},
        "metadata": metadata or {},
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = CHECKPOINT_MAGIC + struct.pack("<IQ", CHECKPOINT_VERSION, len(head)) + head + b"".join(blobs)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(body + hashlib.sha256(body).digest())
    tmp.replace(path)
    return path


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, torch.Tensor]]:
    data = Path(path).read_bytes()
    prefix = len(CHECKPOINT_MAGIC) + 12
    if not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    if len(data) < prefix + 32 or hashlib.sha256(data[:-32]).digest() != data[-32:]:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt or truncated file)")
    version, head_len = struct.unpack("<IQ", data[len(CHECKPOINT_MAGIC):prefix])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    header = json.loads(data[prefix:prefix + head_len])
    base = prefix + head_len
    state = {}
    for p in header["params"]:
        raw = data[base + p["offset"]: base + p["offset"] + p["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(p["dtype"]).newbyteorder("<")).reshape(p["shape"])
        state[p["name"]] = torch.from_numpy(arr.astype(arr.dtype.newbyteorder("="), copy=True))
    return header, state


def load_checkpoint(path: str | Path) -> SentenceEncoder | TransformerEncoder:
    """Load a checkpoint; returns a :class:`SentenceEncoder` when a tokenizer was saved."""
    header, state = read_checkpoint(path)
    model = TransformerEncoder(EncoderConfig(**header["config"]))
    dtype = next(iter(state.values())).dtype if state else torch.float32
    model.to(dtype)
    model.load_state_dict(state)
    model.eval()
    tok = header.get("tokenizer")
    if tok is None:
        return model
    tokenizer = Tokenizer(Vocabulary(tok["vocab"][4:]), mode=tok["mode"], max_len=tok["max_len"])
    return SentenceEncoder(model, tokenizer)


def checkpoint_metadata(path: str | Path) -> dict:
    return read_checkpoint(path)[0].get("metadata", {})
