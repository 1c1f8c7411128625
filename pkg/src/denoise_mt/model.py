"""Desk-scale shared-parameter encoder-decoder and its training primitives.

One parameter set (including a single embedding matrix tied to the output
projection) serves both the denoising and the translation objective. Sizes
default to a configuration that trains in seconds on CPU.
"""
from __future__ import annotations

import hashlib
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import CheckpointError, ConfigError

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    vocab_size: int
    pad_id: int = 0
    bos_id: int = 1
    eos_id: int = 2
    layers: int = 2
    model_dim: int = 64
    heads: int = 4
    ffn_dim: int = 128
    dropout: float = 0.1
    label_smoothing: float = 0.1
    max_positions: int = 256

    def __post_init__(self) -> None:
        if self.vocab_size < 1:
            raise ConfigError(f"vocab_size must be >= 1, got {self.vocab_size}")
        if self.model_dim % self.heads != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by heads {self.heads}"
            )
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(
                f"label_smoothing must be in [0, 1), got {self.label_smoothing}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")


class PositionalEncoding(nn.Module):
    def __init__(self, dim: int, max_positions: int):
        super().__init__()
        pe = torch.zeros(max_positions, dim)
        pos = torch.arange(0, max_positions, dtype=torch.float).unsqueeze(1)
        div = torch.exp(torch.arange(0, dim, 2).float() * (-math.log(10000.0) / dim))
        pe[:, 0::2] = torch.sin(pos * div)
        pe[:, 1::2] = torch.cos(pos * div)
        self.register_buffer("pe", pe, persistent=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        t = x.size(1)
        if t > self.pe.size(0):
            raise ValueError(f"sequence length {t} exceeds max_positions {self.pe.size(0)}")
        return x + self.pe[:t].unsqueeze(0).to(x.dtype)


class Seq2SeqModel(nn.Module):
    """Pre-norm Transformer encoder-decoder over one joint vocabulary."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.vocab_size, cfg.model_dim, padding_idx=cfg.pad_id)
        self.pos = PositionalEncoding(cfg.model_dim, cfg.max_positions)
        self.drop = nn.Dropout(cfg.dropout)
        self.scale = math.sqrt(cfg.model_dim)

        enc_layer = nn.TransformerEncoderLayer(
            cfg.model_dim, cfg.heads, cfg.ffn_dim, cfg.dropout,
            batch_first=True, norm_first=True,
        )
        self.encoder = nn.TransformerEncoder(
            enc_layer, cfg.layers, norm=nn.LayerNorm(cfg.model_dim),
            enable_nested_tensor=False,
        )
        dec_layer = nn.TransformerDecoderLayer(
            cfg.model_dim, cfg.heads, cfg.ffn_dim, cfg.dropout,
            batch_first=True, norm_first=True,
        )
        self.decoder = nn.TransformerDecoder(
            dec_layer, cfg.layers, norm=nn.LayerNorm(cfg.model_dim)
        )

    def _embed(self, ids: torch.Tensor) -> torch.Tensor:
        return self.drop(self.pos(self.embed(ids) * self.scale))

    def encode(self, src: torch.Tensor, src_pad_mask: torch.Tensor) -> torch.Tensor:
        return self.encoder(self._embed(src), src_key_padding_mask=src_pad_mask)

    def decode(
        self,
        memory: torch.Tensor,
        src_pad_mask: torch.Tensor,
        tgt_in: torch.Tensor,
        tgt_pad_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        t = tgt_in.size(1)
        causal = torch.triu(
            torch.ones(t, t, dtype=torch.bool, device=tgt_in.device), diagonal=1
        )
        hidden = self.decoder(
            self._embed(tgt_in),
            memory,
            tgt_mask=causal,
            tgt_key_padding_mask=tgt_pad_mask,
            memory_key_padding_mask=src_pad_mask,
        )
        # output projection tied to the input embedding
        return F.linear(hidden, self.embed.weight)

    def forward(self, batch: "SequenceBatch") -> torch.Tensor:
        memory = self.encode(batch.src, batch.src_pad_mask)
        return self.decode(memory, batch.src_pad_mask, batch.tgt_in, batch.tgt_pad_mask)


@dataclass
class SequenceBatch:
    src: torch.Tensor  # (B, S) ids, PAD beyond length
    src_pad_mask: torch.Tensor  # (B, S) bool, True at PAD
    tgt_in: torch.Tensor  # (B, T) BOS + target ids
    tgt_out: torch.Tensor  # (B, T) target ids + EOS
    tgt_pad_mask: torch.Tensor  # (B, T) bool, True at PAD
    n_target_tokens: int

    @classmethod
    def from_pairs(cls, pairs, cfg: ModelConfig) -> "SequenceBatch":
        """Assemble padded id matrices from (source ids, target ids) pairs.

        The encoder side gets a trailing EOS; the decoder side is teacher
        forced with BOS-prefixed inputs against EOS-suffixed outputs.
        Sequences beyond max_positions are truncated with a warning.
        """
        if not pairs:
            raise ValueError("empty batch")
        limit = cfg.max_positions - 1
        src_seqs, tgt_in_seqs, tgt_out_seqs = [], [], []
        for src_ids, tgt_ids in pairs:
            for i in list(src_ids) + list(tgt_ids):
                if not 0 <= i < cfg.vocab_size:
                    raise ValueError(f"token id {i} out of range for vocab {cfg.vocab_size}")
            if len(src_ids) > limit or len(tgt_ids) > limit:
                logger.warning(
                    "truncating example to %d positions (src %d, tgt %d)",
                    cfg.max_positions, len(src_ids), len(tgt_ids),
                )
                src_ids = src_ids[:limit]
                tgt_ids = tgt_ids[:limit]
            src_seqs.append(list(src_ids) + [cfg.eos_id])
            tgt_in_seqs.append([cfg.bos_id] + list(tgt_ids))
            tgt_out_seqs.append(list(tgt_ids) + [cfg.eos_id])

        def pad(seqs: list[list[int]]) -> torch.Tensor:
            width = max(len(s) for s in seqs)
            out = torch.full((len(seqs), width), cfg.pad_id, dtype=torch.long)
            for r, s in enumerate(seqs):
                out[r, : len(s)] = torch.tensor(s, dtype=torch.long)
            return out

        src = pad(src_seqs)
        tgt_in = pad(tgt_in_seqs)
        tgt_out = pad(tgt_out_seqs)
        return cls(
            src=src,
            src_pad_mask=src.eq(cfg.pad_id),
            tgt_in=tgt_in,
            tgt_out=tgt_out,
            tgt_pad_mask=tgt_in.eq(cfg.pad_id),
            n_target_tokens=int(tgt_out.ne(cfg.pad_id).sum()),
        )


def smoothed_cross_entropy(
    logits: torch.Tensor,
    targets: torch.Tensor,
    pad_id: int,
    smoothing: float,
) -> tuple[torch.Tensor, int]:
    """Token-averaged label-smoothed negative log-likelihood.

    Per token: (1 - eps) * NLL(gold) + eps * mean NLL over the uniform
    smoothing distribution. PAD target positions are excluded from both the
    sum and the average.
    """
    logp = F.log_softmax(logits.float() if logits.dtype == torch.float16 else logits, dim=-1)
    nll_gold = -logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    per_token = nll_gold
    if smoothing > 0.0:
        per_token = (1.0 - smoothing) * nll_gold + smoothing * (-logp.mean(dim=-1))
    keep = targets.ne(pad_id)
    n_tokens = int(keep.sum())
    if n_tokens == 0:
        raise ValueError("batch has no non-PAD target tokens")
    loss = (per_token * keep).sum() / n_tokens
    return loss, n_tokens


def forward_loss(
    model: Seq2SeqModel,
    batch: SequenceBatch,
    smoothing: float | None = None,
) -> tuple[torch.Tensor, int]:
    """Teacher-forced, causally masked loss over non-PAD target positions."""
    if smoothing is None:
        smoothing = model.cfg.label_smoothing
    logits = model(batch)
    return smoothed_cross_entropy(logits, batch.tgt_out, model.cfg.pad_id, smoothing)


@dataclass(frozen=True)
class LrCurve:
    initial_lr: float = 1e-7
    peak_lr: float = 3e-4
    warmup_steps: int = 100
    decay_steps: int = 1000
    floor_lr: float = 1e-7

    def __post_init__(self) -> None:
        if self.warmup_steps < 0 or self.decay_steps < 1:
            raise ConfigError(
                f"need warmup_steps >= 0 and decay_steps >= 1, got "
                f"({self.warmup_steps}, {self.decay_steps})"
            )
        if min(self.initial_lr, self.peak_lr, self.floor_lr) < 0:
            raise ConfigError("learning rates must be non-negative")


def lr_at(curve: LrCurve, step: int) -> float:
    """Linear ramp to the peak, cosine decay to the floor, then constant."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if step <= curve.warmup_steps:
        if curve.warmup_steps == 0:
            return curve.peak_lr
        frac = step / curve.warmup_steps
        return curve.initial_lr + (curve.peak_lr - curve.initial_lr) * frac
    t = step - curve.warmup_steps
    if t <= curve.decay_steps:
        cos = 0.5 * (1.0 + math.cos(math.pi * t / curve.decay_steps))
        return curve.floor_lr + (curve.peak_lr - curve.floor_lr) * cos
    return curve.floor_lr


def make_optimizer(model: nn.Module, weight_decay: float = 0.01) -> torch.optim.AdamW:
    """Adam with decoupled weight decay; lr is set per step by the trainer."""
    return torch.optim.AdamW(model.parameters(), lr=1.0, weight_decay=weight_decay)


def backward_step(
    model: Seq2SeqModel,
    optimizer: torch.optim.Optimizer,
    batch: SequenceBatch,
    lr: float,
    smoothing: float | None = None,
) -> tuple[float, int, bool]:
    """One update at the given lr. Returns (loss value, token count, stepped).

    A non-finite loss or gradient rejects the step: gradients are cleared, a
    diagnostic is logged, and the parameters stay untouched.
    """
    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.zero_grad(set_to_none=True)
    loss, n_tokens = forward_loss(model, batch, smoothing)
    loss_value = float(loss)
    if not math.isfinite(loss_value):
        logger.warning("non-finite loss %r, step rejected", loss_value)
        optimizer.zero_grad(set_to_none=True)
        return loss_value, n_tokens, False
    loss.backward()
    for name, p in model.named_parameters():
        if p.grad is not None and not torch.isfinite(p.grad).all():
            logger.warning("non-finite gradient in %s, step rejected", name)
            optimizer.zero_grad(set_to_none=True)
            return loss_value, n_tokens, False
    optimizer.step()
    return loss_value, n_tokens, True


def average_params(state_dicts: list[dict[str, torch.Tensor]]) -> dict[str, torch.Tensor]:
    """Element-wise arithmetic mean of named tensors across checkpoints."""
    if not state_dicts:
        raise CheckpointError("no checkpoints to average")
    keys = list(state_dicts[0])
    for sd in state_dicts[1:]:
        if list(sd) != keys:
            raise CheckpointError("checkpoint tensor names differ, cannot average")
    out: dict[str, torch.Tensor] = {}
    for k in keys:
        tensors = [sd[k] for sd in state_dicts]
        shape = tensors[0].shape
        for t in tensors[1:]:
            if t.shape != shape:
                raise CheckpointError(f"shape mismatch for {k}: {shape} vs {t.shape}")
        if tensors[0].is_floating_point():
            acc = torch.zeros(shape, dtype=torch.float64)
            for t in tensors:
                acc += t.to(torch.float64)
            out[k] = (acc / len(tensors)).to(tensors[0].dtype)
        else:
            for t in tensors[1:]:
                if not torch.equal(t, tensors[0]):
                    raise CheckpointError(f"non-float tensor {k} differs across checkpoints")
            out[k] = tensors[0].clone()
    return out


def config_fingerprint(config_json: str) -> str:
    return hashlib.sha256(config_json.encode("utf-8")).hexdigest()


def save_checkpoint(
    path: str | Path,
    *,
    model_state: dict[str, torch.Tensor],
    step: int,
    phase: str,
    config_json: str,
    optimizer_state: dict | None = None,
    torch_rng_state: torch.Tensor | None = None,
    extra: dict | None = None,
) -> None:
    """Write a versioned checkpoint atomically (no partial file on failure).

    Layout: a torch-serialized dict with keys format_version, step, phase,
    config_json, config_hash, model_state, optimizer_state, torch_rng_state,
    extra. Only torch tensors and plain scalars, so files are byte-stable for
    identical runs.
    """
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "step": int(step),
        "phase": phase,
        "config_json": config_json,
        "config_hash": config_fingerprint(config_json),
        "model_state": model_state,
        "optimizer_state": optimizer_state,
        "torch_rng_state": torch_rng_state,
        "extra": extra or {},
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> dict:
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError(f"{path} is not a checkpoint file")
    if payload["format_version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: format version {payload['format_version']} unsupported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    for key in ("step", "phase", "config_json", "model_state"):
        if key not in payload:
            raise CheckpointError(f"{path}: missing checkpoint field {key!r}")
    return payload
