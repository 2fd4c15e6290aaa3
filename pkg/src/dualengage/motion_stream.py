"""Person-level motion stream: flow tokens -> shared temporal encoder ->
per-student embeddings -> attention pooling into one motion vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import MotionConfig


@dataclass
class MotionVector:
    value: torch.Tensor  # [fused_dim]
    attention_weights: torch.Tensor  # [n_students]


def tokenize(tube_step: torch.Tensor | np.ndarray) -> torch.Tensor:
    """Spatially average one flow crop [2, h, w] to a 2-vector token input."""
    if isinstance(tube_step, np.ndarray):
        tube_step = torch.from_numpy(tube_step)
    if tube_step.ndim != 3 or tube_step.shape[0] != 2:
        raise ValueError(f"expected [2, h, w] tube step, got {tuple(tube_step.shape)}")
    return tube_step.float().mean(dim=(1, 2))


def tokenize_stack(tubes: torch.Tensor | np.ndarray) -> torch.Tensor:
    """Batched tokenize: [..., 2, h, w] -> [..., 2] spatial means."""
    if isinstance(tubes, np.ndarray):
        tubes = torch.from_numpy(tubes)
    return tubes.float().mean(dim=(-2, -1))


def masked_mean(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean of x [..., S, d] over the S axis restricted to mask [..., S]."""
    counts = mask.sum(dim=-1, keepdim=True)
    if (counts == 0).any():
        raise ValueError("empty track: no valid steps to pool over")
    weights = mask.to(x.dtype).unsqueeze(-1)
    return (x * weights).sum(dim=-2) / counts.to(x.dtype)


def masked_softmax_stable(scores: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Softmax over the last axis restricted to mask.

    The denominator sums the exponentials in ascending order, so permuting
    entries permutes the output weights bit-for-bit.
    """
    filled = scores.masked_fill(~mask, float("-inf"))
    peak = filled.max(dim=-1, keepdim=True).values
    exps = torch.exp(filled - peak)
    denom = torch.sort(exps, dim=-1).values.sum(dim=-1, keepdim=True)
    return exps / denom


class TokenEmbedder(nn.Module):
    """token_t = ReLU(W m_t + b) + p_t with a learnable positional table."""

    def __init__(self, token_dim: int, n_steps: int):
        super().__init__()
        self.proj = nn.Linear(2, token_dim)
        self.positions = nn.Parameter(torch.randn(n_steps, token_dim) * 0.02)

    def forward(self, m_seq: torch.Tensor) -> torch.Tensor:
        steps = m_seq.shape[-2]
        if steps > self.positions.shape[0]:
            raise ValueError(
                f"sequence of {steps} steps exceeds positional table "
                f"({self.positions.shape[0]} steps)"
            )
        return F.relu(self.proj(m_seq)) + self.positions[:steps]


class PreNormEncoderLayer(nn.Module):
    """Pre-norm transformer encoder layer with residual connections."""

    def __init__(self, dim: int, heads: int, ff_dim: int, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, dropout=dropout, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(
            nn.Linear(dim, ff_dim),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(ff_dim, dim),
        )
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, key_padding_mask: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        attn_out, _ = self.attn(
            h, h, h, key_padding_mask=key_padding_mask, need_weights=False
        )
        x = x + self.drop(attn_out)
        x = x + self.drop(self.ff(self.norm2(x)))
        return x

    def attention_weights(
        self, x: torch.Tensor, key_padding_mask: torch.Tensor
    ) -> torch.Tensor:
        h = self.norm1(x)
        _, weights = self.attn(
            h,
            h,
            h,
            key_padding_mask=key_padding_mask,
            need_weights=True,
            average_attn_weights=False,
        )
        return weights  # [B, H, S, S]


class StudentEncoder(nn.Module):
    """Shared temporal encoder: one embedding per student sequence."""

    def __init__(self, cfg: MotionConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.token_dim
        self.layers = nn.ModuleList()
        enc_out = d
        if cfg.temporal_encoder == "transformer":
            self.layers = nn.ModuleList(
                PreNormEncoderLayer(d, cfg.heads, cfg.ff_dim, cfg.dropout)
                for _ in range(cfg.layers)
            )
        elif cfg.temporal_encoder == "lstm":
            self.lstm = nn.LSTM(d, d, num_layers=1, batch_first=True)
        elif cfg.temporal_encoder == "cnn1d":
            c1, c2, c3 = cfg.cnn_channels
            self.convs = nn.Sequential(
                nn.Conv1d(d, c1, kernel_size=5, padding=2),
                nn.ReLU(),
                nn.Conv1d(c1, c2, kernel_size=5, padding=2),
                nn.ReLU(),
                nn.Conv1d(c2, c3, kernel_size=5, padding=2),
                nn.ReLU(),
            )
            enc_out = c3
        elif cfg.temporal_encoder != "none":
            raise ValueError(f"unknown temporal encoder {cfg.temporal_encoder!r}")
        self.out_proj = nn.Linear(enc_out, cfg.student_dim)

    def forward(self, tokens: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """tokens [B, S, d], mask [B, S] (True = valid) -> embeddings [B, e]."""
        if (~mask).all(dim=-1).any():
            raise ValueError("empty track: a student sequence has no valid steps")
        mode = self.cfg.temporal_encoder

        if mode == "transformer":
            x = tokens
            for i, layer in enumerate(self.layers):
                x = layer(x, key_padding_mask=~mask)
                if torch.isnan(x).any():
                    raise RuntimeError(f"NaN activations in encoder layer {i}")
            pooled = masked_mean(x, mask)
        elif mode == "lstm":
            out, _ = self.lstm(tokens)
            steps = torch.arange(mask.shape[-1], device=mask.device)
            last_valid = torch.where(mask, steps, steps.new_full((), -1)).max(dim=-1).values
            pooled = out[torch.arange(out.shape[0]), last_valid.clamp(min=0)]
        elif mode == "cnn1d":
            x = self.convs(tokens.transpose(1, 2))  # [B, C, S]
            x = x.masked_fill(~mask.unsqueeze(1), float("-inf"))
            pooled = x.max(dim=-1).values
        else:  # no temporal encoder: pool the tokens directly
            pooled = masked_mean(tokens, mask)

        return F.relu(self.out_proj(pooled))


class AttentionPool(nn.Module):
    """Softmax-scored aggregation of per-student embeddings."""

    def __init__(self, student_dim: int, fused_dim: int):
        super().__init__()
        self.score = nn.Parameter(torch.randn(student_dim) * (student_dim**-0.5))
        self.mlp = nn.Sequential(
            nn.Linear(student_dim, fused_dim),
            nn.ReLU(),
            nn.Linear(fused_dim, fused_dim),
        )

    def forward(
        self, embeddings: torch.Tensor, student_mask: torch.Tensor | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """embeddings [B, n, e] -> (motion vector [B, f], weights [B, n])."""
        if embeddings.shape[-2] < 1:
            raise ValueError("need at least one student to pool")
        if student_mask is None:
            student_mask = torch.ones(
                embeddings.shape[:-1], dtype=torch.bool, device=embeddings.device
            )
        scores = embeddings @ self.score.to(embeddings.dtype)
        weights = masked_softmax_stable(scores, student_mask)
        pooled = (weights.unsqueeze(-1) * embeddings).sum(dim=-2)
        return self.mlp(pooled), weights


class MeanPool(nn.Module):
    """Uniform aggregation baseline used by the no-attention ablation."""

    def __init__(self, student_dim: int, fused_dim: int):
        super().__init__()
        self.mlp = nn.Sequential(
            nn.Linear(student_dim, fused_dim),
            nn.ReLU(),
            nn.Linear(fused_dim, fused_dim),
        )

    def forward(self, embeddings, student_mask=None):
        if student_mask is None:
            student_mask = torch.ones(
                embeddings.shape[:-1], dtype=torch.bool, device=embeddings.device
            )
        counts = student_mask.sum(dim=-1, keepdim=True).to(embeddings.dtype)
        weights = student_mask.to(embeddings.dtype) / counts
        pooled = (weights.unsqueeze(-1) * embeddings).sum(dim=-2)
        return self.mlp(pooled), weights


class MotionStream(nn.Module):
    """Tube stack -> motion vector M plus per-student attention weights."""

    def __init__(self, cfg: MotionConfig, n_steps: int):
        super().__init__()
        self.cfg = cfg
        self.embedder = TokenEmbedder(cfg.token_dim, n_steps)
        self.encoder = StudentEncoder(cfg)
        pool_cls = AttentionPool if cfg.student_pooling == "attention" else MeanPool
        self.pool = pool_cls(cfg.student_dim, cfg.fused_dim)

    def forward(
        self,
        m_seq: torch.Tensor,
        step_mask: torch.Tensor,
        student_mask: torch.Tensor | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """m_seq [B, n, S, 2], step_mask [B, n, S] -> (M [B, f], weights [B, n])."""
        b, n, s, _ = m_seq.shape
        if student_mask is None:
            student_mask = torch.ones(b, n, dtype=torch.bool, device=m_seq.device)

        # drop students whose tracks are too short to be informative
        valid_steps = step_mask.sum(dim=-1)
        keep = student_mask & (valid_steps >= self.cfg.min_valid_steps)
        if (~keep).all(dim=-1).any():
            raise ValueError(
                "no students with enough valid steps "
                f"(min_valid_steps={self.cfg.min_valid_steps})"
            )

        flat_tokens = self.embedder(m_seq.reshape(b * n, s, 2))
        # padded students still flow through the encoder; give them one fake
        # valid step so the masked ops stay finite, then zero them afterwards
        flat_mask = step_mask.reshape(b * n, s).clone()
        dead = ~keep.reshape(b * n)
        flat_mask[dead] = False
        flat_mask[dead, 0] = True
        z = self.encoder(flat_tokens, flat_mask).reshape(b, n, -1)

        m, weights = self.pool(z, student_mask=keep)
        return m, weights

    def encode_tube_stack(
        self, tubes: np.ndarray | torch.Tensor, masks: np.ndarray | torch.Tensor
    ) -> MotionVector:
        """Single-clip convenience over a [n, T-1, 2, G, G] stack."""
        m_seq = tokenize_stack(tubes).unsqueeze(0)
        if isinstance(masks, np.ndarray):
            masks = torch.from_numpy(masks)
        step_mask = masks.bool().unsqueeze(0)
        value, weights = self.forward(m_seq, step_mask)
        return MotionVector(value=value[0], attention_weights=weights[0])
