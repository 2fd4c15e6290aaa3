"""Softmax-gated convex fusion of the two stream embeddings and the
three-way classification head.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .core import N_CLASSES


@dataclass
class GateOutput:
    alpha: torch.Tensor  # [B]
    beta: torch.Tensor  # [B]
    fused: torch.Tensor  # [B, f]
    logits: torch.Tensor  # [B, 3]


def fuse(
    motion: torch.Tensor, scene: torch.Tensor, alpha: torch.Tensor, beta: torch.Tensor
) -> torch.Tensor:
    """Convex combination h = alpha * M + beta * G (weights broadcast over features)."""
    if alpha.ndim == motion.ndim - 1:
        alpha = alpha.unsqueeze(-1)
        beta = beta.unsqueeze(-1)
    return alpha * motion + beta * scene


class GatedFusionHead(nn.Module):
    """Two scalar fusion weights from the joint context, then classify."""

    def __init__(self, fused_dim: int, gate_hidden: int = 256):
        super().__init__()
        self.gate_mlp = nn.Sequential(
            nn.Linear(2 * fused_dim, gate_hidden),
            nn.ReLU(),
            nn.Linear(gate_hidden, 2),
        )
        self.classifier = nn.Linear(fused_dim, N_CLASSES)

    def gate(self, motion: torch.Tensor, scene: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        gate_logits = self.gate_mlp(torch.cat([motion, scene], dim=-1))
        weights = torch.softmax(gate_logits, dim=-1)
        return weights[..., 0], weights[..., 1]

    def classify(self, fused: torch.Tensor) -> torch.Tensor:
        return self.classifier(fused)

    def forward(self, motion: torch.Tensor, scene: torch.Tensor) -> GateOutput:
        alpha, beta = self.gate(motion, scene)
        fused = fuse(motion, scene, alpha, beta)
        return GateOutput(alpha=alpha, beta=beta, fused=fused, logits=self.classify(fused))


class FixedGateFusionHead(nn.Module):
    """Gate pinned at (0.5, 0.5): the arithmetic-mean fusion baseline."""

    def __init__(self, fused_dim: int):
        super().__init__()
        self.classifier = nn.Linear(fused_dim, N_CLASSES)

    def forward(self, motion: torch.Tensor, scene: torch.Tensor) -> GateOutput:
        half = torch.full(motion.shape[:-1], 0.5, dtype=motion.dtype, device=motion.device)
        fused = fuse(motion, scene, half, half)
        return GateOutput(alpha=half, beta=half, fused=fused, logits=self.classifier(fused))


class ConcatFusionHead(nn.Module):
    """Plain concatenation [M || G] -> FC -> classifier (no adaptive gate)."""

    def __init__(self, fused_dim: int):
        super().__init__()
        self.fc = nn.Sequential(nn.Linear(2 * fused_dim, fused_dim), nn.ReLU())
        self.classifier = nn.Linear(fused_dim, N_CLASSES)

    def forward(self, motion: torch.Tensor, scene: torch.Tensor) -> GateOutput:
        fused = self.fc(torch.cat([motion, scene], dim=-1))
        nan = torch.full(motion.shape[:-1], float("nan"), dtype=motion.dtype, device=motion.device)
        return GateOutput(alpha=nan, beta=nan, fused=fused, logits=self.classifier(fused))
