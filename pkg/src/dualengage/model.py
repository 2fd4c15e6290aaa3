"""Assembly of the two-stream classifier and its ablation variants."""

from __future__ import annotations

import dataclasses

import torch
import torch.nn as nn

from .config import RunConfig
from .core import N_CLASSES
from .fusion import ConcatFusionHead, GatedFusionHead
from .motion_stream import MotionStream, tokenize_stack
from .scene_stream import SceneEncoder

# Table-6 variant grid: the full model, single-stream baselines, temporal
# encoder swaps/removal, scene backbone swaps, and the no-attention/no-gate row.
VARIANTS = (
    "primary_only",
    "secondary_only",
    "no_temporal_encoder",
    "lstm",
    "cnn1d",
    "r2plus1d",
    "i3d",
    "concat_fusion",
    "full",
)

VARIANT_LABELS = {
    "primary_only": "motion stream only",
    "secondary_only": "scene stream only",
    "no_temporal_encoder": "mean tokens (temporal encoder removed)",
    "lstm": "LSTM temporal encoder",
    "cnn1d": "1D CNN temporal encoder",
    "r2plus1d": "factorized 2+1D scene backbone",
    "i3d": "inception-style scene backbone",
    "concat_fusion": "mean pooling + concatenation (no attention, no gate)",
    "full": "full gated two-stream model",
}


def variant_config(cfg: RunConfig, variant: str) -> RunConfig:
    """Derive the per-variant config from the base run config."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown model variant {variant!r} (expected one of {VARIANTS})")
    out = dataclasses.replace(cfg)
    out.motion = dataclasses.replace(cfg.motion)
    out.scene = dataclasses.replace(cfg.scene)
    out.fusion = dataclasses.replace(cfg.fusion)
    out.variant = variant
    if variant == "no_temporal_encoder":
        out.motion.temporal_encoder = "none"
    elif variant in ("lstm", "cnn1d"):
        out.motion.temporal_encoder = variant
    elif variant == "r2plus1d":
        out.scene.variant = "r2plus1d_toy"
    elif variant == "i3d":
        out.scene.variant = "i3d_toy"
    elif variant == "concat_fusion":
        out.motion.student_pooling = "mean"
        out.fusion.mode = "concat"
    return out


class EngagementClassifier(nn.Module):
    """Configurable two-stream (or single-stream) engagement classifier."""

    def __init__(self, cfg: RunConfig, n_steps: int):
        super().__init__()
        cfg = variant_config(cfg, cfg.variant)
        self.cfg = cfg
        self.variant = cfg.variant
        fused = cfg.motion.fused_dim

        self.motion = None
        self.scene = None
        if self.variant != "secondary_only":
            self.motion = MotionStream(cfg.motion, n_steps)
        if self.variant != "primary_only":
            if cfg.scene.fused_dim != fused:
                raise ValueError("motion and scene fused widths must match")
            self.scene = SceneEncoder(cfg.scene)

        if self.variant == "primary_only" or self.variant == "secondary_only":
            self.head = nn.Linear(fused, N_CLASSES)
        elif cfg.fusion.mode == "concat":
            self.head = ConcatFusionHead(fused)
        else:
            self.head = GatedFusionHead(fused, cfg.fusion.gate_hidden)

    def forward(self, batch: dict[str, torch.Tensor]) -> dict[str, torch.Tensor]:
        """batch keys: tubes [B,n,S,2,h,w] (or pre-tokenized m_seq [B,n,S,2]),
        step_mask [B,n,S], student_mask [B,n], scene [B,3,T,H,W].
        Returns logits plus gate/attention diagnostics."""
        out: dict[str, torch.Tensor] = {}

        if self.motion is not None:
            m_seq = batch.get("m_seq")
            if m_seq is None:
                m_seq = tokenize_stack(batch["tubes"])
            motion_vec, attn = self.motion(
                m_seq, batch["step_mask"].bool(), batch.get("student_mask")
            )
            out["attention"] = attn
        if self.scene is not None:
            scene_vec = self.scene(batch["scene"])

        if self.variant == "primary_only":
            out["logits"] = self.head(motion_vec)
        elif self.variant == "secondary_only":
            out["logits"] = self.head(scene_vec)
        else:
            gate_out = self.head(motion_vec, scene_vec)
            out["logits"] = gate_out.logits
            out["alpha"] = gate_out.alpha
            out["beta"] = gate_out.beta
        return out


def build_model(cfg: RunConfig, variant: str, n_steps: int) -> EngagementClassifier:
    return EngagementClassifier(variant_config(cfg, variant), n_steps)
