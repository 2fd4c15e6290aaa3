"""Shared domain types and deterministic seeding."""

from __future__ import annotations

import os
import random
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
import torch

SEED_ENV_VAR = "DUALENGAGE_SEED"

# Frozen label codes; serialized with every report so confusion-matrix axes
# are never ambiguous.
LABEL_CODES = {"high": 0, "medium": 1, "low": 2}
CODE_TO_LABEL = {code: name for name, code in LABEL_CODES.items()}
N_CLASSES = 3


class EngagementLabel(IntEnum):
    HIGH = 0
    MEDIUM = 1
    LOW = 2

    @classmethod
    def from_name(cls, name: str) -> "EngagementLabel":
        try:
            return cls(LABEL_CODES[name.lower()])
        except KeyError:
            raise ValueError(f"unknown engagement label {name!r}") from None

    @property
    def label_name(self) -> str:
        return CODE_TO_LABEL[int(self)]


LAYOUTS = ("round_table", "chessboard", "unknown")


@dataclass
class Clip:
    """A decoded, normalized clip: the unit of classification.

    ``frames`` is a float32 tensor [T, 3, H, W]; after preprocessing the
    pipeline guarantees T=300, fps=30, duration 10 s, H=W=224.
    """

    frames: torch.Tensor
    fps: int
    duration_s: float
    label: EngagementLabel | None = None
    source_id: str = ""
    layout: str = "unknown"

    def validate(self, preprocessed: bool = False) -> None:
        if self.frames.ndim != 4 or self.frames.shape[1] != 3:
            raise ValueError(f"frames must be [T, 3, H, W], got {tuple(self.frames.shape)}")
        if not torch.isfinite(self.frames).all():
            raise ValueError("frames contain non-finite values")
        if self.layout not in LAYOUTS:
            raise ValueError(f"unknown layout {self.layout!r}")
        if preprocessed:
            t, _, h, w = self.frames.shape
            if (t, h, w) != (300, 224, 224) or self.fps != 30:
                raise ValueError(
                    f"preprocessed clip must be [300, 3, 224, 224] at 30 fps, "
                    f"got shape {tuple(self.frames.shape)} at {self.fps} fps"
                )


@dataclass
class StreamEmbeddings:
    """Per-clip embeddings from both streams plus the fusion gate weights."""

    motion: torch.Tensor  # [512] (or the configured fused width)
    scene: torch.Tensor
    alpha: float = field(default=float("nan"))
    beta: float = field(default=float("nan"))


def seed_everything(seed: int) -> None:
    """Seed every RNG in the process so runs are reproducible end to end."""
    if seed < 0:
        raise ValueError("seed must be >= 0")
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)


def resolve_seed(config_seed: int) -> int:
    """Config seed, unless overridden by the DUALENGAGE_SEED env var."""
    override = os.environ.get(SEED_ENV_VAR)
    if override is None:
        return config_seed
    return int(override)
