"""Run configuration: every hyperparameter and design decision in one document.

A run's config is written verbatim into its output directory; two runs with
equal configs and seeds produce identical metric reports.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .core import LABEL_CODES


@dataclass
class PreprocessConfig:
    target_fps: int = 30
    target_frames: int = 300
    frame_size: int = 224
    # inter-frame gap > gap_factor x nominal period counts as a severe
    # timestamp discontinuity
    gap_factor: float = 10.0
    letterbox_fill: float = 0.0
    mean: tuple[float, float, float] = (0.485, 0.456, 0.406)
    std: tuple[float, float, float] = (0.229, 0.224, 0.225)


@dataclass
class TrackerConfig:
    score_threshold: float = 0.8
    n_init: int = 3
    max_age: int = 300
    iou_gate: float = 0.3
    appearance_weight: float = 0.0


@dataclass
class FlowConfig:
    grid: int = 128
    backend: str = "classical"  # classical | oracle | external
    external_command: str | None = None
    pyramid_levels: int = 3
    block: int = 8
    search_radius: int = 4


@dataclass
class MotionConfig:
    token_dim: int = 512
    student_dim: int = 256
    fused_dim: int = 512
    layers: int = 3
    heads: int = 8
    ff_dim: int = 1024
    dropout: float = 0.1
    # students with fewer valid tube steps than this are dropped before pooling
    min_valid_steps: int = 10
    student_pooling: str = "attention"  # attention | mean
    temporal_encoder: str = "transformer"  # transformer | lstm | cnn1d | none
    temporal_pooling: str = "mean"
    cnn_channels: tuple[int, int, int] = (128, 256, 256)

    def __post_init__(self) -> None:
        if self.token_dim % self.heads != 0:
            raise ValueError(
                f"token_dim {self.token_dim} must be divisible by heads {self.heads}"
            )


@dataclass
class SceneConfig:
    variant: str = "r3d18_toy"  # r3d18_full | r3d18_toy | r2plus1d_toy | i3d_toy
    frame_stride: int = 4
    fused_dim: int = 512
    freeze: bool = False
    weights_dir: str | None = None


@dataclass
class FusionConfig:
    mode: str = "gated"  # gated | concat
    gate_hidden: int = 256


@dataclass
class TrainingConfig:
    optimizer: str = "adam"
    lr: float = 1e-4
    batch_size: int = 16
    workers: int = 4
    epochs: int = 100
    folds: int = 5
    val_fraction: float = 0.1
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    min_lr: float = 1e-7
    early_stop_patience: int = 20
    min_delta: float = 1e-4


@dataclass
class SyntheticConfig:
    n_per_class: int = 300
    n_students_min: int = 4
    n_students_max: int = 4
    frames: int = 30
    tube_px: int = 32
    scene_px: int = 32
    high_amplitude: float = 2.0
    high_synchrony: float = 0.9
    medium_amplitude: float = 1.0
    low_amplitude: float = 0.2
    low_noise: float = 0.1
    blob_radius: float = 2.5
    cycles: float = 2.0

    def __post_init__(self) -> None:
        if not (4 <= self.n_students_min <= self.n_students_max <= 9):
            raise ValueError("n_students range must lie within [4, 9]")


@dataclass
class RunConfig:
    seed: int = 0
    variant: str = "full"
    label_codes: dict[str, int] = field(default_factory=lambda: dict(LABEL_CODES))
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    motion: MotionConfig = field(default_factory=MotionConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_json(Path(path).read_text())

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(
            seed=d["seed"],
            variant=d["variant"],
            label_codes=dict(d["label_codes"]),
            preprocess=_section(PreprocessConfig, d["preprocess"]),
            tracker=_section(TrackerConfig, d["tracker"]),
            flow=_section(FlowConfig, d["flow"]),
            motion=_section(MotionConfig, d["motion"]),
            scene=_section(SceneConfig, d["scene"]),
            fusion=_section(FusionConfig, d["fusion"]),
            training=_section(TrainingConfig, d["training"]),
            synthetic=_section(SyntheticConfig, d["synthetic"]),
        )


def _section(cls, d: dict):
    """Rebuild a section dataclass, restoring tuple-typed fields."""
    kwargs = {}
    for f in dataclasses.fields(cls):
        value = d[f.name]
        if isinstance(value, list):
            value = tuple(value)
        kwargs[f.name] = value
    return cls(**kwargs)


def toy_run_config(seed: int = 0) -> RunConfig:
    """Desk-scale configuration: small dims so the suite runs on CPU in minutes.

    Every value here is overridable back to the paper-scale defaults.
    """
    cfg = RunConfig(seed=seed)
    cfg.motion = MotionConfig(
        token_dim=64, student_dim=32, fused_dim=64, layers=3, heads=8,
        ff_dim=128, dropout=0.1, min_valid_steps=10,
    )
    cfg.scene = SceneConfig(variant="r3d18_toy", frame_stride=4, fused_dim=64)
    cfg.fusion = FusionConfig(mode="gated", gate_hidden=64)
    cfg.training = TrainingConfig(
        lr=1e-3, batch_size=16, workers=0, epochs=50, folds=5,
    )
    cfg.synthetic = SyntheticConfig()
    return cfg
