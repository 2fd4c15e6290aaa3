"""Raw-clip conditioning: QC filtering, 30 fps resampling, 10 s fitting,
letterboxed resize to 224x224, and ImageNet normalization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .config import PreprocessConfig
from .core import Clip, EngagementLabel
from .npyio import read_tensor, write_tensor

REJECT_UNREADABLE = "unreadable"
REJECT_TOO_FEW_FRAMES = "too_few_frames"
REJECT_TIMESTAMP_DISCONTINUITY = "timestamp_discontinuity"


@dataclass
class RawClipRecord:
    """Decode-probe result for one raw clip."""

    path: str
    native_fps: float
    native_duration_s: float
    decode_ok: bool
    n_valid_frames: int
    label: EngagementLabel | None = None
    timestamps_s: list[float] | None = None
    source_id: str = ""
    layout: str = "unknown"


@dataclass
class DatasetManifest:
    records: list[RawClipRecord] = field(default_factory=list)
    rejections: list[dict] = field(default_factory=list)  # {path, reason}

    @property
    def n_total(self) -> int:
        return len(self.records) + len(self.rejections)

    def class_counts(self) -> dict[str, int]:
        counts = {"high": 0, "medium": 0, "low": 0}
        for rec in self.records:
            if rec.label is not None:
                counts[rec.label.label_name] += 1
        return counts

    def to_dict(self) -> dict:
        return {
            "accepted": [
                {
                    "path": r.path,
                    "native_fps": r.native_fps,
                    "native_duration_s": r.native_duration_s,
                    "n_valid_frames": r.n_valid_frames,
                    "label": r.label.label_name if r.label is not None else None,
                    "source_id": r.source_id,
                    "layout": r.layout,
                }
                for r in self.records
            ],
            "rejections": self.rejections,
            "class_counts": self.class_counts(),
            "n_accepted": len(self.records),
            "n_rejected": len(self.rejections),
            "n_total": self.n_total,
        }


def quality_filter(record: RawClipRecord, gap_factor: float = 10.0) -> str | None:
    """Return a rejection reason code, or None when the clip is usable."""
    if not record.decode_ok:
        return REJECT_UNREADABLE
    if record.n_valid_frames < 2:
        return REJECT_TOO_FEW_FRAMES
    if record.timestamps_s is not None and len(record.timestamps_s) >= 2:
        ts = np.asarray(record.timestamps_s, dtype=np.float64)
        max_gap = float(np.max(np.diff(ts)))
        nominal = 1.0 / record.native_fps
        if max_gap > gap_factor * nominal:
            return REJECT_TIMESTAMP_DISCONTINUITY
    return None


def resample_to_30fps(frames: torch.Tensor, native_fps: float, target_fps: int = 30) -> torch.Tensor:
    """Nearest-frame temporal resampling to the target rate.

    Output index i draws from source index round(i * native_fps / target),
    with half-ties resolved toward the earlier frame so upsampled frames are
    duplicated in order.
    """
    if frames.shape[0] == 0:
        raise ValueError("cannot resample an empty clip")
    if not (1.0 <= native_fps <= 120.0):
        raise ValueError(f"native fps {native_fps} outside supported range [1, 120]")
    n_in = frames.shape[0]
    duration = n_in / native_fps
    n_out = int(round(duration * target_fps))
    idx = np.ceil(np.arange(n_out) * (native_fps / target_fps) - 0.5).astype(np.int64)
    idx = np.clip(idx, 0, n_in - 1)
    return frames[torch.from_numpy(idx)]


def fit_to_10s(frames: torch.Tensor, target_frames: int = 300) -> torch.Tensor:
    """Center-crop long clips to the target length; loop short ones in order."""
    n = frames.shape[0]
    if n < 2:
        raise ValueError("need at least 2 frames")
    if n == target_frames:
        return frames
    if n > target_frames:
        start = (n - target_frames) // 2
        return frames[start : start + target_frames]
    idx = torch.arange(target_frames) % n
    return frames[idx]


def resize_and_normalize(frames: torch.Tensor, cfg: PreprocessConfig | None = None) -> torch.Tensor:
    """Letterbox to a square frame and standardize with ImageNet statistics.

    Letterboxing is applied exactly when the aspect ratio differs from 1;
    padding bands are filled before normalization, so they land at
    (fill - mean) / std in the output.
    """
    cfg = cfg or PreprocessConfig()
    if frames.ndim != 4 or frames.shape[1] != 3:
        raise ValueError(f"expected [T, 3, H, W] RGB frames, got {tuple(frames.shape)}")
    frames = frames.float()
    size = cfg.frame_size
    t, _, h, w = frames.shape

    if h == w:
        out = F.interpolate(frames, size=(size, size), mode="bilinear", align_corners=False)
    else:
        scale = size / max(h, w)
        content_h = int(round(h * scale))
        content_w = int(round(w * scale))
        content = F.interpolate(
            frames, size=(content_h, content_w), mode="bilinear", align_corners=False
        )
        out = torch.full((t, 3, size, size), cfg.letterbox_fill, dtype=torch.float32)
        top = (size - content_h) // 2
        left = (size - content_w) // 2
        out[:, :, top : top + content_h, left : left + content_w] = content

    mean = torch.tensor(cfg.mean, dtype=torch.float32).view(1, 3, 1, 1)
    std = torch.tensor(cfg.std, dtype=torch.float32).view(1, 3, 1, 1)
    return (out - mean) / std


def preprocess_clip(
    frames: torch.Tensor,
    native_fps: float,
    record: RawClipRecord | None = None,
    cfg: PreprocessConfig | None = None,
) -> Clip:
    """Full per-clip pipeline: resample -> fit to 10 s -> resize/normalize."""
    cfg = cfg or PreprocessConfig()
    frames = resample_to_30fps(frames, native_fps, cfg.target_fps)
    frames = fit_to_10s(frames, cfg.target_frames)
    frames = resize_and_normalize(frames, cfg)
    clip = Clip(
        frames=frames,
        fps=cfg.target_fps,
        duration_s=cfg.target_frames / cfg.target_fps,
        label=record.label if record is not None else None,
        source_id=record.source_id if record is not None else "",
        layout=record.layout if record is not None else "unknown",
    )
    clip.validate(preprocessed=True)
    return clip


def probe_raw_clip(npy_path: Path) -> tuple[RawClipRecord, torch.Tensor | None]:
    """Decode probe for one raw clip stored as <name>.npy + <name>.json.

    The sidecar JSON carries fps/label/timestamps; decode is "delegated" in
    the sense that the raw frames are already unpacked into the NPY file.
    """
    meta_path = npy_path.with_suffix(".json")
    meta = {}
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
    fps = float(meta.get("fps", 30.0))
    label = meta.get("label")
    record = RawClipRecord(
        path=str(npy_path),
        native_fps=fps,
        native_duration_s=0.0,
        decode_ok=False,
        n_valid_frames=0,
        label=EngagementLabel.from_name(label) if label else None,
        timestamps_s=meta.get("timestamps_s"),
        source_id=meta.get("source_id", npy_path.stem),
        layout=meta.get("layout", "unknown"),
    )
    try:
        arr = read_tensor(npy_path)
    except (OSError, ValueError):
        return record, None
    if arr.ndim != 4 or arr.shape[1] != 3:
        return record, None
    record.decode_ok = True
    record.n_valid_frames = int(arr.shape[0])
    record.native_duration_s = arr.shape[0] / fps
    return record, torch.from_numpy(np.ascontiguousarray(arr)).float()


def process_directory(
    in_dir: str | Path,
    out_dir: str | Path,
    manifest_path: str | Path | None = None,
    cfg: PreprocessConfig | None = None,
) -> DatasetManifest:
    """Preprocess every raw clip in ``in_dir``; write tensors + sidecars + manifest."""
    cfg = cfg or PreprocessConfig()
    in_dir = Path(in_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest()

    for npy_path in sorted(in_dir.glob("*.npy")):
        record, frames = probe_raw_clip(npy_path)
        reason = quality_filter(record, cfg.gap_factor)
        if reason is not None or frames is None:
            manifest.rejections.append(
                {"path": record.path, "reason": reason or REJECT_UNREADABLE}
            )
            continue
        clip = preprocess_clip(frames, record.native_fps, record, cfg)
        stem = npy_path.stem
        write_tensor(clip.frames.numpy(), out_dir / f"{stem}.npy")
        sidecar = {
            "fps": clip.fps,
            "duration_s": clip.duration_s,
            "label": clip.label.label_name if clip.label is not None else None,
            "source_id": clip.source_id,
            "layout": clip.layout,
        }
        (out_dir / f"{stem}.json").write_text(json.dumps(sidecar, indent=2))
        manifest.records.append(record)

    if manifest_path is not None:
        Path(manifest_path).write_text(json.dumps(manifest.to_dict(), indent=2))
    return manifest


def summarize_manifest(manifest: DatasetManifest) -> dict:
    """Post-QC summary table: per-class counts at the uniform rate/duration."""
    counts = manifest.class_counts()
    return {
        "classes": [
            {"label": name, "n_clips": counts[name], "fps": 30, "duration_s": 10}
            for name in ("high", "medium", "low")
        ],
        "n_rejected": len(manifest.rejections),
    }
