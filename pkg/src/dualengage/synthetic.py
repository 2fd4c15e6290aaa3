"""Synthetic 3-class dataset: sinusoidally moving students with
class-dependent amplitude and synchrony, rendered consistently as motion
tubes (flow crops) and as moving-blob scene clips so both streams carry
class signal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch.utils.data import Dataset

from .config import SyntheticConfig
from .core import CODE_TO_LABEL, LABEL_CODES
from .motion_stream import tokenize_stack
from .npyio import read_tensor, write_tensor

SyntheticSpec = SyntheticConfig

_PALETTE = np.array(
    [
        (1.0, 0.3, 0.3), (0.3, 1.0, 0.3), (0.3, 0.3, 1.0),
        (1.0, 1.0, 0.3), (1.0, 0.3, 1.0), (0.3, 1.0, 1.0),
        (1.0, 0.7, 0.3), (0.7, 0.3, 1.0), (0.6, 1.0, 0.6),
    ],
    dtype=np.float32,
)
_IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32).reshape(3, 1, 1, 1)
_IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32).reshape(3, 1, 1, 1)


@dataclass
class SyntheticClip:
    """Generative parameters for one clip; tensors materialize on demand."""

    label: int
    n_students: int
    amplitudes: np.ndarray  # [n]
    phases: np.ndarray  # [n]
    directions: np.ndarray  # [n, 2] unit vectors
    noise_sigma: float
    material_seed: int
    spec: SyntheticSpec

    def flow_signals(self) -> np.ndarray:
        """Per-student constant-field flow values [n, T-1, 2] in grid px."""
        steps = self.spec.frames - 1
        omega = 2.0 * np.pi * self.spec.cycles / steps
        t = np.arange(steps, dtype=np.float64)
        waves = self.amplitudes[:, None] * np.sin(omega * t[None, :] + self.phases[:, None])
        return (waves[:, :, None] * self.directions[:, None, :]).astype(np.float32)

    def tube_stack(self) -> tuple[np.ndarray, np.ndarray]:
        """Materialize tubes [n, T-1, 2, px, px] and an all-valid mask."""
        px = self.spec.tube_px
        signals = self.flow_signals()
        tubes = np.broadcast_to(
            signals[:, :, :, None, None], signals.shape + (px, px)
        ).astype(np.float32)
        if self.noise_sigma > 0.0:
            rng = np.random.default_rng(self.material_seed)
            tubes = tubes + rng.normal(
                0.0, self.noise_sigma, size=tubes.shape
            ).astype(np.float32)
        mask = np.ones(signals.shape[:2], dtype=bool)
        return np.ascontiguousarray(tubes), mask

    def scene_clip(self) -> np.ndarray:
        """Render the blob video [3, T, px, px], ImageNet-normalized."""
        spec = self.spec
        px = spec.scene_px
        t_frames = spec.frames
        scale = px / 32.0  # flow of 1 grid px moves a blob 1 px at a 32px scene

        signals = self.flow_signals() * scale  # [n, T-1, 2] (dx, dy) per frame
        offsets = np.concatenate(
            [np.zeros((self.n_students, 1, 2), np.float32), np.cumsum(signals, axis=1)],
            axis=1,
        )  # [n, T, 2]

        rng = np.random.default_rng(self.material_seed + 1)
        radius = spec.blob_radius * scale
        positions = np.empty_like(offsets)
        for j in range(self.n_students):
            for axis in range(2):
                lo = offsets[j, :, axis].min()
                hi = offsets[j, :, axis].max()
                base_lo = radius - lo
                base_hi = px - 1 - radius - hi
                if base_hi <= base_lo:  # trajectory larger than the frame
                    base = px / 2 - (lo + hi) / 2
                else:
                    base = rng.uniform(base_lo, base_hi)
                positions[j, :, axis] = base + offsets[j, :, axis]

        ys, xs = np.mgrid[0:px, 0:px].astype(np.float32)
        frames = np.zeros((3, t_frames, px, px), dtype=np.float32)
        frames += (0.1 + 0.15 * (ys / max(px - 1, 1)))[None, None]  # static gradient
        colors = _PALETTE[np.arange(self.n_students) % len(_PALETTE)]
        for j in range(self.n_students):
            dx = xs[None] - positions[j, :, 0][:, None, None]
            dy = ys[None] - positions[j, :, 1][:, None, None]
            blob = np.exp(-(dx * dx + dy * dy) / (2.0 * radius * radius))
            frames += 0.8 * colors[j][:, None, None, None] * blob[None]
        frames = np.clip(frames, 0.0, 1.0)
        return (frames - _IMAGENET_MEAN) / _IMAGENET_STD


def _make_clip(label: int, spec: SyntheticSpec, rng: np.random.Generator, material_seed: int) -> SyntheticClip:
    n = int(rng.integers(spec.n_students_min, spec.n_students_max + 1))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    directions = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    noise = 0.0

    if label == LABEL_CODES["high"]:
        # all students share one coherent wave, with small phase jitter
        base_phase = rng.uniform(-np.pi, np.pi)
        jitter = (1.0 - spec.high_synchrony) * rng.uniform(-np.pi, np.pi, size=n)
        phases = base_phase + jitter
        amplitudes = np.full(n, spec.high_amplitude)
        directions = np.tile(directions[0], (n, 1))  # coherent direction too
    elif label == LABEL_CODES["medium"]:
        # half the students move, phases independent
        phases = rng.uniform(-np.pi, np.pi, size=n)
        amplitudes = np.zeros(n)
        movers = rng.permutation(n)[: max(1, n // 2)]
        amplitudes[movers] = spec.medium_amplitude
    else:
        phases = rng.uniform(-np.pi, np.pi, size=n)
        amplitudes = np.full(n, spec.low_amplitude)
        noise = spec.low_noise

    return SyntheticClip(
        label=label,
        n_students=n,
        amplitudes=amplitudes.astype(np.float64),
        phases=phases.astype(np.float64),
        directions=directions.astype(np.float64),
        noise_sigma=noise,
        material_seed=material_seed,
        spec=spec,
    )


class SyntheticDataset(Dataset):
    """Clip parameters generated eagerly; tensors materialized per access.

    Token sequences (the spatial means the motion stream starts from) are
    precomputed once through the real tokenize path over materialized tubes.
    """

    def __init__(self, clips: list[SyntheticClip], spec: SyntheticSpec):
        self.clips = clips
        self.spec = spec
        self.labels = np.array([c.label for c in clips], dtype=np.int64)
        self._tokens: list[torch.Tensor] = []
        self._step_masks: list[torch.Tensor] = []
        for clip in clips:
            tubes, mask = clip.tube_stack()
            self._tokens.append(tokenize_stack(tubes))
            self._step_masks.append(torch.from_numpy(mask))

    def __len__(self) -> int:
        return len(self.clips)

    def __getitem__(self, idx: int) -> dict:
        clip = self.clips[idx]
        return {
            "m_seq": self._tokens[idx],
            "step_mask": self._step_masks[idx],
            "scene": torch.from_numpy(clip.scene_clip()),
            "label": clip.label,
        }

    def materialize_tubes(self, idx: int) -> tuple[np.ndarray, np.ndarray]:
        return self.clips[idx].tube_stack()


def generate_synthetic(spec: SyntheticSpec, seed: int) -> SyntheticDataset:
    """Balanced 3-class dataset, reproducible bit-for-bit from the seed."""
    clips: list[SyntheticClip] = []
    root = np.random.SeedSequence(seed)
    idx = 0
    for label in range(3):
        for _ in range(spec.n_per_class):
            child = np.random.SeedSequence(entropy=root.entropy, spawn_key=(idx,))
            rng = np.random.default_rng(child)
            material_seed = int(child.generate_state(1)[0] % (2**31))
            clips.append(_make_clip(label, spec, rng, material_seed))
            idx += 1
    return SyntheticDataset(clips, spec)


def collate_clips(batch: list[dict]) -> dict[str, torch.Tensor]:
    """Pad the student axis across the batch; padded rows are masked out."""
    n_max = max(item["m_seq"].shape[0] for item in batch)
    steps = batch[0]["m_seq"].shape[1]
    b = len(batch)
    m_seq = torch.zeros(b, n_max, steps, 2)
    step_mask = torch.zeros(b, n_max, steps, dtype=torch.bool)
    student_mask = torch.zeros(b, n_max, dtype=torch.bool)
    scenes = torch.stack([item["scene"] for item in batch])
    labels = torch.tensor([item["label"] for item in batch], dtype=torch.long)
    for i, item in enumerate(batch):
        n = item["m_seq"].shape[0]
        m_seq[i, :n] = item["m_seq"]
        step_mask[i, :n] = item["step_mask"]
        student_mask[i, :n] = True
    return {
        "m_seq": m_seq,
        "step_mask": step_mask,
        "student_mask": student_mask,
        "scene": scenes,
        "label": labels,
    }


# --- on-disk layout -------------------------------------------------------


def save_dataset(dataset: SyntheticDataset, out_dir: str | Path) -> None:
    """Persist every clip as Z/mask/scene NPY tensors plus a JSON manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, clip in enumerate(dataset.clips):
        stem = f"clip_{i:05d}"
        tubes, mask = clip.tube_stack()
        write_tensor(tubes, out_dir / f"{stem}_Z.npy")
        write_tensor(mask.astype(np.float32), out_dir / f"{stem}_mask.npy")
        write_tensor(clip.scene_clip(), out_dir / f"{stem}_scene.npy")
        entries.append({"stem": stem, "label": CODE_TO_LABEL[clip.label]})
    (out_dir / "dataset.json").write_text(
        json.dumps({"clips": entries, "frames": dataset.spec.frames}, indent=2)
    )


class DiskClipDataset(Dataset):
    """Reads a directory written by :func:`save_dataset` (or the real pipeline)."""

    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        manifest = json.loads((self.data_dir / "dataset.json").read_text())
        self.entries = manifest["clips"]
        self.frames = manifest["frames"]
        self.labels = np.array(
            [LABEL_CODES[e["label"]] for e in self.entries], dtype=np.int64
        )

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, idx: int) -> dict:
        stem = self.entries[idx]["stem"]
        tubes = read_tensor(self.data_dir / f"{stem}_Z.npy")
        mask = read_tensor(self.data_dir / f"{stem}_mask.npy") > 0.5
        scene = read_tensor(self.data_dir / f"{stem}_scene.npy")
        return {
            "m_seq": tokenize_stack(tubes),
            "step_mask": torch.from_numpy(mask),
            "scene": torch.from_numpy(scene),
            "label": int(self.labels[idx]),
        }
