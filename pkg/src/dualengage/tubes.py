"""Per-student motion tubes: tracked boxes mapped onto the flow grid,
flow crops resized to a fixed tube resolution, and stacking across students.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .flow import FLOW_GRID, FlowField, bilinear_resize
from .npyio import read_tensor, write_tensor
from .tracking import Track


class DegenerateBoxError(ValueError):
    def __init__(self, box, track_id=None, frame=None):
        context = ""
        if track_id is not None:
            context = f" (track {track_id}, frame {frame})"
        super().__init__(f"degenerate flow-grid box {np.asarray(box).tolist()}{context}")


@dataclass
class MotionTube:
    """One student's flow crops over time, with a per-step validity mask."""

    track_id: int
    flow: np.ndarray  # [T-1, 2, G, G]
    valid_mask: np.ndarray  # [T-1] bool


@dataclass
class TubeStack:
    """Motion tubes stacked across students: the tensor fed to the motion stream."""

    tubes: np.ndarray  # [n_students, T-1, 2, G, G]
    masks: np.ndarray  # [n_students, T-1] bool
    track_ids: list[int]

    def __post_init__(self) -> None:
        if self.tubes.shape[0] < 1:
            raise ValueError("tube stack needs at least one student")
        if self.tubes.shape[:2] != self.masks.shape:
            raise ValueError("tubes and masks disagree on [n_students, T-1]")

    @property
    def n_students(self) -> int:
        return self.tubes.shape[0]

    def tube(self, j: int) -> MotionTube:
        return MotionTube(
            track_id=self.track_ids[j],
            flow=self.tubes[j].copy(),
            valid_mask=self.masks[j].copy(),
        )

    def save(self, tube_path: str | Path, mask_path: str | Path) -> None:
        write_tensor(self.tubes.astype(np.float32), tube_path)
        write_tensor(self.masks.astype(np.float32), mask_path)

    @classmethod
    def load(cls, tube_path: str | Path, mask_path: str | Path, track_ids=None) -> "TubeStack":
        tubes = read_tensor(tube_path)
        masks = read_tensor(mask_path) > 0.5
        ids = list(track_ids) if track_ids is not None else list(range(tubes.shape[0]))
        return cls(tubes=tubes, masks=masks, track_ids=ids)


def map_box_to_flow_grid(
    box: np.ndarray, h0: int, w0: int, grid: int = FLOW_GRID
) -> np.ndarray:
    """Scale a detection-space box onto the flow grid and clamp to its bounds."""
    x1, y1, x2, y2 = np.asarray(box, dtype=np.float64)
    sx = grid / w0
    sy = grid / h0
    mapped = np.array([sx * x1, sy * y1, sx * x2, sy * y2], dtype=np.float64)
    return np.clip(mapped, 0.0, float(grid))


def box_is_degenerate(mapped_box: np.ndarray, min_px: float = 1.0) -> bool:
    x1, y1, x2, y2 = mapped_box
    return (x2 - x1) < min_px or (y2 - y1) < min_px


def crop_flow(
    field: FlowField,
    box: np.ndarray,
    track_id: int | None = None,
    frame: int | None = None,
) -> np.ndarray:
    """Crop the flow at the mapped box.

    The integer window floors the min corner and ceils the max corner, which
    maximizes coverage of the student region.
    """
    if box_is_degenerate(box):
        raise DegenerateBoxError(box, track_id, frame)
    grid = field.uv.shape[1]
    x1 = max(0, int(math.floor(box[0])))
    y1 = max(0, int(math.floor(box[1])))
    x2 = min(grid, int(math.ceil(box[2])))
    y2 = min(grid, int(math.ceil(box[3])))
    if x2 - x1 < 1 or y2 - y1 < 1:
        raise DegenerateBoxError(box, track_id, frame)
    return field.uv[:, y1:y2, x1:x2].copy()


def resize_crop(crop: np.ndarray, size: int = FLOW_GRID) -> np.ndarray:
    """Bilinearly resample a [2, h, w] crop to the fixed tube resolution."""
    if crop.ndim != 3 or crop.shape[0] != 2 or crop.shape[1] < 1 or crop.shape[2] < 1:
        raise ValueError(f"expected [2, h, w] crop with h, w >= 1, got {crop.shape}")
    return bilinear_resize(crop, size, size)


def build_tube_stack(
    fields: list[FlowField] | np.ndarray,
    tracks: list[Track],
    h0: int,
    w0: int,
    grid: int = FLOW_GRID,
) -> TubeStack:
    """Assemble the stacked motion tensor from per-pair flow and tracks.

    A step t is valid when the track has a box at both frames t and t+1 and
    the mapped box is not degenerate; invalid steps are zero with mask False.
    """
    if isinstance(fields, np.ndarray):
        fields = [FlowField(fields[t]) for t in range(fields.shape[0])]
    if not tracks:
        raise ValueError("no students tracked")
    n_steps = len(fields)
    n = len(tracks)
    tubes = np.zeros((n, n_steps, 2, grid, grid), dtype=np.float32)
    masks = np.zeros((n, n_steps), dtype=bool)

    for j, track in enumerate(tracks):
        for t in range(n_steps):
            if t not in track.boxes or (t + 1) not in track.boxes:
                continue
            mapped = map_box_to_flow_grid(track.boxes[t], h0, w0, grid)
            if box_is_degenerate(mapped):
                continue  # sub-pixel students count as missing steps
            crop = crop_flow(fields[t], mapped, track_id=track.id, frame=t)
            tubes[j, t] = resize_crop(crop, grid)
            masks[j, t] = True

    return TubeStack(tubes=tubes, masks=masks, track_ids=[t.id for t in tracks])
