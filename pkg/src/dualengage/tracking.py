"""Identity-stable person tracks from per-frame detections.

Constant-velocity Kalman filtering over box centers, IoU-gated Hungarian
assignment (optionally blending an appearance cosine distance with a
normalized Mahalanobis motion distance), and a tentative/confirmed/deleted
lifecycle. Detectors and appearance embedders are external: detections come
in as JSON.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

TENTATIVE = "tentative"
CONFIRMED = "confirmed"
DELETED = "deleted"

_FORBIDDEN = 1e6
# 0.95 chi-square quantile for 2 dof; normalizes the Mahalanobis distance
_CHI2_95_2DOF = 5.9915


@dataclass
class Detection:
    frame_index: int
    box: np.ndarray  # (x1, y1, x2, y2) in H0 x W0 pixel space
    score: float
    appearance: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.box = np.asarray(self.box, dtype=np.float64)
        x1, y1, x2, y2 = self.box
        if not (x1 < x2 and y1 < y2):
            raise ValueError(f"degenerate detection box {self.box.tolist()}")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")
        if self.appearance is not None:
            self.appearance = np.asarray(self.appearance, dtype=np.float64)


@dataclass
class TrackerParams:
    score_threshold: float = 0.8
    n_init: int = 3
    max_age: int = 300
    iou_gate: float = 0.3
    appearance_weight: float = 0.0

    def __post_init__(self) -> None:
        if not (0.0 < self.score_threshold < 1.0):
            raise ValueError("score_threshold must lie in (0, 1)")
        if self.n_init < 1 or self.max_age < 0:
            raise ValueError("n_init >= 1 and max_age >= 0 required")


class KalmanCenter:
    """Constant-velocity filter over (cx, cy, vx, vy); observes (cx, cy)."""

    F = np.array(
        [[1, 0, 1, 0], [0, 1, 0, 1], [0, 0, 1, 0], [0, 0, 0, 1]], dtype=np.float64
    )
    H = np.array([[1, 0, 0, 0], [0, 1, 0, 0]], dtype=np.float64)
    Q = np.diag([1.0, 1.0, 0.01, 0.01])
    R = np.diag([1.0, 1.0])

    def __init__(self, cx: float, cy: float):
        self.x = np.array([cx, cy, 0.0, 0.0], dtype=np.float64)
        self.P = np.diag([10.0, 10.0, 1e4, 1e4])

    def predict(self) -> np.ndarray:
        self.x = self.F @ self.x
        self.P = self.F @ self.P @ self.F.T + self.Q
        return self.x[:2].copy()

    def update(self, cx: float, cy: float) -> None:
        z = np.array([cx, cy], dtype=np.float64)
        innov = z - self.H @ self.x
        S = self.H @ self.P @ self.H.T + self.R
        K = self.P @ self.H.T @ np.linalg.inv(S)
        self.x = self.x + K @ innov
        self.P = (np.eye(4) - K @ self.H) @ self.P

    def mahalanobis_sq(self, cx: float, cy: float) -> float:
        innov = np.array([cx, cy]) - self.H @ self.x
        S = self.H @ self.P @ self.H.T + self.R
        return float(innov @ np.linalg.inv(S) @ innov)


@dataclass
class Track:
    id: int
    state: str = TENTATIVE
    boxes: dict[int, np.ndarray] = field(default_factory=dict)
    hits: int = 0
    misses_since_update: int = 0
    kalman: KalmanCenter | None = None
    size: tuple[float, float] = (0.0, 0.0)  # (w, h) held from last detection
    appearance: np.ndarray | None = None
    ever_confirmed: bool = False

    @classmethod
    def spawn(cls, track_id: int, det: Detection) -> "Track":
        cx, cy, w, h = _box_to_cwh(det.box)
        track = cls(id=track_id, kalman=KalmanCenter(cx, cy), size=(w, h))
        track.hits = 1
        track.boxes[det.frame_index] = det.box.copy()
        track.appearance = None if det.appearance is None else det.appearance.copy()
        return track

    def predicted_box(self) -> np.ndarray:
        cx, cy = self.kalman.x[0], self.kalman.x[1]
        w, h = self.size
        return np.array([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2])

    def apply_match(self, det: Detection) -> None:
        cx, cy, w, h = _box_to_cwh(det.box)
        self.kalman.update(cx, cy)
        self.size = (w, h)
        self.hits += 1
        self.misses_since_update = 0
        self.boxes[det.frame_index] = det.box.copy()
        if det.appearance is not None:
            self.appearance = det.appearance.copy()


def _box_to_cwh(box: np.ndarray) -> tuple[float, float, float, float]:
    x1, y1, x2, y2 = box
    return (x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1


def iou(a: np.ndarray, b: np.ndarray) -> float:
    ix1, iy1 = max(a[0], b[0]), max(a[1], b[1])
    ix2, iy2 = min(a[2], b[2]), min(a[3], b[3])
    iw, ih = max(0.0, ix2 - ix1), max(0.0, iy2 - iy1)
    inter = iw * ih
    if inter == 0.0:
        return 0.0
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def filter_detections(dets: list[Detection], tau: float) -> list[Detection]:
    """Keep detections with score >= tau, order preserved."""
    return [d for d in dets if d.score >= tau]


def _pair_cost(track: Track, det: Detection, params: TrackerParams) -> float:
    if iou(track.predicted_box(), det.box) < params.iou_gate:
        return _FORBIDDEN
    if det.appearance is not None and track.appearance is not None:
        cos_dist = 1.0 - float(np.dot(track.appearance, det.appearance))
        cx, cy, _, _ = _box_to_cwh(det.box)
        motion = min(track.kalman.mahalanobis_sq(cx, cy) / _CHI2_95_2DOF, 1.0)
        w = params.appearance_weight
        return w * cos_dist + (1.0 - w) * motion
    return 1.0 - iou(track.predicted_box(), det.box)


def associate_frame(
    tracks: list[Track], dets: list[Detection], params: TrackerParams
) -> tuple[list[tuple[int, int]], list[Track]]:
    """Match predicted tracks to detections and apply the updates.

    Returns (assignment pairs as (track_idx, det_idx), newly spawned tracks).
    Matched tracks absorb their detection; unmatched tracks get a miss;
    unmatched detections spawn tentative tracks. Caller handles lifecycle
    transitions and id allocation via ``Track.spawn`` ids in ``new_tracks``.
    """
    matches: list[tuple[int, int]] = []
    if tracks and dets:
        cost = np.full((len(tracks), len(dets)), _FORBIDDEN, dtype=np.float64)
        for ti, track in enumerate(tracks):
            for di, det in enumerate(dets):
                cost[ti, di] = _pair_cost(track, det, params)
        rows, cols = linear_sum_assignment(cost)
        matches = [
            (int(r), int(c)) for r, c in zip(rows, cols) if cost[r, c] < _FORBIDDEN / 2
        ]

    matched_tracks = {t for t, _ in matches}
    matched_dets = {d for _, d in matches}
    for ti, di in matches:
        tracks[ti].apply_match(dets[di])
    for ti, track in enumerate(tracks):
        if ti not in matched_tracks:
            track.misses_since_update += 1

    new_tracks = [
        Track.spawn(-1, det) for di, det in enumerate(dets) if di not in matched_dets
    ]
    return matches, new_tracks


def step_lifecycle(track: Track, matched: bool, params: TrackerParams) -> Track:
    """Advance the tentative/confirmed/deleted state machine one frame."""
    if track.state == DELETED:
        return track
    if matched:
        if track.state == TENTATIVE and track.hits >= params.n_init:
            track.state = CONFIRMED
            track.ever_confirmed = True
    else:
        if track.state == TENTATIVE:
            track.state = DELETED  # a miss before confirmation kills the track
        elif track.misses_since_update > params.max_age:
            track.state = DELETED
    return track


def track_clip(
    detections_per_frame: list[list[Detection]], params: TrackerParams | None = None
) -> list[Track]:
    """Run the full tracker over a clip; returns tracks that were ever confirmed."""
    params = params or TrackerParams()
    live: list[Track] = []
    finished: list[Track] = []
    next_id = 1

    for frame_dets in detections_per_frame:
        frame_dets = filter_detections(frame_dets, params.score_threshold)
        for track in live:
            track.kalman.predict()
        matches, spawned = associate_frame(live, frame_dets, params)

        matched_idx = {t for t, _ in matches}
        for ti, track in enumerate(live):
            step_lifecycle(track, ti in matched_idx, params)
        for track in spawned:
            track.id = next_id
            next_id += 1
            step_lifecycle(track, True, params)

        live.extend(spawned)
        still_live = []
        for track in live:
            if track.state == DELETED:
                if track.ever_confirmed:
                    finished.append(track)
            else:
                still_live.append(track)
        live = still_live

    finished.extend(t for t in live if t.ever_confirmed)
    finished.sort(key=lambda t: t.id)
    return finished


# --- JSON interchange ---------------------------------------------------


def load_detections_json(path: str | Path) -> list[list[Detection]]:
    """Per-frame detection lists: [[{box, score, appearance?}, ...], ...]."""
    frames = json.loads(Path(path).read_text())
    out = []
    for t, dets in enumerate(frames):
        out.append(
            [
                Detection(
                    frame_index=t,
                    box=np.asarray(d["box"], dtype=np.float64),
                    score=float(d["score"]),
                    appearance=(
                        np.asarray(d["appearance"], dtype=np.float64)
                        if d.get("appearance") is not None
                        else None
                    ),
                )
                for d in dets
            ]
        )
    return out


def save_tracks_json(tracks: list[Track], path: str | Path) -> None:
    payload = [
        {
            "id": t.id,
            "frames": [
                {"t": frame, "box": [float(v) for v in box]}
                for frame, box in sorted(t.boxes.items())
            ],
        }
        for t in tracks
    ]
    Path(path).write_text(json.dumps(payload, indent=2))


def load_tracks_json(path: str | Path) -> list[Track]:
    payload = json.loads(Path(path).read_text())
    tracks = []
    for entry in payload:
        track = Track(id=int(entry["id"]), state=CONFIRMED, ever_confirmed=True)
        for item in entry["frames"]:
            track.boxes[int(item["t"])] = np.asarray(item["box"], dtype=np.float64)
        tracks.append(track)
    return tracks
