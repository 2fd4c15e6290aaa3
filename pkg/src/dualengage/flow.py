"""Dense optical flow on the 128x128 grid.

Three interchangeable backends:
  * ``classical`` — coarse-to-fine block matching implemented here,
  * ``oracle``    — exhaustive integer-shift recovery, exact on constructed
                    translation pairs (see :func:`synth_translation_pair`),
  * ``external``  — tensor exchange with any external flow model through
                    NPY request/response files.
"""

from __future__ import annotations

import shlex
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .npyio import read_tensor, write_tensor

FLOW_GRID = 128
BACKENDS = ("classical", "oracle", "external")


@dataclass
class FlowField:
    """Per-frame-pair displacement field [2, G, G]: channel 0 = u, 1 = v."""

    uv: np.ndarray

    def __post_init__(self) -> None:
        self.uv = np.asarray(self.uv, dtype=np.float32)
        if self.uv.ndim != 3 or self.uv.shape[0] != 2:
            raise ValueError(f"flow field must be [2, H, W], got {self.uv.shape}")
        if not np.all(np.isfinite(self.uv)):
            raise ValueError("flow field contains non-finite values")


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned separable bilinear resize of a [C, H, W] array.

    Uses the lerp form a + t*(b - a), so constant inputs are reproduced
    bit-exactly at any output size.
    """
    c, h, w = image.shape
    image = image.astype(np.float32, copy=False)
    if (h, w) == (out_h, out_w):
        return image.copy()

    def _axis_coords(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if n_out == 1 or n_in == 1:
            pos = np.zeros(n_out, dtype=np.float64)
        else:
            pos = np.arange(n_out, dtype=np.float64) * (n_in - 1) / (n_out - 1)
        lo = np.clip(np.floor(pos).astype(np.int64), 0, n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = (pos - lo).astype(np.float32)
        return lo, hi, frac

    ylo, yhi, fy = _axis_coords(h, out_h)
    xlo, xhi, fx = _axis_coords(w, out_w)

    rows_lo = image[:, ylo, :]
    rows_hi = image[:, yhi, :]
    rows = rows_lo + fy[None, :, None] * (rows_hi - rows_lo)
    cols_lo = rows[:, :, xlo]
    cols_hi = rows[:, :, xhi]
    return cols_lo + fx[None, None, :] * (cols_hi - cols_lo)


def frames_to_flow_grid(frames: np.ndarray, grid: int = FLOW_GRID) -> np.ndarray:
    """Resize clip frames [T, 3, H, W] to the flow grid resolution."""
    return np.stack([bilinear_resize(f, grid, grid) for f in frames])


def _to_gray(frame: np.ndarray) -> np.ndarray:
    return frame.astype(np.float32).mean(axis=0)


def _shift_clamped(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """img sampled at (y + dy, x + dx) with edge clamping."""
    h, w = img.shape
    ys = np.clip(np.arange(h) + dy, 0, h - 1)
    xs = np.clip(np.arange(w) + dx, 0, w - 1)
    return img[np.ix_(ys, xs)]


def _candidate_offsets(radius: int) -> list[tuple[int, int]]:
    # zero motion first so exact ties resolve to the smallest displacement
    cands = [
        (dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)
    ]
    cands.sort(key=lambda d: (abs(d[0]) + abs(d[1]), abs(d[0]), abs(d[1])))
    return cands


def _block_match_level(
    a: np.ndarray, b: np.ndarray, init_uv: np.ndarray, block: int, radius: int
) -> np.ndarray:
    """One pyramid level: residual search of +-radius around the init flow."""
    h, w = a.shape
    hb, wb = h // block, w // block

    # warp b back by the initial per-block flow so the residual search is local
    per_px_u = np.repeat(np.repeat(init_uv[0], block, axis=0), block, axis=1)
    per_px_v = np.repeat(np.repeat(init_uv[1], block, axis=0), block, axis=1)
    yy, xx = np.mgrid[0:h, 0:w]
    ys = np.clip(yy + np.rint(per_px_v).astype(np.int64), 0, h - 1)
    xs = np.clip(xx + np.rint(per_px_u).astype(np.int64), 0, w - 1)
    warped = b[ys, xs]

    best_cost = np.full((hb, wb), np.inf, dtype=np.float64)
    best_du = np.zeros((hb, wb), dtype=np.float32)
    best_dv = np.zeros((hb, wb), dtype=np.float32)
    for dy, dx in _candidate_offsets(radius):
        diff = a - _shift_clamped(warped, dy, dx)
        cost = (diff * diff).reshape(hb, block, wb, block).sum(axis=(1, 3))
        better = cost < best_cost
        best_cost[better] = cost[better]
        best_du[better] = dx
        best_dv[better] = dy
    return np.stack([init_uv[0] + best_du, init_uv[1] + best_dv])


def classical_flow(
    frame_a: np.ndarray,
    frame_b: np.ndarray,
    levels: int = 3,
    block: int = 8,
    radius: int = 4,
) -> FlowField:
    """Coarse-to-fine pyramidal block matching on grayscale intensities."""
    a = _to_gray(frame_a)
    b = _to_gray(frame_b)
    h, w = a.shape

    pyr_a, pyr_b = [a], [b]
    for _ in range(levels - 1):
        a2, b2 = pyr_a[-1], pyr_b[-1]
        hh, ww = a2.shape[0] // 2, a2.shape[1] // 2
        pyr_a.append(a2[: hh * 2, : ww * 2].reshape(hh, 2, ww, 2).mean(axis=(1, 3)))
        pyr_b.append(b2[: hh * 2, : ww * 2].reshape(hh, 2, ww, 2).mean(axis=(1, 3)))

    uv = None
    for level in reversed(range(levels)):
        la, lb = pyr_a[level], pyr_b[level]
        hb, wb = la.shape[0] // block, la.shape[1] // block
        if uv is None:
            init = np.zeros((2, hb, wb), dtype=np.float32)
        else:
            init = 2.0 * np.repeat(np.repeat(uv, 2, axis=1), 2, axis=2)[:, :hb, :wb]
        uv = _block_match_level(la, lb, init, block, radius)

    full = np.stack(
        [
            np.repeat(np.repeat(uv[0], block, axis=0), block, axis=1)[:h, :w],
            np.repeat(np.repeat(uv[1], block, axis=0), block, axis=1)[:h, :w],
        ]
    )
    return FlowField(full.astype(np.float32))


def oracle_flow(frame_a: np.ndarray, frame_b: np.ndarray, max_shift: int = 6) -> FlowField:
    """Exhaustive integer-shift matcher: exact on pure translation pairs."""
    a = _to_gray(frame_a)
    b = _to_gray(frame_b)
    h, w = a.shape
    best = (np.inf, 0, 0)
    for dy, dx in _candidate_offsets(max_shift):
        # compare on the in-bounds overlap only, so edge content cannot bias it
        ay0, ay1 = max(0, -dy), min(h, h - dy)
        ax0, ax1 = max(0, -dx), min(w, w - dx)
        ra = a[ay0:ay1, ax0:ax1]
        rb = b[ay0 + dy : ay1 + dy, ax0 + dx : ax1 + dx]
        cost = float(np.mean((ra - rb) ** 2))
        if cost < best[0]:
            best = (cost, dy, dx)
    _, dy, dx = best
    uv = np.zeros((2, h, w), dtype=np.float32)
    uv[0] = dx
    uv[1] = dy
    return FlowField(uv)


@dataclass
class ExternalFlowModel:
    """Runs a configured command that maps a pair-batch NPY to a flow NPY.

    Request file: [B, 2, 3, G, G] stacked (frame_a, frame_b) pairs.
    Response file: [B, 2, G, G] flow fields. The command string may use the
    {request} and {response} placeholders.
    """

    command: str
    workdir: Path | None = None

    def run_pairs(self, pairs: np.ndarray) -> np.ndarray:
        if pairs.ndim != 5 or pairs.shape[1] != 2:
            raise ValueError(f"expected [B, 2, 3, G, G] pair batch, got {pairs.shape}")
        workdir = Path(self.workdir) if self.workdir else Path.cwd()
        request = workdir / "flow_request.npy"
        response = workdir / "flow_response.npy"
        write_tensor(pairs.astype(np.float32), request)
        if response.exists():
            response.unlink()
        cmd = self.command.format(request=request, response=response)
        subprocess.run(shlex.split(cmd), check=True)
        if not response.exists():
            raise FileNotFoundError(
                f"external flow model produced no response file at '{response}'"
            )
        flow = read_tensor(response)
        if flow.shape != (pairs.shape[0], 2, pairs.shape[3], pairs.shape[4]):
            raise ValueError(f"external flow response has wrong shape {flow.shape}")
        return flow.astype(np.float32)


def estimate_flow(
    frame_a: np.ndarray,
    frame_b: np.ndarray,
    backend: str = "classical",
    external: ExternalFlowModel | None = None,
) -> FlowField:
    """Flow between two [3, G, G] frames using the selected backend."""
    frame_a = np.asarray(frame_a, dtype=np.float32)
    frame_b = np.asarray(frame_b, dtype=np.float32)
    if frame_a.shape != frame_b.shape or frame_a.ndim != 3:
        raise ValueError("frames must share a [3, H, W] shape")
    if backend == "classical":
        return classical_flow(frame_a, frame_b)
    if backend == "oracle":
        return oracle_flow(frame_a, frame_b)
    if backend == "external":
        if external is None:
            raise ValueError("external backend requires an ExternalFlowModel")
        pairs = np.stack([frame_a, frame_b])[None]
        return FlowField(external.run_pairs(pairs)[0])
    raise ValueError(f"unknown flow backend {backend!r} (expected one of {BACKENDS})")


def flow_for_clip(
    frames: np.ndarray,
    backend: str = "classical",
    external: ExternalFlowModel | None = None,
    grid: int = FLOW_GRID,
) -> np.ndarray:
    """Per-pair flow for a clip [T, 3, H, W] -> [T-1, 2, grid, grid]."""
    frames = np.asarray(frames, dtype=np.float32)
    if frames.shape[0] < 2:
        raise ValueError("need at least two frames for flow")
    resized = frames_to_flow_grid(frames, grid)
    if backend == "external":
        if external is None:
            raise ValueError("external backend requires an ExternalFlowModel")
        pairs = np.stack([resized[:-1], resized[1:]], axis=1)
        return external.run_pairs(pairs)
    fields = [
        estimate_flow(resized[t], resized[t + 1], backend=backend)
        for t in range(resized.shape[0] - 1)
    ]
    return np.stack([f.uv for f in fields])


def synth_translation_pair(
    shift: tuple[int, int], size: int = FLOW_GRID, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Smooth random frame plus a wrap-free translated copy.

    Returns (frame_a, frame_b) where frame_b equals frame_a displaced by
    (dx, dy) pixels; content revealed at the trailing edge is clamped, so the
    interior truly moves by the requested shift.
    """
    dx, dy = shift
    rng = np.random.default_rng(seed)
    big = rng.random((3, size + 2 * abs(dy) + 8, size + 2 * abs(dx) + 8)).astype(np.float32)
    # box blur so block matching has unambiguous structure
    for axis in (1, 2):
        big = (np.roll(big, 1, axis) + big + np.roll(big, -1, axis)) / 3.0
    oy, ox = abs(dy) + 4, abs(dx) + 4
    frame_a = big[:, oy : oy + size, ox : ox + size].copy()
    frame_b = big[:, oy - dy : oy - dy + size, ox - dx : ox - dx + size].copy()
    return frame_a, frame_b
