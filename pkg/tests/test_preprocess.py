import json

import numpy as np
import pytest
import torch

from dualengage.config import PreprocessConfig
from dualengage.core import EngagementLabel
from dualengage.npyio import write_tensor
from dualengage.preprocess import (
    REJECT_TIMESTAMP_DISCONTINUITY,
    REJECT_TOO_FEW_FRAMES,
    REJECT_UNREADABLE,
    RawClipRecord,
    fit_to_10s,
    preprocess_clip,
    process_directory,
    quality_filter,
    resample_to_30fps,
    resize_and_normalize,
    summarize_manifest,
)


def _record(**kw):
    base = dict(
        path="x.npy", native_fps=30.0, native_duration_s=10.0,
        decode_ok=True, n_valid_frames=300,
    )
    base.update(kw)
    return RawClipRecord(**base)


class TestQualityFilter:
    def test_unreadable(self):
        assert quality_filter(_record(decode_ok=False)) == REJECT_UNREADABLE

    def test_too_few_frames(self):
        assert quality_filter(_record(n_valid_frames=1)) == REJECT_TOO_FEW_FRAMES

    def test_timestamp_discontinuity(self):
        # max gap 967 ms > 10 x 33.3 ms nominal period at 30 fps
        rec = _record(timestamps_s=[0.0, 0.033, 1.0, 1.033])
        assert quality_filter(rec, gap_factor=10.0) == REJECT_TIMESTAMP_DISCONTINUITY

    def test_clean_clip_accepted(self):
        rec = _record(timestamps_s=[i / 30 for i in range(300)])
        assert quality_filter(rec) is None


class TestResample:
    def test_30fps_identity(self):
        frames = torch.arange(300).view(300, 1, 1, 1).float().expand(300, 3, 4, 4)
        out = resample_to_30fps(frames, 30.0)
        assert torch.equal(out, frames)

    def test_15fps_duplicates_in_order(self):
        frames = torch.arange(150).view(150, 1, 1, 1).float().expand(150, 3, 2, 2)
        out = resample_to_30fps(frames, 15.0)
        assert out.shape[0] == 300
        for k in range(150):
            assert out[2 * k, 0, 0, 0] == k  # frame 2k = source k
            assert out[2 * k + 1, 0, 0, 0] == k  # frame 2k+1 = source k

    def test_22fps_index_map_matches_rounding_oracle(self):
        frames = torch.arange(220).view(220, 1, 1, 1).float().expand(220, 3, 2, 2)
        out = resample_to_30fps(frames, 22.0)
        assert out.shape[0] == 300
        expected = np.clip(np.round(np.arange(300) * 22.0 / 30.0), 0, 219)
        assert np.array_equal(out[:, 0, 0, 0].numpy(), expected)

    def test_empty_input_errors(self):
        with pytest.raises(ValueError):
            resample_to_30fps(torch.zeros(0, 3, 2, 2), 30.0)

    def test_fps_bounds(self):
        with pytest.raises(ValueError):
            resample_to_30fps(torch.zeros(10, 3, 2, 2), 0.5)


class TestFitTo10s:
    def test_exact_length_unchanged(self):
        frames = torch.randn(300, 3, 2, 2)
        assert torch.equal(fit_to_10s(frames), frames)

    def test_short_clip_loops(self):
        frames = torch.arange(150).view(150, 1, 1, 1).float().expand(150, 3, 2, 2)
        out = fit_to_10s(frames)
        assert out.shape[0] == 300
        assert out[150, 0, 0, 0] == 0
        assert out[299, 0, 0, 0] == 149

    def test_long_clip_center_crops(self):
        frames = torch.arange(450).view(450, 1, 1, 1).float().expand(450, 3, 2, 2)
        out = fit_to_10s(frames)
        assert torch.equal(out[:, 0, 0, 0], torch.arange(75, 375).float())

    def test_idempotent(self, rng):
        for length in rng.integers(2, 900, size=12):
            frames = torch.randn(int(length), 3, 2, 2)
            once = fit_to_10s(frames)
            assert torch.equal(fit_to_10s(once), once)


class TestResizeNormalize:
    def test_constant_gray_normalizes_to_zero(self):
        frames = torch.zeros(2, 3, 224, 224)
        frames[:, 0] = 0.485
        out = resize_and_normalize(frames)
        assert out.shape == (2, 3, 224, 224)
        assert torch.allclose(out[:, 0], torch.zeros_like(out[:, 0]), atol=1e-6)

    def test_wide_input_letterboxed(self):
        cfg = PreprocessConfig()
        frames = torch.ones(1, 3, 224, 448)  # W = 2H
        out = resize_and_normalize(frames, cfg)
        pad_value = torch.tensor(
            [(0.0 - m) / s for m, s in zip(cfg.mean, cfg.std)]
        ).view(3, 1, 1)
        # 56-row bands top and bottom, 112 content rows
        assert torch.allclose(out[0, :, :56], pad_value.expand(3, 56, 224))
        assert torch.allclose(out[0, :, 168:], pad_value.expand(3, 56, 224))
        content_value = torch.tensor(
            [(1.0 - m) / s for m, s in zip(cfg.mean, cfg.std)]
        ).view(3, 1, 1)
        assert torch.allclose(out[0, :, 56:168], content_value.expand(3, 112, 224), atol=1e-5)

    def test_160x90_band_geometry(self):
        cfg = PreprocessConfig()
        frames = torch.ones(1, 3, 90, 160)
        out = resize_and_normalize(frames, cfg)
        pad_value = torch.tensor(
            [(0.0 - m) / s for m, s in zip(cfg.mean, cfg.std)]
        ).view(3, 1, 1)
        # content 224x126, bands of 49 rows: 90 * (224/160) = 126, (224-126)/2 = 49
        assert torch.allclose(out[0, :, :49], pad_value.expand(3, 49, 224))
        assert torch.allclose(out[0, :, 175:], pad_value.expand(3, 49, 224))
        assert not torch.allclose(out[0, :, 49:175], pad_value.expand(3, 126, 224))

    def test_aspect_preserved_within_one_pixel(self, rng):
        for _ in range(10):
            h = int(rng.integers(40, 500))
            w = int(rng.integers(40, 500))
            if h == w:
                continue
            scale = 224 / max(h, w)
            ch, cw = round(h * scale), round(w * scale)
            assert abs(cw - w * (ch / h)) <= 1.0

    def test_rejects_non_rgb(self):
        with pytest.raises(ValueError):
            resize_and_normalize(torch.zeros(2, 1, 8, 8))


def test_preprocess_clip_full_pipeline():
    frames = torch.rand(110, 3, 60, 80)
    clip = preprocess_clip(frames, native_fps=22.0)
    assert clip.frames.shape == (300, 3, 224, 224)
    assert clip.fps == 30
    assert clip.duration_s == 10.0


def _write_raw(dirpath, stem, frames, fps, label, timestamps=None):
    write_tensor(frames, dirpath / f"{stem}.npy")
    meta = {"fps": fps, "label": label}
    if timestamps is not None:
        meta["timestamps_s"] = timestamps
    (dirpath / f"{stem}.json").write_text(json.dumps(meta))


def test_process_directory_manifest(tmp_path, rng):
    raw = tmp_path / "raw"
    raw.mkdir()
    _write_raw(raw, "a_high", rng.random((64, 3, 32, 48)).astype(np.float32), 8.0, "high")
    _write_raw(raw, "b_low", rng.random((90, 3, 24, 24)).astype(np.float32), 12.0, "low")
    _write_raw(
        raw, "c_gap", rng.random((30, 3, 16, 16)).astype(np.float32), 30.0, "medium",
        timestamps=[0.0, 0.033, 2.0] + [2.0 + i / 30 for i in range(1, 28)],
    )
    (raw / "d_bad.npy").write_bytes(b"not a tensor")
    (raw / "d_bad.json").write_text(json.dumps({"fps": 30, "label": "low"}))

    out = tmp_path / "out"
    manifest = process_directory(raw, out, tmp_path / "manifest.json")

    assert len(manifest.records) == 2
    reasons = {r["reason"] for r in manifest.rejections}
    assert reasons == {REJECT_UNREADABLE, REJECT_TIMESTAMP_DISCONTINUITY}
    assert manifest.n_total == 4
    assert manifest.class_counts() == {"high": 1, "medium": 0, "low": 1}

    saved = json.loads((tmp_path / "manifest.json").read_text())
    assert saved["n_accepted"] + saved["n_rejected"] == saved["n_total"]

    for rec in manifest.records:
        assert rec.label in (EngagementLabel.HIGH, EngagementLabel.LOW)
    processed = sorted(out.glob("*.npy"))
    assert len(processed) == 2
    from dualengage.npyio import read_tensor

    for p in processed:
        assert read_tensor(p).shape == (300, 3, 224, 224)

    summary = summarize_manifest(manifest)
    assert [row["n_clips"] for row in summary["classes"]] == [1, 0, 1]
    assert all(row["fps"] == 30 and row["duration_s"] == 10 for row in summary["classes"])
