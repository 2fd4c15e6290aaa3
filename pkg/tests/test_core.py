import dataclasses

import numpy as np
import pytest
import torch

from dualengage.config import RunConfig, toy_run_config
from dualengage.core import (
    CODE_TO_LABEL,
    LABEL_CODES,
    Clip,
    EngagementLabel,
    resolve_seed,
    seed_everything,
)


def test_label_codes_frozen():
    assert LABEL_CODES == {"high": 0, "medium": 1, "low": 2}
    assert EngagementLabel.HIGH == 0
    assert EngagementLabel.MEDIUM == 1
    assert EngagementLabel.LOW == 2


def test_label_mapping_total_and_stable():
    for code in (0, 1, 2):
        assert LABEL_CODES[CODE_TO_LABEL[code]] == code
        assert EngagementLabel.from_name(CODE_TO_LABEL[code]) == code
    with pytest.raises(ValueError):
        EngagementLabel.from_name("extreme")


def test_seed_everything_reproducible():
    seed_everything(0)
    first = (np.random.rand(8).copy(), torch.rand(8).clone())
    seed_everything(0)
    again = (np.random.rand(8), torch.rand(8))
    assert np.array_equal(first[0], again[0])
    assert torch.equal(first[1], again[1])


def test_different_seeds_differ():
    seed_everything(0)
    a = torch.rand(16)
    seed_everything(1)
    b = torch.rand(16)
    assert not torch.equal(a, b)


def test_seed_rejects_negative():
    with pytest.raises(ValueError):
        seed_everything(-1)


def test_env_var_overrides_config_seed(monkeypatch):
    monkeypatch.delenv("DUALENGAGE_SEED", raising=False)
    assert resolve_seed(5) == 5
    monkeypatch.setenv("DUALENGAGE_SEED", "99")
    assert resolve_seed(5) == 99


def test_config_round_trip_lossless():
    for cfg in (RunConfig(), toy_run_config(seed=3)):
        parsed = RunConfig.from_json(cfg.to_json())
        assert parsed == cfg
        for f in dataclasses.fields(RunConfig):
            assert getattr(parsed, f.name) == getattr(cfg, f.name)


def test_config_save_verbatim(tmp_path):
    cfg = toy_run_config(seed=11)
    cfg.save(tmp_path / "config.json")
    assert (tmp_path / "config.json").read_text() == cfg.to_json()
    assert RunConfig.load(tmp_path / "config.json") == cfg


def test_clip_validation():
    frames = torch.zeros(300, 3, 224, 224)
    clip = Clip(frames=frames, fps=30, duration_s=10.0)
    clip.validate(preprocessed=True)

    small = Clip(frames=torch.zeros(10, 3, 8, 8), fps=30, duration_s=1.0)
    small.validate()
    with pytest.raises(ValueError):
        small.validate(preprocessed=True)
    with pytest.raises(ValueError):
        Clip(frames=torch.full((2, 3, 4, 4), float("nan")), fps=30, duration_s=1.0).validate()
