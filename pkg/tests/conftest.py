import numpy as np
import pytest
import torch

from dualengage.config import MotionConfig, SyntheticConfig, toy_run_config


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_cfg():
    """Toy run config over a very small synthetic set: for fast smoke training."""
    cfg = toy_run_config(seed=0)
    cfg.synthetic = SyntheticConfig(n_per_class=10, frames=30, tube_px=16, scene_px=24)
    return cfg


@pytest.fixture
def tiny_motion_cfg():
    return MotionConfig(
        token_dim=16, student_dim=8, fused_dim=16, layers=1, heads=2,
        ff_dim=32, dropout=0.0, min_valid_steps=1,
    )


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(0)
