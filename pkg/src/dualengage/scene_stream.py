"""Scene-level stream: an 18-layer 3D residual network over the full clip,
global spatiotemporal average pooling, and a two-layer projection head.

The toy variant shrinks channel widths 8x so the whole suite runs on CPU;
alternative toy block definitions (factorized 2+1D convs, a small inception
unit) back the backbone-swap ablation rows.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .config import SceneConfig
from .npyio import read_tensor, write_tensor

FULL_CHANNELS = (64, 128, 256, 512)
TOY_CHANNELS = (8, 16, 32, 64)


class BasicBlock3d(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv3d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm3d(cout)
        self.conv2 = nn.Conv3d(cout, cout, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm3d(cout)
        self.downsample = None
        if stride != 1 or cin != cout:
            self.downsample = nn.Sequential(
                nn.Conv3d(cin, cout, 1, stride=stride, bias=False),
                nn.BatchNorm3d(cout),
            )

    def forward(self, x):
        y = torch.relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        shortcut = x if self.downsample is None else self.downsample(x)
        return torch.relu(y + shortcut)


class Factorized2Plus1Block(nn.Module):
    """Residual block with spatial then temporal factorized convolutions."""

    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()

        def conv2plus1(ci, co, s):
            return nn.Sequential(
                nn.Conv3d(ci, co, (1, 3, 3), stride=(1, s, s), padding=(0, 1, 1), bias=False),
                nn.BatchNorm3d(co),
                nn.ReLU(),
                nn.Conv3d(co, co, (3, 1, 1), stride=(s, 1, 1), padding=(1, 0, 0), bias=False),
            )

        self.conv1 = conv2plus1(cin, cout, stride)
        self.bn1 = nn.BatchNorm3d(cout)
        self.conv2 = conv2plus1(cout, cout, 1)
        self.bn2 = nn.BatchNorm3d(cout)
        self.downsample = None
        if stride != 1 or cin != cout:
            self.downsample = nn.Sequential(
                nn.Conv3d(cin, cout, 1, stride=stride, bias=False),
                nn.BatchNorm3d(cout),
            )

    def forward(self, x):
        y = torch.relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        shortcut = x if self.downsample is None else self.downsample(x)
        return torch.relu(y + shortcut)


class InceptionLiteBlock(nn.Module):
    """Small parallel-branch 3D unit (1x1x1 / 3x3x3 / pool+1x1x1 branches)."""

    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        c = max(cout // 4, 1)
        self.branch1 = nn.Sequential(
            nn.Conv3d(cin, c, 1, stride=stride, bias=False), nn.BatchNorm3d(c)
        )
        self.branch3 = nn.Sequential(
            nn.Conv3d(cin, cout - 2 * c, 3, stride=stride, padding=1, bias=False),
            nn.BatchNorm3d(cout - 2 * c),
        )
        self.branch_pool = nn.Sequential(
            nn.MaxPool3d(3, stride=stride, padding=1),
            nn.Conv3d(cin, c, 1, bias=False),
            nn.BatchNorm3d(c),
        )

    def forward(self, x):
        out = torch.cat([self.branch1(x), self.branch3(x), self.branch_pool(x)], dim=1)
        return torch.relu(out)


_BLOCKS = {
    "r3d18": BasicBlock3d,
    "r2plus1d": Factorized2Plus1Block,
    "i3d": InceptionLiteBlock,
}


def _parse_variant(variant: str) -> tuple[str, tuple[int, int, int, int]]:
    family, _, scale = variant.partition("_")
    if family not in _BLOCKS or scale not in ("full", "toy"):
        raise ValueError(f"unknown scene backbone variant {variant!r}")
    if scale == "full" and family != "r3d18":
        raise ValueError(f"variant {variant!r}: only r3d18 has a full-scale build")
    return family, FULL_CHANNELS if scale == "full" else TOY_CHANNELS


class SceneEncoder(nn.Module):
    """Full clip [B, 3, T, H, W] -> scene embedding G [B, fused_dim]."""

    def __init__(self, cfg: SceneConfig):
        super().__init__()
        self.cfg = cfg
        family, ch = _parse_variant(cfg.variant)
        block = _BLOCKS[family]
        self.stem = nn.Sequential(
            nn.Conv3d(3, ch[0], (3, 7, 7), stride=(1, 2, 2), padding=(1, 3, 3), bias=False),
            nn.BatchNorm3d(ch[0]),
            nn.ReLU(),
        )
        self.stage1 = nn.Sequential(block(ch[0], ch[0]), block(ch[0], ch[0]))
        self.stage2 = nn.Sequential(block(ch[0], ch[1], 2), block(ch[1], ch[1]))
        self.stage3 = nn.Sequential(block(ch[1], ch[2], 2), block(ch[2], ch[2]))
        self.stage4 = nn.Sequential(block(ch[2], ch[3], 2), block(ch[3], ch[3]))
        self.proj = nn.Sequential(
            nn.Linear(ch[3], cfg.fused_dim),
            nn.ReLU(),
            nn.Linear(cfg.fused_dim, cfg.fused_dim),
        )
        if cfg.freeze:
            for p in self.backbone_parameters():
                p.requires_grad_(False)

    def backbone_parameters(self):
        for module in (self.stem, self.stage1, self.stage2, self.stage3, self.stage4):
            yield from module.parameters()

    def backbone_parameter_count(self) -> int:
        return sum(p.numel() for p in self.backbone_parameters())

    def forward(self, clip: torch.Tensor) -> torch.Tensor:
        if clip.ndim == 4:
            clip = clip.unsqueeze(0)
        if clip.shape[1] != 3:
            raise ValueError(f"expected [B, 3, T, H, W] clip, got {tuple(clip.shape)}")
        x = clip[:, :, :: self.cfg.frame_stride]
        x = self.stem(x)
        x = self.stage4(self.stage3(self.stage2(self.stage1(x))))
        pooled = global_avg_pool(x)
        return self.proj(pooled)


def global_avg_pool(volume: torch.Tensor) -> torch.Tensor:
    """GAP over (time, height, width): [B, C, T, H, W] -> [B, C]."""
    return volume.mean(dim=(2, 3, 4))


def encode_scene(clip: torch.Tensor, encoder: SceneEncoder) -> torch.Tensor:
    """Inference-mode scene embedding for one clip [3, T, H, W] -> [fused_dim]."""
    was_training = encoder.training
    encoder.eval()
    try:
        with torch.no_grad():
            out = encoder(clip.unsqueeze(0))[0]
    finally:
        encoder.train(was_training)
    return out


# --- named-tensor weight bundles -----------------------------------------


def save_weight_bundle(model: nn.Module, bundle_dir: str | Path) -> list[str]:
    """Persist every floating-point state entry as <name>.npy in a directory."""
    bundle_dir = Path(bundle_dir)
    bundle_dir.mkdir(parents=True, exist_ok=True)
    saved = []
    for name, tensor in model.state_dict().items():
        if not tensor.is_floating_point():
            continue  # integer bookkeeping buffers are not part of the bundle
        write_tensor(tensor.detach().cpu().numpy(), bundle_dir / f"{name}.npy")
        saved.append(name)
    return saved


def load_backbone_weights(
    bundle_dir: str | Path, model: nn.Module, strict: bool = False
) -> dict[str, list[str]]:
    """Load a named-tensor bundle into ``model``.

    Returns {"loaded": [...], "random": [...]} where ``random`` lists every
    parameter left at its random initialization. With ``strict`` a missing
    tensor raises instead of being reported.
    """
    bundle_dir = Path(bundle_dir)
    state = model.state_dict()
    loaded, missing = [], []
    for name, tensor in state.items():
        if not tensor.is_floating_point():
            continue
        path = bundle_dir / f"{name}.npy"
        if not path.exists():
            missing.append(name)
            continue
        arr = read_tensor(path)
        if tuple(arr.shape) != tuple(tensor.shape):
            raise ValueError(
                f"weight bundle shape mismatch for '{name}': bundle has "
                f"{tuple(arr.shape)}, model expects {tuple(tensor.shape)}"
            )
        state[name] = torch.from_numpy(arr).to(tensor.dtype)
        loaded.append(name)
    if strict and missing:
        raise ValueError(f"weight bundle is missing required tensor '{missing[0]}'")
    model.load_state_dict(state)
    return {"loaded": loaded, "random": missing}
