"""Ablation harness: train every model variant under an identical protocol
and seed set, and render the comparison table.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from .config import RunConfig
from .model import VARIANT_LABELS, VARIANTS
from .training import run_cv

GRIDS = {"table6": list(VARIANTS)}


def run_ablation_grid(
    dataset,
    cfg: RunConfig,
    variants: list[str] | None = None,
    seeds: list[int] | None = None,
    out_dir: str | Path | None = None,
    epochs: int | None = None,
    folds: int | None = None,
    quiet: bool = True,
) -> dict:
    """Every variant x seed trained/evaluated identically; rows aggregated
    over seeds (and folds) as mean +- std."""
    variants = list(variants) if variants is not None else GRIDS["table6"]
    seeds = list(seeds) if seeds is not None else [1, 2, 3]
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown ablation variant {v!r} (expected one of {VARIANTS})")

    rows: dict[str, dict] = {}
    for variant in variants:
        per_metric: dict[str, list[float]] = {
            "accuracy": [], "macro_precision": [], "macro_recall": [], "macro_f1": []
        }
        for seed in seeds:
            run_cfg = dataclasses.replace(cfg, seed=seed)
            result = run_cv(
                variant, dataset, run_cfg, out_dir=None, epochs=epochs,
                folds=folds, quiet=quiet,
            )
            for name in per_metric:
                per_metric[name].append(result["summary"][name]["mean"])
        rows[variant] = {
            "label": VARIANT_LABELS[variant],
            "seeds": seeds,
            **{
                name: {
                    "mean": float(np.mean(vals)),
                    "std": float(np.std(vals)),
                    "per_seed": [float(v) for v in vals],
                }
                for name, vals in per_metric.items()
            },
        }

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        cfg.save(out_dir / "config.json")
        (out_dir / "ablation.json").write_text(json.dumps(rows, indent=2, sort_keys=True))
        (out_dir / "ablation.txt").write_text(render_grid_table(rows))
    return rows


def render_grid_table(rows: dict) -> str:
    lines = [
        f"{'variant':<52} {'accuracy':>16} {'macro_f1':>16}",
    ]
    for variant, row in rows.items():
        acc = row["accuracy"]
        f1 = row["macro_f1"]
        lines.append(
            f"{row['label']:<52} "
            f"{acc['mean']:.4f} +- {acc['std']:.4f} "
            f"{f1['mean']:.4f} +- {f1['std']:.4f}"
        )
    return "\n".join(lines) + "\n"
