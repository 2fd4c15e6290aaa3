"""Command-line entry points for the preprocessing, tracking, flow, tube,
scene-encoding, synthetic-data, training, evaluation, and ablation stages.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
import torch

from .ablation import GRIDS, run_ablation_grid
from .config import PreprocessConfig, RunConfig, SceneConfig, SyntheticConfig, toy_run_config
from .core import resolve_seed, seed_everything
from .flow import ExternalFlowModel, flow_for_clip
from .model import build_model
from .npyio import read_tensor, write_tensor
from .preprocess import process_directory
from .scene_stream import SceneEncoder, load_backbone_weights
from .synthetic import DiskClipDataset, generate_synthetic, save_dataset
from .tracking import TrackerParams, load_detections_json, load_tracks_json, save_tracks_json, track_clip
from .training import evaluate_model, run_cv, stratified_kfold
from .tubes import build_tube_stack
from .metrics import compute_metrics, confusion_from_pairs


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="dualengage")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="QC + resample raw clips to uniform tensors")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--gap-factor", type=float, default=10.0)

    p = sub.add_parser("track", help="associate detection JSON into tracks")
    p.add_argument("--dets", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tau", type=float, default=0.8)
    p.add_argument("--n-init", type=int, default=3)
    p.add_argument("--max-age", type=int, default=300)
    p.add_argument("--iou-gate", type=float, default=0.3)
    p.add_argument("--appearance-weight", type=float, default=0.0)

    p = sub.add_parser("flow", help="dense flow for a clip tensor")
    p.add_argument("--clip", required=True)
    p.add_argument("--backend", choices=["classical", "oracle", "external"], default="classical")
    p.add_argument("--out", required=True)
    p.add_argument("--external-cmd", default=None)

    p = sub.add_parser("tubes", help="crop per-student motion tubes from flow")
    p.add_argument("--flow", required=True)
    p.add_argument("--tracks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--height", type=int, default=224, help="box space height H0")
    p.add_argument("--width", type=int, default=224, help="box space width W0")

    p = sub.add_parser("encode-scene", help="scene embedding for a clip tensor")
    p.add_argument("--clip", required=True)
    p.add_argument("--variant", default="r3d18_toy")
    p.add_argument("--out", required=True)
    p.add_argument("--weights", default=None)
    p.add_argument("--stride", type=int, default=4)
    p.add_argument("--fused-dim", type=int, default=512)

    p = sub.add_parser("synth", help="generate the synthetic dataset")
    p.add_argument("--spec", default=None, help="JSON file with generator fields")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="cross-validated training run")
    p.add_argument("--config", default=None, help="RunConfig JSON (default: toy config)")
    p.add_argument("--data", required=True, help="dataset dir, or 'synth' to generate")
    p.add_argument("--out", required=True)
    p.add_argument("--variant", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["all", "fold-test"], default="all")
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--out", default=None, help="where to write diagnostics JSON")

    p = sub.add_parser("ablate", help="run the variant comparison grid")
    p.add_argument("--grid", choices=sorted(GRIDS), default="table6")
    p.add_argument("--seeds", default="1,2,3")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--folds", type=int, default=None)

    args = parser.parse_args(argv)
    return _COMMANDS[args.command](args)


def _cmd_preprocess(args) -> int:
    cfg = PreprocessConfig(gap_factor=args.gap_factor)
    manifest = process_directory(args.in_dir, args.out_dir, args.manifest, cfg)
    counts = manifest.class_counts()
    print(
        f"accepted {len(manifest.records)} clips "
        f"(high {counts['high']}, medium {counts['medium']}, low {counts['low']}), "
        f"rejected {len(manifest.rejections)}"
    )
    return 0


def _cmd_track(args) -> int:
    params = TrackerParams(
        score_threshold=args.tau,
        n_init=args.n_init,
        max_age=args.max_age,
        iou_gate=args.iou_gate,
        appearance_weight=args.appearance_weight,
    )
    dets = load_detections_json(args.dets)
    tracks = track_clip(dets, params)
    save_tracks_json(tracks, args.out)
    print(f"{len(tracks)} confirmed tracks -> {args.out}")
    return 0


def _cmd_flow(args) -> int:
    frames = read_tensor(args.clip)
    external = None
    if args.backend == "external":
        if not args.external_cmd:
            print("error: --external-cmd required for the external backend", file=sys.stderr)
            return 2
        external = ExternalFlowModel(command=args.external_cmd, workdir=Path(args.out).parent)
    flow = flow_for_clip(frames, backend=args.backend, external=external)
    write_tensor(flow, args.out)
    print(f"flow {flow.shape} -> {args.out}")
    return 0


def _cmd_tubes(args) -> int:
    fields = read_tensor(args.flow)
    tracks = load_tracks_json(args.tracks)
    stack = build_tube_stack(fields, tracks, h0=args.height, w0=args.width)
    stack.save(args.out, args.mask)
    print(f"tube stack {stack.tubes.shape} -> {args.out} (+ mask {args.mask})")
    return 0


def _cmd_encode_scene(args) -> int:
    clip = read_tensor(args.clip)  # [T, 3, H, W] from preprocessing
    video = torch.from_numpy(clip).permute(1, 0, 2, 3).float()
    encoder = SceneEncoder(
        SceneConfig(variant=args.variant, frame_stride=args.stride, fused_dim=args.fused_dim)
    )
    if args.weights:
        report = load_backbone_weights(args.weights, encoder)
        print(f"loaded {len(report['loaded'])} tensors, {len(report['random'])} random")
    encoder.eval()
    with torch.no_grad():
        embedding = encoder(video.unsqueeze(0))[0]
    write_tensor(embedding.numpy(), args.out)
    print(f"scene embedding {tuple(embedding.shape)} -> {args.out}")
    return 0


def _cmd_synth(args) -> int:
    spec_fields = {}
    if args.spec:
        spec_fields = json.loads(Path(args.spec).read_text())
    spec = SyntheticConfig(**spec_fields)
    seed = resolve_seed(args.seed)
    dataset = generate_synthetic(spec, seed)
    save_dataset(dataset, args.out)
    print(f"{len(dataset)} clips -> {args.out}")
    return 0


def _load_cfg(path: str | None) -> RunConfig:
    return RunConfig.load(path) if path else toy_run_config()


def _cmd_train(args) -> int:
    cfg = _load_cfg(args.config)
    cfg.seed = resolve_seed(cfg.seed)
    variant = args.variant or cfg.variant
    dataset = (
        generate_synthetic(cfg.synthetic, cfg.seed)
        if args.data == "synth"
        else DiskClipDataset(args.data)
    )
    result = run_cv(
        variant, dataset, cfg, out_dir=args.out, epochs=args.epochs,
        folds=args.folds, quiet=not args.verbose,
    )
    acc = result["summary"]["accuracy"]
    f1 = result["summary"]["macro_f1"]
    print(
        f"{variant}: accuracy {acc['mean']:.4f} +- {acc['std']:.4f}, "
        f"macro F1 {f1['mean']:.4f} +- {f1['std']:.4f}"
    )
    return 0


def _cmd_evaluate(args) -> int:
    payload = torch.load(args.checkpoint, weights_only=False)
    cfg = RunConfig.from_json(payload["config"])
    dataset = DiskClipDataset(args.data)
    if args.split == "fold-test":
        folds = stratified_kfold(dataset.labels, k=cfg.training.folds, seed=cfg.seed)
        indices = folds[args.fold][1]
    else:
        indices = np.arange(len(dataset))
    n_steps = int(dataset[0]["step_mask"].shape[-1])
    model = build_model(cfg, payload["variant"], n_steps)
    model.load_state_dict(payload["model_state"])
    confusion, _, diagnostics = evaluate_model(model, dataset, indices, cfg)
    report = compute_metrics(confusion)
    print(report.render_text())
    if args.out:
        Path(args.out).write_text(json.dumps(diagnostics, indent=2))
    return 0


def _cmd_ablate(args) -> int:
    cfg = _load_cfg(args.config)
    cfg.seed = resolve_seed(cfg.seed)
    seeds = [int(s) for s in args.seeds.split(",") if s]
    dataset = (
        generate_synthetic(cfg.synthetic, cfg.seed)
        if args.data == "synth"
        else DiskClipDataset(args.data)
    )
    rows = run_ablation_grid(
        dataset, cfg, variants=GRIDS[args.grid], seeds=seeds,
        out_dir=args.out, epochs=args.epochs, folds=args.folds,
    )
    from .ablation import render_grid_table

    print(render_grid_table(rows), end="")
    return 0


_COMMANDS = {
    "preprocess": _cmd_preprocess,
    "track": _cmd_track,
    "flow": _cmd_flow,
    "tubes": _cmd_tubes,
    "encode-scene": _cmd_encode_scene,
    "synth": _cmd_synth,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "ablate": _cmd_ablate,
}


if __name__ == "__main__":
    raise SystemExit(main())
