"""Training protocol: weighted cross-entropy, stratified k-fold splits,
plateau LR scheduling, early stopping on validation F1, and the fold runner.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader, Subset

from .config import RunConfig
from .core import N_CLASSES, seed_everything
from .metrics import FoldReport, compute_metrics, confusion_from_pairs
from .model import build_model
from .synthetic import collate_clips


def class_weights(counts) -> np.ndarray:
    """Mean-normalized inverse-frequency weights: w_c = n_total / (3 * n_c)."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.shape != (N_CLASSES,):
        raise ValueError(f"expected 3 class counts, got {counts.shape}")
    if np.any(counts < 1):
        raise ValueError("every class needs at least one sample")
    return counts.sum() / (N_CLASSES * counts)


def weighted_ce(
    logits: torch.Tensor, labels: torch.Tensor, weights: torch.Tensor | np.ndarray
) -> torch.Tensor:
    """Class-weighted cross-entropy, normalized by the batch weight sum."""
    if not torch.isfinite(logits).all():
        raise ValueError("non-finite logits")
    if labels.numel() and (labels.min() < 0 or labels.max() >= N_CLASSES):
        raise ValueError("label outside {0, 1, 2}")
    if isinstance(weights, np.ndarray):
        weights = torch.from_numpy(weights)
    weights = weights.to(logits.dtype)
    nll = -F.log_softmax(logits, dim=-1).gather(1, labels.view(-1, 1)).squeeze(1)
    w = weights[labels]
    return (w * nll).sum() / w.sum()


def stratified_kfold(labels, k: int = 5, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-class shuffled chunking into k folds; deterministic per seed."""
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    per_fold: list[list[np.ndarray]] = [[] for _ in range(k)]
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) < k:
            raise ValueError(f"class {c} has {len(idx)} samples, fewer than k={k}")
        rng.shuffle(idx)
        base, extra = divmod(len(idx), k)
        start = 0
        for f in range(k):
            size = base + (1 if f < extra else 0)
            per_fold[f].append(idx[start : start + size])
            start += size
    folds = []
    all_idx = np.arange(len(labels))
    for f in range(k):
        test = np.sort(np.concatenate(per_fold[f]))
        train = np.setdiff1d(all_idx, test)
        folds.append((train, test))
    return folds


def stratified_holdout(
    labels, indices: np.ndarray, fraction: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Split ``indices`` into (train, holdout) preserving class balance."""
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    holdout = []
    for c in np.unique(labels[indices]):
        idx = indices[labels[indices] == c]
        idx = idx.copy()
        rng.shuffle(idx)
        n_hold = max(1, int(round(len(idx) * fraction)))
        holdout.append(idx[:n_hold])
    holdout = np.sort(np.concatenate(holdout))
    train = np.setdiff1d(indices, holdout)
    return train, holdout


class PlateauScheduler:
    """Halve the LR after `patience` consecutive non-improving epochs.

    Improvement means the monitored loss strictly decreased below the best
    seen; the patience counter resets on improvement or on a reduction.
    """

    def __init__(
        self, lr: float, factor: float = 0.5, patience: int = 10, min_lr: float = 1e-7
    ):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.best = float("inf")
        self.bad_epochs = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.lr


class EarlyStopper:
    """Stop after `patience` consecutive epochs without a min_delta F1 gain."""

    def __init__(self, patience: int = 20, min_delta: float = 1e-4):
        self.patience = patience
        self.min_delta = min_delta
        self.best = -float("inf")
        self.bad_epochs = 0

    def step(self, val_f1: float) -> bool:
        if val_f1 >= self.best + self.min_delta:
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        self.best = max(self.best, val_f1)
        return self.bad_epochs >= self.patience


@dataclass
class TrainState:
    epoch: int = 0
    lr: float = 0.0
    best_val_f1: float = -float("inf")
    best_val_loss: float = float("inf")
    epochs_since_improvement: int = 0
    checkpoint_path: str | None = None
    best_state: dict = field(default_factory=dict, repr=False)
    train_loss_history: list[float] = field(default_factory=list)

    def consider_checkpoint(self, val_f1: float, val_loss: float, model) -> bool:
        """Keep the checkpoint with max F1; ties broken by lower loss."""
        better = val_f1 > self.best_val_f1 or (
            val_f1 == self.best_val_f1 and val_loss < self.best_val_loss
        )
        if better:
            self.best_val_f1 = val_f1
            self.best_val_loss = val_loss
            self.best_state = copy.deepcopy(model.state_dict())
            self.epochs_since_improvement = 0
        else:
            self.epochs_since_improvement += 1
        return better


def _loader(dataset, indices, cfg: RunConfig, shuffle: bool, generator=None) -> DataLoader:
    return DataLoader(
        Subset(dataset, [int(i) for i in indices]),
        batch_size=cfg.training.batch_size,
        shuffle=shuffle,
        num_workers=cfg.training.workers,
        collate_fn=collate_clips,
        generator=generator,
    )


@torch.no_grad()
def evaluate_model(
    model, dataset, indices, cfg: RunConfig, weights: torch.Tensor | None = None
) -> tuple[np.ndarray, float, list[dict]]:
    """Confusion matrix, mean weighted loss, and per-clip diagnostics."""
    model.eval()
    labels_all, preds_all, diagnostics = [], [], []
    loss_sum, n_batches = 0.0, 0
    for batch in _loader(dataset, indices, cfg, shuffle=False):
        out = model(batch)
        preds = out["logits"].argmax(dim=-1)
        labels_all.append(batch["label"].numpy())
        preds_all.append(preds.numpy())
        if weights is not None:
            loss_sum += float(weighted_ce(out["logits"], batch["label"], weights))
            n_batches += 1
        for i in range(len(preds)):
            rec = {
                "predicted": int(preds[i]),
                "label": int(batch["label"][i]),
            }
            if "alpha" in out:
                rec["alpha"] = float(out["alpha"][i])
                rec["beta"] = float(out["beta"][i])
            if "attention" in out:
                keep = batch["student_mask"][i].bool()
                rec["attention_weights"] = out["attention"][i][keep].tolist()
            diagnostics.append(rec)
    confusion = confusion_from_pairs(
        np.concatenate(labels_all), np.concatenate(preds_all)
    )
    mean_loss = loss_sum / max(n_batches, 1)
    return confusion, mean_loss, diagnostics


def run_fold(
    variant: str,
    dataset,
    fold: tuple[np.ndarray, np.ndarray],
    cfg: RunConfig,
    out_dir: str | Path | None = None,
    epochs: int | None = None,
    quiet: bool = True,
) -> tuple[FoldReport, TrainState]:
    """Train one variant on one fold and evaluate its best checkpoint."""
    train_idx, test_idx = fold
    tcfg = cfg.training
    epochs = tcfg.epochs if epochs is None else epochs
    seed_everything(cfg.seed)

    labels = dataset.labels
    train_idx, val_idx = stratified_holdout(labels, train_idx, tcfg.val_fraction, cfg.seed)
    counts = np.bincount(labels[train_idx], minlength=N_CLASSES)
    weights = torch.from_numpy(class_weights(counts)).float()

    n_steps = int(dataset[0]["step_mask"].shape[-1])
    model = build_model(cfg, variant, n_steps)
    optimizer = torch.optim.Adam(
        (p for p in model.parameters() if p.requires_grad), lr=tcfg.lr
    )
    scheduler = PlateauScheduler(
        tcfg.lr, tcfg.plateau_factor, tcfg.plateau_patience, tcfg.min_lr
    )
    stopper = EarlyStopper(tcfg.early_stop_patience, tcfg.min_delta)
    state = TrainState(lr=tcfg.lr)
    state.best_state = copy.deepcopy(model.state_dict())  # fallback: init weights

    loader_gen = torch.Generator()
    loader_gen.manual_seed(cfg.seed)

    for epoch in range(epochs):
        model.train()
        train_loader = _loader(dataset, train_idx, cfg, shuffle=True, generator=loader_gen)
        epoch_loss, n_train_batches = 0.0, 0
        for batch in train_loader:
            optimizer.zero_grad()
            out = model(batch)
            loss = weighted_ce(out["logits"], batch["label"], weights)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"fold diverged: non-finite loss at epoch {epoch} "
                    f"(variant={variant}, lr={scheduler.lr:g})"
                )
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss)
            n_train_batches += 1
        state.train_loss_history.append(epoch_loss / max(n_train_batches, 1))

        val_conf, val_loss, _ = evaluate_model(model, dataset, val_idx, cfg, weights)
        val_f1 = compute_metrics(val_conf).macro_f1
        state.epoch = epoch + 1
        state.consider_checkpoint(val_f1, val_loss, model)
        state.lr = scheduler.step(val_loss)
        for group in optimizer.param_groups:
            group["lr"] = state.lr
        if not quiet:
            print(
                f"epoch {epoch + 1:3d}  val_loss {val_loss:.4f}  "
                f"val_f1 {val_f1:.4f}  lr {state.lr:g}"
            )
        if stopper.step(val_f1):
            break

    model.load_state_dict(state.best_state)
    test_conf, _, diagnostics = evaluate_model(model, dataset, test_idx, cfg)
    report = compute_metrics(test_conf)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt = out_dir / "checkpoint.pt"
        torch.save(
            {"model_state": state.best_state, "variant": variant, "config": cfg.to_json()},
            ckpt,
        )
        state.checkpoint_path = str(ckpt)
        (out_dir / "report.json").write_text(report.to_json())
        (out_dir / "diagnostics.json").write_text(json.dumps(diagnostics, indent=2))
    return report, state


def run_cv(
    variant: str,
    dataset,
    cfg: RunConfig,
    out_dir: str | Path | None = None,
    epochs: int | None = None,
    folds: int | None = None,
    quiet: bool = True,
) -> dict:
    """Stratified k-fold protocol; per-fold reports plus mean +- std summary."""
    k = folds if folds is not None else cfg.training.folds
    partitions = stratified_kfold(dataset.labels, k=k, seed=cfg.seed)
    reports = []
    for f, fold in enumerate(partitions):
        fold_dir = None if out_dir is None else Path(out_dir) / f"fold_{f}"
        report, _ = run_fold(variant, dataset, fold, cfg, fold_dir, epochs, quiet)
        reports.append(report)

    summary = aggregate_reports(reports)
    result = {
        "variant": variant,
        "folds": [r.to_dict() for r in reports],
        "summary": summary,
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        cfg.save(out_dir / "config.json")
        (out_dir / "cv_report.json").write_text(json.dumps(result, indent=2, sort_keys=True))
        (out_dir / "cv_report.txt").write_text(render_cv_table(variant, reports, summary))
    return result


def aggregate_reports(reports: list[FoldReport]) -> dict:
    metrics = {
        name: np.array([getattr(r, name) for r in reports])
        for name in ("accuracy", "macro_precision", "macro_recall", "macro_f1")
    }
    return {
        name: {"mean": float(vals.mean()), "std": float(vals.std(ddof=0))}
        for name, vals in metrics.items()
    }


def render_cv_table(variant: str, reports: list[FoldReport], summary: dict) -> str:
    lines = [
        f"variant: {variant}",
        f"{'fold':>6} {'accuracy':>10} {'macro_prec':>11} {'macro_rec':>10} {'macro_f1':>9}",
    ]
    for i, r in enumerate(reports, start=1):
        lines.append(
            f"{i:>6} {r.accuracy:>10.4f} {r.macro_precision:>11.4f} "
            f"{r.macro_recall:>10.4f} {r.macro_f1:>9.4f}"
        )
    acc, f1 = summary["accuracy"], summary["macro_f1"]
    prec, rec = summary["macro_precision"], summary["macro_recall"]
    lines.append(
        f"{'mean':>6} {acc['mean']:>10.4f} {prec['mean']:>11.4f} "
        f"{rec['mean']:>10.4f} {f1['mean']:>9.4f}"
    )
    lines.append(
        f"{'std':>6} {acc['std']:>10.4f} {prec['std']:>11.4f} "
        f"{rec['std']:>10.4f} {f1['std']:>9.4f}"
    )
    return "\n".join(lines) + "\n"
