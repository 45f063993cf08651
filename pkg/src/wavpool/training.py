"""Seeded mini-batch training with early stopping, evaluation and trial aggregation."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import LabeledDataset, SplitSpec, subset_split
from .errors import ConfigError, DivergenceError
from .metrics import accuracy, aggregate, confusion, f1_macro, roc_auc_macro
from .models import build_model, config_to_dict
from .nn import (
    OptimizerConfig,
    load_state_dict,
    make_optimizer,
    param_count,
    softmax,
    softmax_xent,
    state_dict,
)
from .tensor import SeededRng

log = logging.getLogger(__name__)

METRIC_KEYS = ("loss", "accuracy", "roc_auc", "f1")


@dataclass
class TrainConfig:
    max_epochs: int = 120
    patience: int | None = 5
    batch_size: int = 64
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerConfig(**self.optimizer)
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.patience is not None and not 1 <= self.patience < self.max_epochs:
            raise ConfigError(f"patience {self.patience} must lie in [1, max_epochs)")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    final: dict = field(default_factory=dict)
    confusion: list = field(default_factory=list)
    param_count: int = 0
    train_wall_seconds: float = 0.0
    single_inference_seconds: float = 0.0
    stopped_epoch: int = 0
    best_epoch: int = 0
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def curves(self) -> dict:
        return {k: getattr(self, k) for k in ("train_loss", "val_loss", "train_acc", "val_acc")}

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainReport":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})

    def write(self, directory, stem: str = "report"):
        """``<stem>.json`` (full), ``<stem>_curves.csv`` and ``<stem>_confusion.csv``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / f"{stem}.json").write_text(json.dumps(self.to_dict(), indent=2))
        with open(directory / f"{stem}_curves.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "train_loss", "val_loss", "train_acc", "val_acc"])
            for i, row in enumerate(zip(self.train_loss, self.val_loss, self.train_acc, self.val_acc), 1):
                w.writerow([i, *(repr(float(v)) for v in row)])
        with open(directory / f"{stem}_confusion.csv", "w", newline="") as f:
            csv.writer(f).writerows(self.confusion)


def predict(model, images, batch_size: int = 256):
    """Eval-mode logits for a stack of images."""
    out = [model.forward(images[i : i + batch_size], training=False) for i in range(0, len(images), batch_size)]
    return np.concatenate(out)


def evaluate(model, ds: LabeledDataset, num_classes: int | None = None, batch_size: int = 256) -> dict:
    logits = predict(model, ds.images, batch_size)
    loss, _ = softmax_xent(logits, ds.labels)
    probs = softmax(logits)
    preds = probs.argmax(axis=1)
    k = num_classes or logits.shape[1]
    result = {
        "loss": loss,
        "accuracy": accuracy(preds, ds.labels),
        "f1": f1_macro(preds, ds.labels, k),
        "confusion": confusion(preds, ds.labels, k),
    }
    try:
        result["roc_auc"] = roc_auc_macro(probs, ds.labels)
    except ValueError:
        result["roc_auc"] = float("nan")
    return result


def _epoch(model, optimizer, ds: LabeledDataset, batch_size: int, rng: SeededRng):
    order = rng.permutation(len(ds))
    total_loss, correct, seen = 0.0, 0, 0
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        if len(idx) < 2:
            continue
        xb, yb = ds.images[idx], ds.labels[idx]
        logits = model.forward(xb, training=True)
        loss, d_logits = softmax_xent(logits, yb)
        if not np.isfinite(loss):
            return float("nan"), 0.0
        model.backward(d_logits)
        optimizer.step()
        total_loss += loss * len(idx)
        correct += int(np.sum(logits.argmax(axis=1) == yb))
        seen += len(idx)
    return total_loss / seen, correct / seen


def train(model, train_ds: LabeledDataset, val_ds: LabeledDataset, cfg: TrainConfig,
          num_classes: int | None = None, restore_best: bool = True) -> TrainReport:
    """Train until ``patience`` epochs pass without a new best validation loss.

    Unless ``restore_best`` is off, the best-validation-loss weights are
    restored before the final metrics are computed. ``patience=None``
    disables early stopping.
    """
    for p in model.params():
        p.zero_grad()
    optimizer = make_optimizer(model.params(), cfg.optimizer)
    rng = SeededRng(cfg.seed, stream=3)
    report = TrainReport(param_count=param_count(model), seed=cfg.seed)
    best_loss, best_state, wait = np.inf, None, 0
    t0 = time.perf_counter()
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for epoch in range(1, cfg.max_epochs + 1):
            tr_loss, tr_acc = _epoch(model, optimizer, train_ds, cfg.batch_size, rng)
            if not np.isfinite(tr_loss):
                raise DivergenceError(epoch, cfg.optimizer.learning_rate)
            val = evaluate(model, val_ds, num_classes)
            if not np.isfinite(val["loss"]):
                raise DivergenceError(epoch, cfg.optimizer.learning_rate)
            report.train_loss.append(tr_loss)
            report.train_acc.append(tr_acc)
            report.val_loss.append(val["loss"])
            report.val_acc.append(val["accuracy"])
            log.debug("epoch %d train_loss %.4f val_loss %.4f val_acc %.4f",
                      epoch, tr_loss, val["loss"], val["accuracy"])
            if val["loss"] < best_loss:
                best_loss, best_state, wait = val["loss"], state_dict(model), 0
                report.best_epoch = epoch
            else:
                wait += 1
            report.stopped_epoch = epoch
            if cfg.patience is not None and wait >= cfg.patience:
                break
    report.train_wall_seconds = time.perf_counter() - t0
    if restore_best:
        load_state_dict(model, best_state)

    final = evaluate(model, val_ds, num_classes)
    report.confusion = final.pop("confusion").tolist()
    report.final = {k: float(v) for k, v in final.items()}
    report.single_inference_seconds = single_inference_time(model, val_ds.images[:1])
    return report


def single_inference_time(model, image, repeats: int = 20) -> float:
    model.forward(image, training=False)
    t0 = time.perf_counter()
    for _ in range(repeats):
        model.forward(image, training=False)
    return (time.perf_counter() - t0) / repeats


def run_trial(arch: str, model_cfg, dataset: LabeledDataset, train_cfg: TrainConfig,
              n_train: int = 4000, n_val: int = 2000, restore_best: bool = True) -> TrainReport:
    """One seeded trial: the seed fixes the data subset, the weights and the batch order."""
    train_ds, val_ds = subset_split(dataset, SplitSpec(train_cfg.seed, n_train, n_val))
    model = build_model(arch, model_cfg, train_cfg.seed)
    report = train(model, train_ds, val_ds, train_cfg, getattr(model_cfg, "num_classes", None),
                   restore_best)
    report.meta = {"arch": arch, "dataset": dataset.name, "source_digest": dataset.source_digest,
                   "model_config": config_to_dict(model_cfg),
                   "train_config": asdict(train_cfg)}
    report.model = model
    return report


def run_trials(arch: str, model_cfg, dataset: LabeledDataset, train_cfg: TrainConfig,
               seeds=(0, 1, 2), n_train: int = 4000, n_val: int = 2000) -> dict:
    """Per-seed reports plus mean/spread of each final metric."""
    seeds = list(seeds)
    if len(set(seeds)) != len(seeds):
        raise ConfigError(f"trial seeds must be distinct, got {seeds}")
    reports = []
    for seed in seeds:
        cfg = TrainConfig(train_cfg.max_epochs, train_cfg.patience, train_cfg.batch_size,
                          train_cfg.optimizer, seed)
        try:
            reports.append(run_trial(arch, model_cfg, dataset, cfg, n_train, n_val))
        except DivergenceError as exc:
            raise DivergenceError(exc.epoch, exc.learning_rate, f"seed {seed}: {exc}") from exc
    return {"arch": arch, "dataset": dataset.name, "reports": reports,
            "aggregate": aggregate_reports(reports)}


def aggregate_reports(reports) -> dict:
    out = {}
    for key in METRIC_KEYS:
        out[key] = aggregate([r.final[key] for r in reports])
    out["param_count"] = reports[0].param_count
    out["train_wall_seconds"] = aggregate([r.train_wall_seconds for r in reports])
    out["single_inference_seconds"] = aggregate([r.single_inference_seconds for r in reports])
    return out


def format_row(name: str, agg: dict, keys=("roc_auc", "accuracy")) -> str:
    """Table row in ``mean±spread`` form."""
    cells = [f"{agg[k]['mean']:.3f}±{agg[k]['spread']:.3f}" for k in keys]
    return " | ".join([name, str(agg["param_count"]), *cells])
