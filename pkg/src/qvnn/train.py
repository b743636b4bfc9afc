"""Regularized mini-batch training and evaluation."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .autograd import loss_and_grads
from .data import PIXEL_SCALE
from .errors import ContractError, DataError
from .optim import AdamState, adam_step
from .regularizers import RegConfig, regularizer, sparsity_report

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "epoch", "train_loss", "test_acc", "component_sparsity", "quaternion_sparsity", "neuron_sparsity", "wall_seconds",
)


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    reg: RegConfig = field(default_factory=RegConfig)
    seed: int = 0
    dropout: float = 0.2
    subset: int | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ContractError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ContractError("batch size must be >= 1")
        if self.lr <= 0:
            raise ContractError("learning rate must be positive")


def evaluate(model, dataset, batch_size=500) -> float:
    """Fraction of samples whose highest score is the true class (inference mode)."""
    n = len(dataset)
    if n == 0:
        return 0.0
    correct = 0
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(n, start + batch_size))
        scores = model.forward(dataset.batch(idx), training=False)
        correct += int((scores.argmax(axis=1) == dataset.labels[idx]).sum())
    return correct / n


class MetricsWriter:
    """Appends one CSV row per epoch and flushes it immediately."""

    def __init__(self, path, meta=None):
        self._fh = open(path, "w", newline="")
        if meta:
            self._fh.write("# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(CSV_COLUMNS)
        self._fh.flush()

    def write(self, m):
        self._w.writerow([
            m["epoch"], f"{m['train_loss']:.8f}", f"{m['test_acc']:.6f}", f"{m['component_sparsity']:.6f}",
            f"{m['quaternion_sparsity']:.6f}", f"{m['neuron_sparsity']:.6f}", f"{m['wall_seconds']:.3f}",
        ])
        self._fh.flush()

    def close(self):
        self._fh.close()


def csv_metadata(config: TrainConfig, model):
    return {
        "preset": model.name,
        "reg": config.reg.kind,
        "lambda": config.reg.lam,
        "threshold": config.reg.threshold,
        "seed": config.seed,
        "pixel_scaling": f"x/{PIXEL_SCALE:g}",
    }


def train(model, train_set, config: TrainConfig, test_set=None, metrics_csv=None, record_time=True, on_epoch=None):
    """Minimize mean cross-entropy plus ``lambda * r(theta)`` with mini-batch Adam.

    One seeded generator drives shuffling and dropout, so a fixed seed gives
    bit-identical runs.  Returns ``(model, metrics)`` with one dict per epoch.
    """
    if len(train_set) == 0:
        raise DataError("training set is empty")
    if train_set.labels.max() >= model.num_classes or train_set.labels.min() < 0:
        raise DataError(f"training labels outside [0, {model.num_classes})")
    for d in model.dropouts():
        d.p = config.dropout
    rng = np.random.default_rng(config.seed)
    opt = AdamState(lr=config.lr)
    params = model.parameters()
    lam, kind = config.reg.lam, config.reg.kind
    use_reg = lam > 0 and kind != "none"
    writer = MetricsWriter(metrics_csv, csv_metadata(config, model)) if metrics_csv else None
    metrics = []
    n = len(train_set)
    try:
        for epoch in range(1, config.epochs + 1):
            t0 = time.perf_counter()
            order = rng.permutation(n)
            loss_sum = obj_sum = 0.0
            batches = 0
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                loss, grads = loss_and_grads(model, train_set.batch(idx), train_set.labels[idx], rng)
                obj = loss
                if use_reg:
                    penalty, rgrads = regularizer(model, kind)
                    grads.add_(rgrads, lam)
                    obj += lam * penalty
                adam_step(opt, params, grads)
                loss_sum += loss
                obj_sum += obj
                batches += 1
            wall = time.perf_counter() - t0 if record_time else 0.0
            rep = sparsity_report(model, config.reg.threshold)
            acc = evaluate(model, test_set) if test_set is not None else float("nan")
            m = {
                "epoch": epoch,
                "train_loss": loss_sum / batches,
                "objective": obj_sum / batches,
                "test_acc": acc,
                "component_sparsity": rep.component_sparsity,
                "quaternion_sparsity": rep.quaternion_sparsity,
                "neuron_sparsity": rep.neuron_sparsity,
                "wall_seconds": wall,
            }
            metrics.append(m)
            log.info(
                "epoch %d loss %.4f acc %.4f qsp %.4f nsp %.4f (%.1fs)",
                epoch, m["train_loss"], acc, m["quaternion_sparsity"], m["neuron_sparsity"], wall,
            )
            if writer:
                writer.write(m)
            if on_epoch:
                on_epoch(m)
    finally:
        if writer:
            writer.close()
    return model, metrics
