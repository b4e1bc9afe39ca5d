"""Mini-batch SGD-with-momentum training and fine-tuning loops.

Everything is deterministic given (model init seed, dataset, config seed):
shuffling uses a dedicated generator, batches are visited in a fixed order,
and gradients are reduced in a fixed order inside each batch.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import layers as L
from .models import (
    Checkpoint,
    Model,
    batch_loss_and_grads,
    fingerprint,
    forward_batch,
    restore_for_transfer,
)
from .waveforms import Dataset, split

CONVERGENCE_BAND = 0.05
CONVERGENCE_TAIL_FRACTION = 0.10


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    validation_fraction: float = 0.25
    freeze_conv: bool = False
    early_stop: tuple[int, float] | None = None  # (patience, min_delta)

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if not (0.0 < self.validation_fraction < 1.0):
            raise ValueError("validation_fraction must lie strictly between 0 and 1")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    seconds: float


@dataclass
class TrainingRun:
    records: list[EpochRecord]
    model: Model
    config: TrainConfig
    convergence_epoch: int = 0

    def to_csv(self, path=None) -> str:
        """Plot-ready curves.  Wall-clock timing is kept out of the CSV so
        that repeated runs with the same seeds produce identical bytes."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss", "val_accuracy"])
        for r in self.records:
            writer.writerow(
                [r.epoch, f"{r.train_loss:.12g}", f"{r.val_loss:.12g}",
                 f"{r.val_accuracy:.12g}"]
            )
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def detect_convergence(records: list[EpochRecord]) -> int:
    """First epoch whose validation loss is within 5% of the terminal level.

    The terminal level is the median validation loss over the last 10% of
    epochs (at least one).
    """
    if len(records) < 2:
        raise ValueError("need at least 2 epoch records")
    losses = [r.val_loss for r in records]
    tail = max(1, int(np.ceil(CONVERGENCE_TAIL_FRACTION * len(losses))))
    steady = float(np.median(losses[-tail:]))
    band = CONVERGENCE_BAND * steady
    for r, loss in zip(records, losses):
        if abs(loss - steady) <= band:
            return r.epoch
    return records[-1].epoch


def _updatable_layers(model: Model, freeze_conv: bool) -> list[int]:
    idx = []
    for i, layer in enumerate(model.layer_list):
        if freeze_conv and isinstance(layer, L.ConvLayer):
            continue
        idx.append(i)
    return idx


def train(model: Model, dataset: Dataset, config: TrainConfig) -> TrainingRun:
    """SGD with momentum over seeded shuffled mini-batches.

    The dataset is split internally into train/validation portions
    (stratified, seeded from config.seed); records carry per-epoch losses.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    work = model.copy()
    train_set, val_set = split(dataset, 1.0 - config.validation_fraction, config.seed)
    x_train, y_train = train_set.to_arrays()
    x_val, y_val = val_set.to_arrays()
    n = len(y_train)

    shuffle_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5D]))
    update_idx = _updatable_layers(work, config.freeze_conv)
    velocity = {
        i: (np.zeros_like(work.layer_list[i].weights), np.zeros_like(work.layer_list[i].bias))
        for i in update_idx
    }

    records: list[EpochRecord] = []
    best_val = np.inf
    best_params = None
    stale = 0
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for bi, lo in enumerate(range(0, n, config.batch_size)):
            sel = order[lo : lo + config.batch_size]
            try:
                loss, grads, _ = batch_loss_and_grads(work, x_train[sel], y_train[sel])
            except FloatingPointError as exc:
                raise DivergenceError(epoch, bi) from exc
            if not np.isfinite(loss):
                raise DivergenceError(epoch, bi)
            loss_sum += loss * sel.size
            for i in update_idx:
                layer = work.layer_list[i]
                v_w, v_b = velocity[i]
                d_w, d_b = grads[i]
                v_w *= config.momentum
                v_w -= config.learning_rate * d_w
                v_b *= config.momentum
                v_b -= config.learning_rate * d_b
                layer.weights += v_w
                layer.bias += v_b
        train_loss = loss_sum / n
        try:
            val_probs = forward_batch(work, x_val)
        except FloatingPointError as exc:
            raise DivergenceError(epoch, -1) from exc
        val_loss = L.bce_loss(val_probs, y_val)
        if not np.isfinite(val_loss):
            raise DivergenceError(epoch, -1)
        val_acc = float(np.mean((val_probs > 0.5) == (y_val > 0.5)))
        records.append(
            EpochRecord(epoch, train_loss, val_loss, val_acc, time.perf_counter() - start)
        )
        if config.early_stop is not None:
            patience, min_delta = config.early_stop
            if val_loss < best_val - min_delta:
                best_val = val_loss
                best_params = work.flat_parameters()
                stale = 0
            else:
                stale += 1
                if stale >= patience:
                    break

    # early stopping keeps the weights from the best validation epoch
    if best_params is not None:
        work.set_flat_parameters(best_params)

    run = TrainingRun(records, work, config)
    if len(records) >= 2:
        run.convergence_epoch = detect_convergence(records)
    elif records:
        run.convergence_epoch = records[0].epoch
    return run


def fine_tune(checkpoint: Checkpoint, target_dataset: Dataset, config: TrainConfig) -> TrainingRun:
    """Same loop as train, but warm-started from a checkpoint."""
    spec = checkpoint.spec
    if fingerprint(spec) != checkpoint.fingerprint:
        raise ValueError("checkpoint spec/fingerprint mismatch")
    model = restore_for_transfer(checkpoint, spec)
    return train(model, target_dataset, config)
