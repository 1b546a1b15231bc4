"""Training and evaluation loops.

One training step: augment -> rescale -> forward -> sparse categorical
cross-entropy -> backward -> optimizer update of the optimizable tensors.
Validation and prediction rescale only and run batch norm in inference
mode.  Augmentation draws come from a generator seeded with
``(seed, epoch, batch_index)``, so runs are reproducible.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import metrics
from .augment import AugmentConfig, augment_batch, rescale
from .checkpoint import save_checkpoint
from .dataset import BatchPlan, ImageSet, batches, decode_image, resize
from .errors import NumericError, SpecError, UsageError
from .nn import Network, ParameterStore
from .optim import Schedule, scce_loss, step
from .tensor import Tape, Tensor, backward, no_tape

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: Optional[int] = None  # defaults to the schedule total
    batch_size: int = 32
    seed: int = 0
    schedule: Schedule = field(default_factory=lambda: Schedule.of(("adam", 5)))
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    eval_every_epoch: bool = True
    checkpoint_path: Optional[Path] = None

    def __post_init__(self):
        if self.epochs is None:
            self.epochs = self.schedule.total_epochs
        if self.epochs not in (0, self.schedule.total_epochs):
            raise SpecError(f"epochs={self.epochs} but the schedule covers {self.schedule.total_epochs}")
        if self.batch_size < 1:
            raise SpecError("batch_size must be >= 1")


class Callback:
    """Hooks for instrumentation; override what you need."""

    def on_segment_start(self, epoch: int, segment, state, store: ParameterStore) -> None:
        pass

    def on_epoch_end(self, epoch: int, record: metrics.EpochRecord, state, store: ParameterStore) -> None:
        pass


@dataclass
class FitResult:
    history: metrics.History
    checkpoint: Optional[Path]


@dataclass
class EvalResult:
    loss: float
    accuracy: float
    report: metrics.ClassReport
    confusion: np.ndarray
    roc: metrics.RocResult
    probs: np.ndarray
    labels: np.ndarray

    def top_k(self, k: int) -> float:
        return metrics.top_k_accuracy(self.probs, self.labels, k)


def _train_epoch(network: Network, params, state, train_set: ImageSet, cfg: TrainConfig, epoch: int):
    plan = BatchPlan(cfg.batch_size, shuffle=True, seed=cfg.seed)
    total_loss = 0.0
    correct = seen = 0
    tape = Tape()
    for b, (images, labels) in enumerate(batches(train_set, plan, epoch)):
        rng = np.random.default_rng([cfg.seed, epoch, b])
        x = Tensor(rescale(augment_batch(images, cfg.augment, rng)))
        tape.clear()
        try:
            with tape:
                probs = network.forward(x, training=True)
                loss = scce_loss(probs, labels)
            backward(loss, tape, params)
            step(state, params)
        except NumericError as exc:
            raise NumericError(f"epoch {epoch}, batch {b}: {exc}") from exc
        n = len(labels)
        total_loss += loss.item() * n
        correct += int(np.sum(np.argmax(probs.data, axis=1) == labels))
        seen += n
    tape.clear()
    return total_loss / seen, correct / seen


def fit(network: Network, store: ParameterStore, train_set: ImageSet, val_set: Optional[ImageSet],
        cfg: TrainConfig, callbacks: Sequence[Callback] = (), metadata: Optional[dict] = None) -> FitResult:
    """Train per ``cfg.schedule``; a fresh optimizer state starts every segment."""
    if len(train_set) == 0:
        raise UsageError("training set is empty")
    if val_set is not None:
        overlap = {s.path for s in train_set.samples} & {s.path for s in val_set.samples}
        if overlap:
            raise UsageError(f"train and validation sets share {len(overlap)} samples")
    params = store.optimizable()
    history = metrics.History()
    segment_idx, state = None, None
    for epoch in range(1, cfg.epochs + 1):
        idx = cfg.schedule.segment_index(epoch)
        if idx != segment_idx:
            segment_idx = idx
            segment = cfg.schedule.segments[idx]
            state = segment.new_state()
            for cb in callbacks:
                cb.on_segment_start(epoch, segment, state, store)
        start = time.perf_counter()
        train_loss, train_acc = _train_epoch(network, params, state, train_set, cfg, epoch)
        if val_set is not None and cfg.eval_every_epoch:
            ev = evaluate(network, val_set, batch_size=cfg.batch_size)
            val_loss, val_acc = ev.loss, ev.accuracy
        else:
            val_loss = val_acc = float("nan")
        record = metrics.EpochRecord(epoch, state.kind, train_loss, train_acc, val_loss, val_acc,
                                     time.perf_counter() - start)
        history.append(record)
        logger.info("epoch %d [%s] loss=%.4f acc=%.4f val_loss=%.4f val_acc=%.4f (%.1fs)", epoch, state.kind,
                    train_loss, train_acc, val_loss, val_acc, record.seconds)
        for cb in callbacks:
            cb.on_epoch_end(epoch, record, state, store)

    ckpt = None
    if cfg.checkpoint_path is not None:
        meta = dict(metadata or {})
        meta["train"] = {"seed": cfg.seed, "batch_size": cfg.batch_size, "epochs": cfg.epochs,
                         "schedule": cfg.schedule.to_list(), "augment": cfg.augment.to_dict()}
        meta["history"] = [[r.epoch, r.optimizer, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy]
                           for r in history]
        ckpt = save_checkpoint(cfg.checkpoint_path, network, meta)
    return FitResult(history, ckpt)


def predict_proba(network: Network, images: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Probabilities for (N, H, W, 3) images in [0, 255]; inference mode, no tape."""
    out = []
    with no_tape():
        for start in range(0, len(images), batch_size):
            x = Tensor(rescale(images[start:start + batch_size]))
            out.append(network.forward(x, training=False).data)
    return np.concatenate(out)


def evaluate(network: Network, dataset: ImageSet, batch_size: int = 32,
             class_names: Optional[Sequence[str]] = None) -> EvalResult:
    """Loss, accuracy and the full metric set; never mutates the network."""
    if len(dataset) == 0:
        raise UsageError("cannot evaluate an empty set")
    plan = BatchPlan(batch_size, shuffle=False)
    probs, labels = [], []
    total_loss = 0.0
    with no_tape():
        for images, y in batches(dataset, plan):
            p = network.forward(Tensor(rescale(images)), training=False)
            total_loss += scce_loss(p, y).item() * len(y)
            probs.append(p.data)
            labels.append(y)
    probs = np.concatenate(probs)
    labels = np.concatenate(labels)
    k = network.spec.num_classes
    cm = metrics.confusion(labels, np.argmax(probs, axis=1), k)
    report = metrics.class_report(cm, class_names)
    roc = metrics.roc_auc(probs, labels)
    return EvalResult(total_loss / len(labels), report.accuracy, report, cm, roc, probs, labels)


def predict(network: Network, image_path, class_names: Sequence[str]) -> tuple[str, np.ndarray, float]:
    """Classify one image file: ``(class_name, probabilities, elapsed_seconds)``."""
    start = time.perf_counter()
    h, w, _ = network.spec.input_size
    img = resize(decode_image(image_path), (h, w))
    probs = predict_proba(network, img[None])[0]
    elapsed = time.perf_counter() - start
    return class_names[int(np.argmax(probs))], probs, elapsed
