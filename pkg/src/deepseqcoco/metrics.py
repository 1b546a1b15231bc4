"""Evaluation metrics and the on-disk report artifacts.

Confusion matrices are indexed ``[actual, predicted]``.  Precision or
recall with an empty denominator is reported as 0 and flagged.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, UsageError


def _as_array(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x))


def confusion(y_true, y_pred, num_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise DataError(f"label arrays differ in shape: {y_true.shape} vs {y_pred.shape}")
    for name, arr in (("y_true", y_true), ("y_pred", y_pred)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise DataError(f"{name} has labels outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def accuracy(cm: np.ndarray) -> float:
    total = cm.sum()
    return float(np.trace(cm) / total) if total else 0.0


@dataclass
class ClassReport:
    class_names: list
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    accuracy: float
    zero_division: list = field(default_factory=list)  # (class, metric) pairs that hit 0/0

    @property
    def macro(self) -> dict:
        return {
            "precision": float(self.precision.mean()),
            "recall": float(self.recall.mean()),
            "f1": float(self.f1.mean()),
        }


def _ratio(num, den):
    return num / den if den else 0.0


def class_report(cm: np.ndarray, class_names: Optional[Sequence[str]] = None) -> ClassReport:
    cm = np.asarray(cm)
    k = cm.shape[0]
    names = list(class_names) if class_names is not None else [str(i) for i in range(k)]
    tp = np.diag(cm).astype(np.float64)
    colsum = cm.sum(axis=0)
    rowsum = cm.sum(axis=1)
    precision = np.array([_ratio(tp[i], colsum[i]) for i in range(k)])
    recall = np.array([_ratio(tp[i], rowsum[i]) for i in range(k)])
    f1 = np.array([_ratio(2 * p * r, p + r) for p, r in zip(precision, recall)])
    flags = [(names[i], "precision") for i in range(k) if colsum[i] == 0]
    flags += [(names[i], "recall") for i in range(k) if rowsum[i] == 0]
    return ClassReport(names, precision, recall, f1, rowsum.astype(np.int64), accuracy(cm), flags)


def top_k_accuracy(probs, y_true, k: int) -> float:
    """Share of rows whose true class is among the ``k`` best; equal scores rank lower index first."""
    probs = _as_array(probs)
    y_true = np.asarray(y_true, dtype=np.int64)
    if not 1 <= k <= probs.shape[1]:
        raise UsageError(f"k must lie in [1, {probs.shape[1]}], got {k}")
    ranked = np.argsort(-probs, axis=1, kind="stable")[:, :k]
    return float(np.mean(np.any(ranked == y_true[:, None], axis=1)))


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float
    defined: bool = True


@dataclass
class RocResult:
    curves: list  # one RocCurve per class
    macro_auc: float


def roc_curve(scores: np.ndarray, positive: np.ndarray) -> RocCurve:
    """Binary ROC, sweeping the threshold over every distinct score (``score >= t`` is positive)."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return RocCurve(np.array([0.0, 1.0]), np.array([0.0, 1.0]), float("nan"), defined=False)
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    pos = positive[order]
    tps = np.cumsum(pos)
    fps = np.cumsum(~pos)
    # keep the last index of every run of equal scores
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tpr = np.r_[0.0, tps[last] / n_pos]
    fpr = np.r_[0.0, fps[last] / n_neg]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
    return RocCurve(fpr, tpr, auc)


def roc_auc(scores, y_true) -> RocResult:
    """One-vs-rest ROC per class; macro AUC averages the classes present in ``y_true``."""
    scores = _as_array(scores)
    y_true = np.asarray(y_true, dtype=np.int64)
    curves = [roc_curve(scores[:, k], y_true == k) for k in range(scores.shape[1])]
    defined = [c.auc for c in curves if c.defined]
    return RocResult(curves, float(np.mean(defined)) if defined else float("nan"))


@dataclass
class EpochRecord:
    epoch: int
    optimizer: str
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float
    seconds: float


@dataclass
class History:
    records: list = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.records]


# --- report files ------------------------------------------------------------

def fmt(x) -> str:
    """Six significant digits, the float format of every CSV column."""
    return f"{float(x):.6g}"


HISTORY_COLUMNS = ("epoch", "optimizer", "train_loss", "train_accuracy", "val_loss", "val_accuracy")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_history_csv(history: History, path) -> None:
    """Deterministic per-epoch metrics; wall-clock times go to a separate file."""
    _write_csv(Path(path), HISTORY_COLUMNS,
               [[r.epoch, r.optimizer, fmt(r.train_loss), fmt(r.train_accuracy), fmt(r.val_loss),
                 fmt(r.val_accuracy)] for r in history])


def write_timing_csv(history: History, path) -> None:
    _write_csv(Path(path), ("epoch", "seconds"), [[r.epoch, f"{r.seconds:.3f}"] for r in history])


def format_class_report(report: ClassReport) -> str:
    """Fixed-width table: class name, precision, recall, F1-score, support."""
    width = max(len("Class Name"), *(len(n) for n in report.class_names))
    lines = [f"{'Class Name':<{width}}  Precision  Recall  F1-Score  Support"]
    for i, name in enumerate(report.class_names):
        lines.append(f"{name:<{width}}  {report.precision[i]:>9.2f}  {report.recall[i]:>6.2f}  "
                     f"{report.f1[i]:>8.2f}  {report.support[i]:>7d}")
    macro = report.macro
    lines.append(f"{'macro avg':<{width}}  {macro['precision']:>9.2f}  {macro['recall']:>6.2f}  "
                 f"{macro['f1']:>8.2f}  {int(report.support.sum()):>7d}")
    lines.append(f"{'accuracy':<{width}}  {'':>9}  {'':>6}  {report.accuracy:>8.2f}  {int(report.support.sum()):>7d}")
    return "\n".join(lines) + "\n"


def _num(x):
    x = float(x)
    return None if np.isnan(x) else float(fmt(x))


def report_dict(report: ClassReport, loss: Optional[float], roc: Optional[RocResult] = None,
                top_k: Optional[dict] = None) -> dict:
    per_class = {}
    for i, name in enumerate(report.class_names):
        per_class[name] = {
            "precision": _num(report.precision[i]),
            "recall": _num(report.recall[i]),
            "f1": _num(report.f1[i]),
            "support": int(report.support[i]),
        }
        if roc is not None:
            per_class[name]["auc"] = _num(roc.curves[i].auc)
    return {
        "accuracy": _num(report.accuracy),
        "loss": None if loss is None else _num(loss),
        "per_class": per_class,
        "macro": {k: _num(v) for k, v in report.macro.items()},
        "auc_macro": None if roc is None else _num(roc.macro_auc),
        "top_k_accuracy": {str(k): _num(v) for k, v in (top_k or {}).items()},
        "zero_division": [list(f) for f in report.zero_division],
    }


def emit_report(report: ClassReport, history: Optional[History], cm: np.ndarray, roc: Optional[RocResult],
                out_dir, loss: Optional[float] = None, top_k: Optional[dict] = None) -> list[Path]:
    """Write report.json, classification_report.txt and the CSV files; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "report.json"
    path.write_text(json.dumps(report_dict(report, loss, roc, top_k), indent=2) + "\n", encoding="utf-8")
    written.append(path)

    path = out / "classification_report.txt"
    path.write_text(format_class_report(report), encoding="utf-8")
    written.append(path)

    path = out / "confusion_matrix.csv"
    _write_csv(path, ["actual\\predicted", *report.class_names],
               [[name, *map(int, cm[i])] for i, name in enumerate(report.class_names)])
    written.append(path)

    path = out / "per_class.csv"
    _write_csv(path, ["class", "precision", "recall", "f1", "support"],
               [[name, fmt(report.precision[i]), fmt(report.recall[i]), fmt(report.f1[i]), int(report.support[i])]
                for i, name in enumerate(report.class_names)])
    written.append(path)

    if roc is not None:
        path = out / "roc.csv"
        rows = []
        for name, curve in zip(report.class_names, roc.curves):
            if curve.defined:
                rows.extend([name, fmt(f), fmt(t)] for f, t in zip(curve.fpr, curve.tpr))
        _write_csv(path, ["class", "fpr", "tpr"], rows)
        written.append(path)

    if history is not None:
        path = out / "history.csv"
        write_history_csv(history, path)
        written.append(path)
    return written
