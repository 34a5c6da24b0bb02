"""Threshold-sweep precision/recall, max F-beta and MAE."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .tensor import ShapeError, Tensor

BETA_SQ = 0.3
THRESHOLDS = np.arange(256)


def _array(x) -> np.ndarray:
    a = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    return np.squeeze(a) if a.ndim > 2 else a


@dataclass
class MetricsRecord:
    max_f: float
    mae: float
    precision: np.ndarray  # [256], indexed by threshold
    recall: np.ndarray

    @property
    def f_measure(self) -> np.ndarray:
        return f_measure(self.precision, self.recall)

    @property
    def curve(self) -> list:
        return list(zip(THRESHOLDS.tolist(), self.precision.tolist(), self.recall.tolist()))


def quantize(pred: np.ndarray) -> np.ndarray:
    """Saliency in [0, 1] to integer levels 0..255."""
    return np.floor(np.clip(pred, 0.0, 1.0) * 255.0 + 0.5)


def threshold_sweep(pred, gt) -> tuple:
    """Precision and recall of ``quantize(pred) >= t`` for t = 0..255."""
    p, g = _array(pred), _array(gt)
    if p.shape != g.shape:
        raise ShapeError(f"threshold_sweep: prediction {p.shape} vs ground truth {g.shape}")
    levels = quantize(p).astype(np.int64).ravel()
    fg = g.ravel() >= 0.5
    # count of pixels at each level, split by ground-truth label; a pixel at
    # level v is predicted positive for every t <= v
    hits = np.bincount(levels[fg], minlength=256)
    miss = np.bincount(levels[~fg], minlength=256)
    tp = np.cumsum(hits[::-1])[::-1].astype(np.float64)
    fp = np.cumsum(miss[::-1])[::-1].astype(np.float64)
    positives = float(fg.sum())
    predicted = tp + fp
    precision = np.divide(tp, predicted, out=np.ones(256), where=predicted > 0)
    recall = tp / positives if positives > 0 else np.ones(256)
    return precision, recall


def f_measure(precision, recall, beta_sq: float = BETA_SQ):
    p = np.asarray(precision, dtype=np.float64)
    r = np.asarray(recall, dtype=np.float64)
    num = (1.0 + beta_sq) * p * r
    den = beta_sq * p + r
    out = np.divide(num, den, out=np.zeros(np.broadcast(num, den).shape), where=den > 0)
    return float(out) if out.ndim == 0 else out


def mae(pred, gt) -> float:
    p, g = _array(pred), _array(gt)
    if p.shape != g.shape:
        raise ShapeError(f"mae: prediction {p.shape} vs ground truth {g.shape}")
    return float(np.mean(np.abs(p - g)))


def aggregate(pairs: Iterable) -> MetricsRecord:
    """Mean precision/recall per threshold over images, then the best F-beta."""
    precisions, recalls, errors = [], [], []
    for pred, gt in pairs:
        p, r = threshold_sweep(pred, gt)
        precisions.append(p)
        recalls.append(r)
        errors.append(mae(pred, gt))
    if not errors:
        raise ValueError("aggregate needs at least one (prediction, ground truth) pair")
    precision = np.mean(precisions, axis=0)
    recall = np.mean(recalls, axis=0)
    return MetricsRecord(
        max_f=float(np.max(f_measure(precision, recall))),
        mae=float(np.mean(errors)),
        precision=precision,
        recall=recall,
    )


def write_metrics_csv(record: MetricsRecord, path) -> None:
    """Header, 256 per-threshold rows, then a ``max_f,<v>,mae,<v>`` summary row."""
    fm = record.f_measure
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "precision", "recall", "f_measure"])
        for t in THRESHOLDS:
            w.writerow([int(t), repr(float(record.precision[t])), repr(float(record.recall[t])), repr(float(fm[t]))])
        w.writerow(["max_f", repr(record.max_f), "mae", repr(record.mae)])


def read_metrics_csv(path) -> MetricsRecord:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["threshold", "precision", "recall", "f_measure"] or len(rows) != 258:
        raise ValueError(f"{path}: not a metrics CSV")
    body = np.array([[float(v) for v in row] for row in rows[1:257]])
    summary = rows[257]
    return MetricsRecord(max_f=float(summary[1]), mae=float(summary[3]), precision=body[:, 1], recall=body[:, 2])
