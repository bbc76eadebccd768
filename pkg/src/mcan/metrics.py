"""Sentiment regression metrics: Acc2, Acc7, F1, Pearson correlation, MAE."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


class MetricError(ValueError):
    pass


@dataclass
class MetricReport:
    acc2: float
    acc7: float
    f1: float
    corr: float
    mae: float
    n_binary: int
    n_total: int

    def as_dict(self) -> dict:
        return asdict(self)


def compute_metrics(preds, labels) -> MetricReport:
    """Metrics under the usual CMU-MOSI conventions.

    Acc7 rounds both values to integers clamped to [-3, 3] (round-half-even).
    Acc2 and F1 drop zero-label samples; a prediction >= 0 counts as positive.
    """
    p = np.asarray(preds, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if p.shape != y.shape:
        raise MetricError(f"length mismatch {p.shape} vs {y.shape}")
    if p.size < 2:
        raise MetricError("need at least two samples")
    if np.std(p) == 0 or np.std(y) == 0:
        raise MetricError("correlation undefined: zero variance")

    mae = float(np.mean(np.abs(p - y)))
    corr = float(np.clip(np.corrcoef(p, y)[0, 1], -1.0, 1.0))
    acc7 = float(np.mean(np.round(np.clip(p, -3, 3)) == np.round(np.clip(y, -3, 3))))

    nz = y != 0
    yb = y[nz] > 0
    pb = p[nz] >= 0
    n_bin = int(nz.sum())
    acc2 = float(np.mean(pb == yb)) if n_bin else 0.0
    tp = int(np.sum(pb & yb))
    fp = int(np.sum(pb & ~yb))
    fn = int(np.sum(~pb & yb))
    f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    return MetricReport(acc2, acc7, float(f1), corr, mae, n_bin, int(p.size))
