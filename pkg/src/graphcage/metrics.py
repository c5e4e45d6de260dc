"""Sentiment regression metrics over real-valued predictions in [-3, 3]."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np


@dataclass
class MetricsReport:
    acc7: float
    acc2: float
    f1: float
    mae: float
    corr: float
    corr_degenerate: bool = False  # zero-variance guard tripped

    def to_dict(self) -> dict:
        return asdict(self)


def _round7(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x), -3, 3)


def compute_metrics(predictions: np.ndarray, labels: np.ndarray
                    ) -> MetricsReport:
    predictions = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if predictions.size == 0:
        raise ValueError("cannot evaluate an empty split")
    acc7 = float(np.mean(_round7(predictions) == _round7(labels)))
    # zero sits in the positive class
    pred_pos = predictions >= 0
    true_pos = labels >= 0
    acc2 = float(np.mean(pred_pos == true_pos))
    tp = float(np.sum(pred_pos & true_pos))
    fp = float(np.sum(pred_pos & ~true_pos))
    fn = float(np.sum(~pred_pos & true_pos))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall > 0 else 0.0)
    mae = float(np.mean(np.abs(predictions - labels)))
    degenerate = bool(np.std(predictions) == 0 or np.std(labels) == 0)
    if degenerate:
        corr = 0.0
    else:
        corr = float(np.corrcoef(predictions, labels)[0, 1])
    return MetricsReport(acc7=acc7, acc2=acc2, f1=f1, mae=mae, corr=corr,
                         corr_degenerate=degenerate)
