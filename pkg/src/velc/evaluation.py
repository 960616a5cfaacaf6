"""ROC AUC for comparing detectors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Probability that a random anomaly (label 1) outscores a random normal.

    Mann-Whitney statistic from average ranks, so tied pairs count one half.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError(f"scores {s.shape} and labels {y.shape} must be equal-length vectors")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = int((y == 0).sum())
    if n_pos + n_neg != y.size:
        raise ValueError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    ranks = rankdata(s)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class EvalReport:
    dataset: str
    auc: float
    n_normal: int
    n_anomalous: int
    score_min: float
    score_max: float
    score_mean: float
    score_std: float

    COLUMNS = ("dataset", "auc", "n_normal", "n_anomalous", "score_min", "score_max", "score_mean", "score_std")

    def row(self) -> list[str]:
        return [
            self.dataset,
            f"{self.auc:.6f}",
            str(self.n_normal),
            str(self.n_anomalous),
            *(f"{v:.6g}" for v in (self.score_min, self.score_max, self.score_mean, self.score_std)),
        ]


def evaluate(name: str, scores: Sequence[float], labels: Sequence[int]) -> EvalReport:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    return EvalReport(
        dataset=name,
        auc=auc(s, y),
        n_normal=int((y == 0).sum()),
        n_anomalous=int((y == 1).sum()),
        score_min=float(s.min()),
        score_max=float(s.max()),
        score_mean=float(s.mean()),
        score_std=float(s.std()),
    )
