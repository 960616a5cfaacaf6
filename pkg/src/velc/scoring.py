"""Anomaly scores from reconstruction and latent discrepancy, min-max
normalization and thresholding.

Scores are computed in eval mode, so both latents are the Gaussian means and
a sample's score does not depend on what else is in the batch.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import diffengine as de
from .model import VelcModel, forward


@dataclass(frozen=True)
class ScoreParams:
    alpha: float = 0.6
    beta: float = 0.4
    phi: float = 0.5
    # lets alpha or beta sit at 0 for limit experiments
    allow_boundary: bool = False

    def __post_init__(self):
        if abs(self.alpha + self.beta - 1.0) > 1e-12:
            raise ValueError(f"alpha + beta must equal 1, got {self.alpha} + {self.beta}")
        lo_ok = (lambda v: v >= 0) if self.allow_boundary else (lambda v: v > 0)
        if not (lo_ok(self.alpha) and lo_ok(self.beta)):
            raise ValueError(f"alpha and beta must be positive, got {self.alpha}, {self.beta}")
        if not 0.0 <= self.phi <= 1.0:
            raise ValueError(f"phi must lie in [0, 1], got {self.phi}")

    @classmethod
    def from_alpha(cls, alpha: float, phi: float = 0.5, **kw) -> "ScoreParams":
        return cls(alpha, 1.0 - alpha, phi, **kw)


@dataclass
class ScoredSeries:
    id: int
    raw: float
    normalized: float
    label: int  # -1 when unknown
    flag: bool
    rec_l1: float
    lat_l1: float


def error_components(m: VelcModel, X: np.ndarray, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample L1 reconstruction error and L1 latent discrepancy."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    rec = np.empty(len(X))
    lat = np.empty(len(X))
    with de.no_grad():
        for s in range(0, len(X), batch_size):
            xb = X[s : s + batch_size]
            out = forward(m, xb, mode="eval")
            rec[s : s + len(xb)] = np.abs(xb - out.x_recon.data).sum(axis=1)
            lat[s : s + len(xb)] = np.abs(out.z_tilde.data - out.re_z_tilde.data).sum(axis=1)
    return rec, lat


def combine(rec_l1, lat_l1, p: ScoreParams) -> np.ndarray:
    return p.alpha * np.asarray(rec_l1) + p.beta * np.asarray(lat_l1)


def raw_score(m: VelcModel, x, p: ScoreParams) -> float:
    rec, lat = error_components(m, np.asarray(x, dtype=np.float64).reshape(1, -1))
    return float(combine(rec, lat, p)[0])


def raw_scores(m: VelcModel, X, p: ScoreParams, batch_size: int = 256) -> np.ndarray:
    return combine(*error_components(m, X, batch_size), p)


def normalize_scores(scores: Sequence[float]) -> np.ndarray:
    """Min-max map onto [0, 1]; a constant list maps to all zeros."""
    a = np.asarray(scores, dtype=np.float64)
    if a.size == 0:
        raise ValueError("cannot normalize an empty score list")
    lo, hi = a.min(), a.max()
    if hi == lo:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


def classify(normalized: Sequence[float], phi: float) -> np.ndarray:
    return np.asarray(normalized) > phi


def score_dataset(
    m: VelcModel,
    X: np.ndarray,
    p: ScoreParams,
    labels: Sequence[int] | None = None,
    ids: Sequence[int] | None = None,
) -> list[ScoredSeries]:
    rec, lat = error_components(m, X)
    raw = combine(rec, lat, p)
    norm = normalize_scores(raw)
    flags = classify(norm, p.phi)
    n = len(raw)
    labels = [-1] * n if labels is None else labels
    ids = range(n) if ids is None else ids
    return [
        ScoredSeries(int(i), float(r), float(a), int(y), bool(f), float(e), float(l))
        for i, r, a, y, f, e, l in zip(ids, raw, norm, labels, flags, rec, lat)
    ]


SCORE_COLUMNS = ("id", "raw", "normalized", "label", "flag", "rec_l1", "lat_l1")


def write_scores(path: str | Path, records: Sequence[ScoredSeries], p: ScoreParams | None = None) -> None:
    """Tab-separated score file; the optional comment line records alpha/beta/phi."""
    with open(path, "w", newline="") as fh:
        if p is not None:
            fh.write(f"# alpha={p.alpha!r} beta={p.beta!r} phi={p.phi!r}\n")
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(SCORE_COLUMNS)
        for r in records:
            w.writerow(
                [r.id, format(r.raw, ".17g"), format(r.normalized, ".17g"), r.label, int(r.flag),
                 format(r.rec_l1, ".17g"), format(r.lat_l1, ".17g")]
            )


def read_scores(path: str | Path) -> list[ScoredSeries]:
    with open(path, newline="") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    reader = csv.reader(rows, delimiter="\t")
    header = next(reader, None)
    if header is None or tuple(header) != SCORE_COLUMNS:
        raise ValueError(f"{path}: not a score file (header {header})")
    out = []
    for lineno, row in enumerate(reader, start=2):
        try:
            out.append(
                ScoredSeries(int(row[0]), float(row[1]), float(row[2]), int(row[3]), row[4] == "1",
                             float(row[5]), float(row[6]))
            )
        except (IndexError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: malformed score record: {exc}") from None
    return out
