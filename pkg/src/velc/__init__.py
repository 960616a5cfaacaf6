"""Time-series anomaly detection with a constrained, re-encoded LSTM VAE.

The model encodes a series with a bidirectional LSTM into a Gaussian latent,
pulls the sampled latent toward a learned set of prototype vectors (the
constraint matrix), decodes it back to a series and encodes the
reconstruction again.  Anomaly scores mix the reconstruction error with the
distance between the two constrained latents.

Everything runs on a small numpy reverse-mode autodiff engine
(:mod:`velc.diffengine`).
"""

from __future__ import annotations

from .data import Dataset, SplitSpec, load_kdd99, load_ucr, prepare, read_canonical, scale_and_split, write_canonical
from .evaluation import EvalReport, auc, evaluate
from .model import LossBreakdown, VelcConfig, VelcModel, forward, loss
from .scoring import ScoreParams, ScoredSeries, normalize_scores, raw_scores, score_dataset
from .train import TrainConfig, TrainLog, fit, load_checkpoint, preset, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "EvalReport",
    "LossBreakdown",
    "ScoreParams",
    "ScoredSeries",
    "SplitSpec",
    "TrainConfig",
    "TrainLog",
    "VelcConfig",
    "VelcModel",
    "auc",
    "evaluate",
    "fit",
    "forward",
    "load_checkpoint",
    "load_kdd99",
    "load_ucr",
    "loss",
    "normalize_scores",
    "prepare",
    "preset",
    "raw_scores",
    "read_canonical",
    "save_checkpoint",
    "scale_and_split",
    "score_dataset",
    "train",
    "write_canonical",
]
