"""Mini-batch training loop, Adam with global-norm clipping, checkpoint I/O."""

from __future__ import annotations

import dataclasses
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import diffengine as de
from .data import Dataset
from .diffengine import DomainError, Tensor
from .model import VelcConfig, VelcModel, forward, from_text, loss, to_text

logger = logging.getLogger(__name__)


class NonFiniteLossError(RuntimeError):
    """Training produced NaN/Inf; the message names the offending loss term."""


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 0.005
    iterations: int = 5000
    n_rows: int = 50
    ths: float = 0.025
    seed: int = 0
    z_dim: int = 20
    hidden: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 5.0
    log_interval: int = 100
    # reconstruction-only steps, then a linear ramp of the KL and latent terms
    warmup: int = 0
    ramp: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.log_interval < 1:
            raise ValueError("log_interval must be >= 1")
        if self.warmup < 0 or self.ramp < 0:
            raise ValueError("warmup and ramp must be >= 0")

    def model_config(self, T: int, **overrides) -> VelcConfig:
        return VelcConfig(T=T, z_dim=self.z_dim, hidden=self.hidden, n_rows=self.n_rows, ths=self.ths, **overrides)


# batch / learning rate / iterations / rows of C per dataset family
PRESETS: dict[str, dict] = {
    "ucr": dict(batch_size=32, learning_rate=0.005, iterations=5000, n_rows=50),
    "arrhythmia": dict(batch_size=32, learning_rate=0.01, iterations=10000, n_rows=10),
    "kdd99": dict(batch_size=50, learning_rate=1e-5, iterations=150000, n_rows=50),
}


def preset(name: str, **overrides) -> TrainConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return TrainConfig(**{**base, **overrides})


class Adam:
    def __init__(self, params: list[Tensor], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_by_global_norm(grads: list[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    """Rescale all gradients together so their joint L2 norm is at most max_norm."""
    norm = float(np.sqrt(np.sum([np.sum(g * g) for g in grads])))
    if norm > max_norm:
        s = max_norm / norm
        grads = [g * s for g in grads]
    return grads, norm


LOG_FIELDS = ("l_rec_x", "l_kl_1", "l_kl_2", "l_lat", "total")


@dataclass
class TrainLog:
    iterations: list[int] = field(default_factory=list)
    records: list[dict[str, float]] = field(default_factory=list)

    def append(self, it: int, values: dict[str, float]) -> None:
        if self.iterations and it <= self.iterations[-1]:
            raise ValueError("log iterations must be strictly increasing")
        self.iterations.append(it)
        self.records.append(values)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records])

    def to_text(self) -> str:
        lines = ["\t".join(("iteration",) + LOG_FIELDS)]
        for it, r in zip(self.iterations, self.records):
            lines.append("\t".join([str(it)] + [format(r[k], ".17g") for k in LOG_FIELDS]))
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())


def _check_finite(values: dict[str, float], it: int) -> None:
    for name in LOG_FIELDS:
        if not np.isfinite(values[name]):
            raise NonFiniteLossError(f"iteration {it}: loss term {name} is {values[name]}")


def regularizer_weight(it: int, cfg: TrainConfig) -> float:
    """Weight on the KL and latent terms at step ``it`` (0-based)."""
    if it < cfg.warmup:
        return 0.0
    if it - cfg.warmup < cfg.ramp:
        return (it - cfg.warmup + 1) / (cfg.ramp + 1)
    return 1.0


def train(
    m: VelcModel,
    d: Dataset,
    cfg: TrainConfig,
    callback: Callable[[int, dict[str, float]], None] | None = None,
) -> tuple[VelcModel, TrainLog]:
    """Run ``cfg.iterations`` Adam steps on batches drawn with replacement.

    The model is updated in place and also returned.
    """
    if d.size == 0:
        raise ValueError("training set is empty")
    if d.labels is not None and np.any(d.labels != 0):
        raise ValueError("training set must contain normal samples only")
    if d.T != m.config.T:
        raise ValueError(f"dataset length T={d.T} does not match model T={m.config.T}")

    rng = np.random.default_rng([cfg.seed, 1])
    params = m.parameters()
    opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    log = TrainLog()
    X = d.X
    for it in range(cfg.iterations):
        xb = X[rng.integers(0, d.size, size=cfg.batch_size)]
        try:
            out = forward(m, xb, rng, mode="train")
            parts = loss(m, xb, out)
        except DomainError as exc:
            raise NonFiniteLossError(f"iteration {it}: forward pass failed: {exc}") from None
        values = parts.values()
        _check_finite(values, it)
        objective = parts.total
        w = regularizer_weight(it, cfg)
        if w < 1.0:
            objective = parts.l_rec_x + de.scale(parts.l_kl_1 + parts.l_kl_2 + parts.l_lat, w)
        grads_map = de.backward(objective)
        grads = [grads_map[p] for p in params]
        grads, _ = clip_by_global_norm(grads, cfg.clip_norm)
        opt.step(grads)
        if it % cfg.log_interval == 0 or it == cfg.iterations - 1:
            log.append(it, values)
            logger.debug("iter %d total %.5f", it, values["total"])
        if callback is not None:
            callback(it, values)
    return m, log


def fit(d: Dataset, cfg: TrainConfig, **model_overrides) -> tuple[VelcModel, TrainLog]:
    """Initialize a model from ``cfg`` (seeded) and train it on ``d``."""
    m = VelcModel.init(cfg.model_config(d.T, **model_overrides), seed=cfg.seed)
    return train(m, d, cfg)


def save_checkpoint(m: VelcModel, path: str | Path) -> None:
    """Write atomically: readers never see a half-written checkpoint."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=".ckpt-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(to_text(m))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | Path) -> VelcModel:
    return from_text(Path(path).read_text())


def config_items(cfg) -> list[tuple[str, object]]:
    return [(f.name, getattr(cfg, f.name)) for f in dataclasses.fields(cfg)]
