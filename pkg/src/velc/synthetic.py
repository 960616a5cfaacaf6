"""Labelled synthetic series: noisy sine windows, some with injected spikes."""

from __future__ import annotations

import numpy as np

from .data import Dataset


def sine_windows(
    n: int = 500,
    T: int = 64,
    n_anomalies: int = 50,
    seed: int = 0,
    noise: float = 0.05,
    periods: tuple[float, float] = (1.5, 2.5),
    spike_height: tuple[float, float] = (1.0, 2.0),
    max_spikes: int = 3,
) -> Dataset:
    """``n`` windows of a randomly phased sine; ``n_anomalies`` of them get spikes.

    Each anomalous window receives 1..max_spikes single-sample spikes of
    random sign and height drawn from ``spike_height`` (unit sine amplitude).
    """
    if not 0 <= n_anomalies < n:
        raise ValueError("need 0 <= n_anomalies < n")
    rng = np.random.default_rng(seed)
    t = np.arange(T) / T
    cycles = rng.uniform(*periods, size=(n, 1))
    phase = rng.uniform(0, 2 * np.pi, size=(n, 1))
    amp = rng.uniform(0.8, 1.2, size=(n, 1))
    X = amp * np.sin(2 * np.pi * cycles * t + phase) + noise * rng.standard_normal((n, T))
    labels = np.zeros(n, dtype=np.int64)
    bad = rng.choice(n, size=n_anomalies, replace=False)
    labels[bad] = 1
    for i in bad:
        k = rng.integers(1, max_spikes + 1)
        where = rng.choice(T, size=k, replace=False)
        X[i, where] += rng.choice([-1.0, 1.0], size=k) * rng.uniform(*spike_height, size=k)
    classes = np.where(labels == 1, "spike", "normal")
    return Dataset("SineSpikes", X, classes, labels)
