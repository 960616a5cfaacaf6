"""Latent constraint network: cosine addressing against a trainable matrix of
representative latent vectors, unit normalization, thresholded sparsification
and recombination.

Rows of ``C`` are latent-sized vectors.  Every operation accepts a batch of
latents shaped (B, z_dim) and returns per-sample results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffengine as de
from .diffengine import ShapeError, Tensor

DEFAULT_THRESHOLD = 0.025


class DegenerateInputError(ValueError):
    """A zero-norm vector reached a step that divides by its norm."""


@dataclass
class ConstraintMatrix:
    C: Tensor
    ths: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        if self.C.data.ndim != 2 or self.C.shape[0] < 1:
            raise ShapeError(f"constraint matrix must be (N>=1, z_dim), got {self.C.shape}")
        if self.ths < 0:
            raise ValueError(f"threshold must be >= 0, got {self.ths}")

    @property
    def n_rows(self) -> int:
        return self.C.shape[0]

    @property
    def z_dim(self) -> int:
        return self.C.shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, n_rows: int, z_dim: int, ths: float = DEFAULT_THRESHOLD):
        k = 1.0 / np.sqrt(z_dim)
        C = rng.uniform(-k, k, (n_rows, z_dim))
        for i in range(n_rows):
            while np.linalg.norm(C[i]) < 1e-6:
                C[i] = rng.uniform(-k, k, z_dim)
        return cls(de.parameter(C), ths)


@dataclass
class AddressWeights:
    w: np.ndarray
    w_hat: np.ndarray


def _row_norms(x: Tensor, what: str) -> Tensor:
    n = de.l2_norm(x, axis=1, keepdims=True)
    if np.any(n.data == 0):
        raise DegenerateInputError(f"{what} has a zero-norm row")
    return n


def address(z: Tensor, cm: ConstraintMatrix) -> Tensor:
    """Cosine similarity of each latent with each row of C, shape (B, N)."""
    if z.data.ndim != 2 or z.shape[1] != cm.z_dim:
        raise ShapeError(f"latent batch {z.shape} vs constraint z_dim {cm.z_dim}")
    B, N = z.shape[0], cm.n_rows
    zn = _row_norms(z, "latent")
    cn = _row_norms(cm.C, "constraint matrix")
    dots = de.matmul(z, de.transpose(cm.C))
    denom = de.mul(de.broadcast_to(zn, (B, N)), de.broadcast_to(de.transpose(cn), (B, N)))
    return de.div(dots, denom)


def normalize(w: Tensor) -> Tensor:
    """Scale each row of weights to unit Euclidean norm."""
    n = de.l2_norm(w, axis=-1, keepdims=True)
    if np.any(n.data == 0):
        raise DegenerateInputError("cannot normalize an all-zero weight vector")
    return de.div(w, de.broadcast_to(n, w.shape))


def sparsify(w: Tensor, ths: float) -> Tensor:
    """Keep entries strictly above ``ths``; the rest become 0.  No renormalization."""
    return de.mask(w, w.data > ths)


def recombine(w_hat: Tensor, cm: ConstraintMatrix) -> Tensor:
    """Weighted sum of the rows of C, shape (B, z_dim)."""
    if w_hat.shape[-1] != cm.n_rows:
        raise ShapeError(f"weights of length {w_hat.shape[-1]} vs {cm.n_rows} rows")
    return de.matmul(w_hat, cm.C)


def address_weights(z: Tensor, cm: ConstraintMatrix) -> AddressWeights:
    """The intermediate (w, w_hat) for inspection."""
    with de.no_grad():
        w = normalize(address(z, cm))
        return AddressWeights(w.data, sparsify(w, cm.ths).data)


def constrain(z: Tensor, cm: ConstraintMatrix) -> Tensor:
    """Replace each latent by its sparse cosine-weighted combination of rows of C."""
    w = normalize(address(z, cm))
    return recombine(sparsify(w, cm.ths), cm)
