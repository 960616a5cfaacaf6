"""Gaussian latent heads, reparameterized sampling, decoding and re-encoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffengine as de
from .diffengine import ShapeError, Tensor
from .recurrent import BiLstmParams, bilstm_forward, bilstm_summary

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0


@dataclass
class GaussianParams:
    """Diagonal Gaussian; ``log_var`` holds log sigma^2.  Both are (B, z_dim)."""

    mu: Tensor
    log_var: Tensor

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(0.5 * self.log_var.data)


@dataclass
class LatentSample:
    z: Tensor
    eps: np.ndarray


@dataclass
class GaussianHead:
    """Two linear maps from a summary vector to (mu, log_var)."""

    W_mu: Tensor
    b_mu: Tensor
    W_lv: Tensor
    b_lv: Tensor

    @property
    def z_dim(self) -> int:
        return self.W_mu.shape[0]

    def tensors(self) -> dict[str, Tensor]:
        return {"W_mu": self.W_mu, "b_mu": self.b_mu, "W_lv": self.W_lv, "b_lv": self.b_lv}

    @classmethod
    def init(cls, rng: np.random.Generator, in_dim: int, z_dim: int) -> "GaussianHead":
        k = 1.0 / np.sqrt(in_dim)
        return cls(
            de.parameter(rng.uniform(-k, k, (z_dim, in_dim))),
            de.parameter(rng.uniform(-k, k, z_dim)),
            de.parameter(rng.uniform(-k, k, (z_dim, in_dim))),
            de.parameter(rng.uniform(-k, k, z_dim)),
        )


@dataclass
class Encoder:
    """BiLSTM (no projection) followed by a Gaussian head.

    Used for both the encoder and the re-encoder; they differ only in their
    parameters.
    """

    lstm: BiLstmParams
    head: GaussianHead

    def tensors(self) -> dict[str, Tensor]:
        out = {f"lstm.{k}": v for k, v in self.lstm.tensors().items()}
        out.update({f"head.{k}": v for k, v in self.head.tensors().items()})
        return out

    @classmethod
    def init(cls, rng, hidden: int, z_dim: int, input_size: int = 1) -> "Encoder":
        return cls(BiLstmParams.init(rng, input_size, hidden), GaussianHead.init(rng, 2 * hidden, z_dim))


@dataclass
class Decoder:
    """BiLSTM whose per-step projection emits one value per time step."""

    lstm: BiLstmParams

    @property
    def z_dim(self) -> int:
        return self.lstm.fwd.input_size

    def tensors(self) -> dict[str, Tensor]:
        return {f"lstm.{k}": v for k, v in self.lstm.tensors().items()}

    @classmethod
    def init(cls, rng, hidden: int, z_dim: int) -> "Decoder":
        return cls(BiLstmParams.init(rng, z_dim, hidden, out=1))


def _as_sequence(x: Tensor) -> Tensor:
    if x.data.ndim == 2:
        B, T = x.shape
        return de.reshape(x, (B, T, 1))
    if x.data.ndim != 3:
        raise ShapeError(f"series batch must be (B, T) or (B, T, 1), got {x.shape}")
    return x


def encode(enc: Encoder, x: Tensor, T: int | None = None) -> GaussianParams:
    """Map a batch of series (B, T) to Gaussian latent parameters."""
    if T is not None and x.shape[1] != T:
        raise ShapeError(f"series length {x.shape[1]} does not match configured T={T}")
    s = bilstm_summary(enc.lstm, _as_sequence(x))
    B = s.shape[0]
    head = enc.head
    zd = head.z_dim
    mu = de.add(de.matmul(s, de.transpose(head.W_mu)), de.broadcast_to(head.b_mu, (B, zd)))
    lv = de.add(de.matmul(s, de.transpose(head.W_lv)), de.broadcast_to(head.b_lv, (B, zd)))
    return GaussianParams(mu, de.clip(lv, LOG_VAR_MIN, LOG_VAR_MAX))


def reencode(reenc: Encoder, x_recon: Tensor, T: int | None = None) -> GaussianParams:
    """Encode a reconstruction into the second latent space (same contract as encode)."""
    return encode(reenc, x_recon, T)


def reparameterize(g: GaussianParams, rng: np.random.Generator) -> LatentSample:
    """z = mu + eps * sigma with eps ~ N(0, 1); eps is treated as a constant."""
    eps = rng.standard_normal(g.mu.shape)
    sigma = de.exp(de.scale(g.log_var, 0.5))
    z = de.add(g.mu, de.mul(de.constant(eps), sigma))
    return LatentSample(z, eps)


def decode(dec: Decoder, z_hat: Tensor, T: int) -> Tensor:
    """Feed ``z_hat`` (B, z_dim) at each of T steps; returns the series (B, T)."""
    if z_hat.data.ndim != 2 or z_hat.shape[1] != dec.z_dim:
        raise ShapeError(f"latent batch {z_hat.shape} vs decoder z_dim {dec.z_dim}")
    if T < 1:
        raise ShapeError("decode length must be >= 1")
    B, zd = z_hat.shape
    seq = de.broadcast_to(de.reshape(z_hat, (B, 1, zd)), (B, T, zd))
    y = bilstm_forward(dec.lstm, seq)
    return de.reshape(y, (B, T))


def kl_divergence(g: GaussianParams) -> Tensor:
    """Per-sample KL(N(mu, sigma^2) || N(0, 1)); returns shape (B,)."""
    mu, lv = g.mu, g.log_var
    terms = de.sub(de.add(de.square(mu), de.exp(lv)), de.add(de.constant(np.ones(lv.shape)), lv))
    return de.scale(de.sum(terms, axis=-1), 0.5)
