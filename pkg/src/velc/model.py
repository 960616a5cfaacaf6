"""The full model: encoder -> sample -> constraint C1 -> decoder -> re-encoder
-> sample -> constraint C2, plus the four-term training loss and the text
checkpoint format.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import diffengine as de
from .constraint import DEFAULT_THRESHOLD, ConstraintMatrix, constrain
from .diffengine import ShapeError, Tensor
from .vae import (
    Decoder,
    Encoder,
    GaussianParams,
    decode,
    encode,
    kl_divergence,
    reencode,
    reparameterize,
)

CHECKPOINT_MAGIC = "velc-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint text is malformed, truncated, or of an unsupported version."""


@dataclass(frozen=True)
class VelcConfig:
    T: int
    z_dim: int = 20
    hidden: int = 64
    n_rows: int = 50
    ths: float = DEFAULT_THRESHOLD
    use_c2: bool = True
    # "constrained" compares z_tilde with re_z_tilde; "raw" compares z with re_z
    latent_loss: str = "constrained"
    squared_norms: bool = False

    def __post_init__(self):
        if min(self.T, self.z_dim, self.hidden, self.n_rows) < 1:
            raise ValueError(f"all sizes must be >= 1: {self}")
        if self.ths < 0:
            raise ValueError("ths must be >= 0")
        if self.latent_loss not in ("constrained", "raw"):
            raise ValueError(f"latent_loss must be 'constrained' or 'raw', got {self.latent_loss!r}")


@dataclass
class VelcModel:
    config: VelcConfig
    encoder: Encoder
    decoder: Decoder
    reencoder: Encoder
    c1: ConstraintMatrix
    c2: ConstraintMatrix

    @classmethod
    def init(cls, config: VelcConfig, seed: int = 0) -> "VelcModel":
        rng = np.random.default_rng(seed)
        H, zd = config.hidden, config.z_dim
        return cls(
            config,
            Encoder.init(rng, H, zd),
            Decoder.init(rng, H, zd),
            Encoder.init(rng, H, zd),
            ConstraintMatrix.init(rng, config.n_rows, zd, config.ths),
            ConstraintMatrix.init(rng, config.n_rows, zd, config.ths),
        )

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for prefix, part in (("encoder", self.encoder), ("decoder", self.decoder), ("reencoder", self.reencoder)):
            for k, v in part.tensors().items():
                yield f"{prefix}.{k}", v
        yield "c1.C", self.c1.C
        yield "c2.C", self.c2.C

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def copy(self) -> "VelcModel":
        return from_text(to_text(self))


@dataclass
class VelcOutput:
    x_recon: Tensor
    g_enc: GaussianParams
    z: Tensor
    z_tilde: Tensor
    g_re: GaussianParams
    re_z: Tensor
    re_z_tilde: Tensor


@dataclass
class LossBreakdown:
    l_rec_x: Tensor
    l_kl_1: Tensor
    l_kl_2: Tensor
    l_lat: Tensor
    total: Tensor = field(init=False)

    def __post_init__(self):
        self.total = self.l_rec_x + self.l_kl_1 + self.l_kl_2 + self.l_lat

    def values(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name).item() for f in dataclasses.fields(self)}


def _batch(x) -> Tensor:
    t = x if isinstance(x, Tensor) else de.constant(x)
    if t.data.ndim == 1:
        t = de.reshape(t, (1, t.shape[0]))
    return t


def forward(m: VelcModel, x, rng: np.random.Generator | None = None, mode: str = "eval") -> VelcOutput:
    """Run the model on a batch of series (B, T) or a single series (T,).

    ``train`` mode samples both latents; ``eval`` uses the means and ignores
    ``rng``.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train" and rng is None:
        raise ValueError("train mode needs a random generator")
    x = _batch(x)
    T = m.config.T
    if x.shape[1] != T:
        raise ShapeError(f"series length {x.shape[1]} does not match model T={T}")

    g_enc = encode(m.encoder, x, T)
    z = reparameterize(g_enc, rng).z if mode == "train" else g_enc.mu
    z_tilde = constrain(z, m.c1)
    x_recon = decode(m.decoder, z_tilde, T)
    g_re = reencode(m.reencoder, x_recon, T)
    re_z = reparameterize(g_re, rng).z if mode == "train" else g_re.mu
    re_z_tilde = constrain(re_z, m.c2) if m.config.use_c2 else re_z
    return VelcOutput(x_recon, g_enc, z, z_tilde, g_re, re_z, re_z_tilde)


def _distance(a: Tensor, b: Tensor, squared: bool) -> Tensor:
    d = de.sub(a, b)
    if squared:
        return de.sum(de.square(d), axis=1)
    return de.l2_norm(d, axis=1)


def loss(m: VelcModel, x, out: VelcOutput) -> LossBreakdown:
    """Unweighted sum of reconstruction, two KL terms and latent distance.

    Each term is computed per sample and averaged over the batch.
    """
    x = _batch(x)
    sq = m.config.squared_norms
    if m.config.latent_loss == "constrained":
        za, zb = out.z_tilde, out.re_z_tilde
    else:
        za, zb = out.z, out.re_z
    return LossBreakdown(
        l_rec_x=de.mean(_distance(x, out.x_recon, sq)),
        l_kl_1=de.mean(kl_divergence(out.g_enc)),
        l_kl_2=de.mean(kl_divergence(out.g_re)),
        l_lat=de.mean(_distance(za, zb, sq)),
    )


# ---------------------------------------------------------------------------
# checkpoint text format
#
#   velc-checkpoint 1
#   config <key> <value>          one line per VelcConfig field
#   param <name> <d1> [<d2> ...]  followed by one line of row-major values
#   end


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def to_text(m: VelcModel) -> str:
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}"]
    for f in dataclasses.fields(m.config):
        val = getattr(m.config, f.name)
        lines.append(f"config {f.name} {_fmt(val) if isinstance(val, float) else val}")
    for name, p in m.named_parameters():
        lines.append(f"param {name} " + " ".join(str(d) for d in p.shape))
        lines.append(" ".join(_fmt(v) for v in p.data.ravel()))
    lines.append("end")
    return "\n".join(lines) + "\n"


def _parse_config(raw: dict[str, str]) -> VelcConfig:
    kwargs = {}
    for f in dataclasses.fields(VelcConfig):
        if f.name not in raw:
            raise CheckpointError(f"config field {f.name!r} missing")
        s = raw[f.name]
        if f.type in ("int", int):
            kwargs[f.name] = int(s)
        elif f.type in ("float", float):
            kwargs[f.name] = float(s)
        elif f.type in ("bool", bool):
            if s not in ("True", "False"):
                raise CheckpointError(f"config {f.name}: expected True/False, got {s!r}")
            kwargs[f.name] = s == "True"
        else:
            kwargs[f.name] = s
    return VelcConfig(**kwargs)


def from_text(text: str) -> VelcModel:
    """Parse a checkpoint; raises CheckpointError without building a partial model."""
    lines = text.splitlines()
    if not lines:
        raise CheckpointError("empty checkpoint")
    head = lines[0].split()
    if len(head) != 2 or head[0] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a velc checkpoint")
    if head[1] != str(CHECKPOINT_VERSION):
        raise CheckpointError(f"unsupported checkpoint version {head[1]} (expected {CHECKPOINT_VERSION})")
    if lines[-1].strip() != "end":
        raise CheckpointError("checkpoint is truncated (no end marker)")

    raw_cfg: dict[str, str] = {}
    arrays: dict[str, np.ndarray] = {}
    i = 1
    try:
        while i < len(lines) - 1:
            parts = lines[i].split()
            if parts[0] == "config" and len(parts) == 3:
                raw_cfg[parts[1]] = parts[2]
                i += 1
            elif parts[0] == "param" and len(parts) >= 3:
                shape = tuple(int(d) for d in parts[2:])
                vals = np.array([float(v) for v in lines[i + 1].split()], dtype=np.float64)
                if vals.size != int(np.prod(shape)):
                    raise CheckpointError(f"param {parts[1]}: {vals.size} values for shape {shape}")
                arrays[parts[1]] = vals.reshape(shape)
                i += 2
            else:
                raise CheckpointError(f"line {i + 1}: unrecognized record {lines[i][:40]!r}")
    except (IndexError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"line {i + 1}: {exc}") from None

    try:
        config = _parse_config(raw_cfg)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"bad config block: {exc}") from None
    m = VelcModel.init(config, seed=0)
    expected = dict(m.named_parameters())
    if set(expected) != set(arrays):
        missing = sorted(set(expected) - set(arrays))
        extra = sorted(set(arrays) - set(expected))
        raise CheckpointError(f"parameter names differ; missing={missing} unexpected={extra}")
    for name, p in expected.items():
        if arrays[name].shape != p.shape:
            raise CheckpointError(f"param {name}: shape {arrays[name].shape}, model expects {p.shape}")
    for name, p in expected.items():
        p.data = arrays[name]
    return m
