"""LSTM cells, sequence unrolling and bidirectional composition.

Gate weights for the four gates (forget, input, cell candidate, output) are
stored stacked in that order: ``U`` is (4H, I), ``W`` is (4H, H), ``b`` is
(4H,).  All sequence inputs are batched, shaped (batch, T, features).

Two unrolling routes exist.  :func:`lstm_unroll` is a single engine node
with a hand-written backpropagation-through-time rule and is what the model
uses.  :func:`lstm_unroll_stepwise` chains :func:`lstm_step` calls built from
primitive engine ops; it is slow and serves as the reference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffengine as de
from .diffengine import ShapeError, Tensor

GATES = ("forget", "input", "cell", "output")


@dataclass
class LstmParams:
    U: Tensor
    W: Tensor
    b: Tensor

    def __post_init__(self):
        h4, _ = self.U.shape
        if h4 % 4 or self.W.shape != (h4, h4 // 4) or self.b.shape != (h4,):
            raise ShapeError(
                f"inconsistent LSTM shapes U={self.U.shape} W={self.W.shape} b={self.b.shape}"
            )

    @property
    def hidden(self) -> int:
        return self.W.shape[1]

    @property
    def input_size(self) -> int:
        return self.U.shape[1]

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(U_g, W_g, b_g) views for one gate."""
        k = GATES.index(name)
        s = slice(k * self.hidden, (k + 1) * self.hidden)
        return self.U.data[s], self.W.data[s], self.b.data[s]

    def tensors(self) -> dict[str, Tensor]:
        return {"U": self.U, "W": self.W, "b": self.b}

    @classmethod
    def init(cls, rng: np.random.Generator, input_size: int, hidden: int) -> "LstmParams":
        k = 1.0 / np.sqrt(hidden)
        return cls(
            de.parameter(rng.uniform(-k, k, (4 * hidden, input_size))),
            de.parameter(rng.uniform(-k, k, (4 * hidden, hidden))),
            de.parameter(rng.uniform(-k, k, 4 * hidden)),
        )

    @classmethod
    def zeros(cls, input_size: int, hidden: int) -> "LstmParams":
        return cls(
            de.parameter(np.zeros((4 * hidden, input_size))),
            de.parameter(np.zeros((4 * hidden, hidden))),
            de.parameter(np.zeros(4 * hidden)),
        )


@dataclass
class LstmState:
    h: Tensor
    c: Tensor

    @classmethod
    def zeros(cls, batch: int, hidden: int) -> "LstmState":
        return cls(de.constant(np.zeros((batch, hidden))), de.constant(np.zeros((batch, hidden))))


@dataclass
class BiLstmParams:
    """Forward and backward cells plus an optional linear output projection.

    ``V`` is (out, 2H) and ``bias`` is (out,).  The projection is left as
    ``None`` when a caller only needs the hidden states.
    """

    fwd: LstmParams
    bwd: LstmParams
    V: Tensor | None = None
    bias: Tensor | None = None

    def __post_init__(self):
        if self.fwd.hidden != self.bwd.hidden or self.fwd.input_size != self.bwd.input_size:
            raise ShapeError("forward and backward cells must share input and hidden sizes")
        if (self.V is None) != (self.bias is None):
            raise ShapeError("projection needs both V and bias")
        if self.V is not None and (
            self.V.shape[1] != 2 * self.hidden or self.bias.shape != (self.V.shape[0],)
        ):
            raise ShapeError(f"projection shapes V={self.V.shape} bias={self.bias.shape}")

    @property
    def hidden(self) -> int:
        return self.fwd.hidden

    def tensors(self) -> dict[str, Tensor]:
        out = {f"fwd.{k}": v for k, v in self.fwd.tensors().items()}
        out.update({f"bwd.{k}": v for k, v in self.bwd.tensors().items()})
        if self.V is not None:
            out["V"] = self.V
            out["bias"] = self.bias
        return out

    @classmethod
    def init(cls, rng, input_size: int, hidden: int, out: int | None = None) -> "BiLstmParams":
        fwd = LstmParams.init(rng, input_size, hidden)
        bwd = LstmParams.init(rng, input_size, hidden)
        if out is None:
            return cls(fwd, bwd)
        k = 1.0 / np.sqrt(hidden)
        V = de.parameter(rng.uniform(-k, k, (out, 2 * hidden)))
        bias = de.parameter(rng.uniform(-k, k, out))
        return cls(fwd, bwd, V, bias)


# ---------------------------------------------------------------------------
# single step (composed from primitive ops)


def lstm_step(p: LstmParams, x_t: Tensor, s: LstmState) -> LstmState:
    """One LSTM update for a batch ``x_t`` of shape (B, I)."""
    B = x_t.shape[0]
    H = p.hidden
    if x_t.data.ndim != 2 or x_t.shape[1] != p.input_size:
        raise ShapeError(f"lstm_step: input {x_t.shape} vs input size {p.input_size}")
    if s.h.shape != (B, H) or s.c.shape != (B, H):
        raise ShapeError(f"lstm_step: state {s.h.shape}/{s.c.shape} vs ({B}, {H})")
    a = de.add(
        de.add(de.matmul(x_t, de.transpose(p.U)), de.matmul(s.h, de.transpose(p.W))),
        de.broadcast_to(p.b, (B, 4 * H)),
    )
    f = de.sigmoid(a[:, 0:H])
    i = de.sigmoid(a[:, H : 2 * H])
    g = de.tanh(a[:, 2 * H : 3 * H])
    o = de.sigmoid(a[:, 3 * H : 4 * H])
    c = de.add(de.mul(f, s.c), de.mul(i, g))
    h = de.mul(o, de.tanh(c))
    return LstmState(h, c)


def lstm_unroll_stepwise(p: LstmParams, x: Tensor, reverse: bool = False) -> Tensor:
    """Reference unroll via repeated :func:`lstm_step`; returns (B, T, H)."""
    B, T, _ = _check_seq(p, x)
    s = LstmState.zeros(B, p.hidden)
    hs: list[Tensor | None] = [None] * T
    order = range(T - 1, -1, -1) if reverse else range(T)
    for t in order:
        s = lstm_step(p, x[:, t, :], s)
        hs[t] = de.reshape(s.h, (B, 1, p.hidden))
    return de.concat(hs, axis=1)


# ---------------------------------------------------------------------------
# fused unroll


def _check_seq(p: LstmParams, x: Tensor) -> tuple[int, int, int]:
    if x.data.ndim != 3:
        raise ShapeError(f"sequence input must be (batch, T, features), got {x.shape}")
    B, T, I = x.shape
    if T < 1:
        raise ShapeError("empty sequence")
    if I != p.input_size:
        raise ShapeError(f"sequence features {I} vs LSTM input size {p.input_size}")
    return B, T, I


def _gate_affine(H: int) -> tuple[np.ndarray, np.ndarray]:
    # sigmoid(a) = 0.5 + 0.5 * tanh(a / 2), so a single tanh over the halved
    # pre-activations followed by one affine map yields all four gates
    scale = np.full(4 * H, 0.5)
    scale[2 * H : 3 * H] = 1.0
    offset = np.full(4 * H, 0.5)
    offset[2 * H : 3 * H] = 0.0
    return scale, offset


def _unroll(Us, Ws, bs, Xs):
    """Core loop for D stacked directions.

    Us (D, 4H, I), Ws (D, 4H, H), bs (D, 4H), Xs (D, B, T, I), each direction
    already in its own reading order.  Returns hidden states (T, D, B, H) and
    a closure computing (dXs, dUs, dWs, dbs) from dH of shape (T, D, B, H).
    """
    D, B, T, I = Xs.shape
    H = Ws.shape[2]
    scale, offset = _gate_affine(H)
    WsT = np.ascontiguousarray((Ws * scale[:, None]).transpose(0, 2, 1))  # (D, H, 4H)
    XU = (Xs.reshape(D, B * T, I) @ Us.transpose(0, 2, 1) + bs[:, None, :]) * scale
    XU = np.ascontiguousarray(XU.reshape(D, B, T, 4 * H).transpose(2, 0, 1, 3))  # (T, D, B, 4H)

    hs = np.zeros((T + 1, D, B, H))  # hs[t + 1] is the state after step t
    cs = np.zeros((T + 1, D, B, H))
    acts = np.empty((T, D, B, 4 * H))
    tcs = np.empty((T, D, B, H))
    for t in range(T):
        act = acts[t]
        np.matmul(hs[t], WsT, out=act)
        act += XU[t]
        np.tanh(act, out=act)
        act *= scale
        act += offset
        c = cs[t + 1]
        np.multiply(act[..., :H], cs[t], out=c)
        c += act[..., H : 2 * H] * act[..., 2 * H : 3 * H]
        np.tanh(c, out=tcs[t])
        np.multiply(act[..., 3 * H :], tcs[t], out=hs[t + 1])

    def grads(dH):
        f, i, g, o = (acts[..., k * H : (k + 1) * H] for k in range(4))
        # d(pre-activation) = upstream * partner * slope, gathered for all t at once;
        # upstream is dc for the f/i/g blocks and dh for the o block
        slope = np.concatenate([f * (1 - f), i * (1 - i), 1 - g * g, o * (1 - o)], axis=-1)
        partner = np.concatenate([cs[:-1], g, i, tcs], axis=-1)
        Q = (slope * partner).reshape(T, D, B, 4, H)
        R = o * (1.0 - tcs * tcs)

        dA = np.empty((T, D, B, 4, H))
        dh_next = np.zeros((D, B, H))
        dc = np.zeros((D, B, H))
        for t in range(T - 1, -1, -1):
            dh = dH[t] + dh_next
            dc_t = dh * R[t]
            dc_t += dc
            da = dA[t]
            np.multiply(dc_t[..., None, :], Q[t, ..., :3, :], out=da[..., :3, :])
            np.multiply(dh, Q[t, ..., 3, :], out=da[..., 3, :])
            dh_next = da.reshape(D, B, 4 * H) @ Ws
            dc = dc_t * f[t]
        dA = dA.reshape(T, D, B, 4 * H)
        flatA = dA.transpose(1, 0, 2, 3).reshape(D, T * B, 4 * H)
        h_prev = hs[:-1].transpose(1, 0, 2, 3).reshape(D, T * B, H)
        dWs = flatA.transpose(0, 2, 1) @ h_prev
        dbs = flatA.sum(axis=1)
        dA_bt = dA.transpose(1, 2, 0, 3)  # (D, B, T, 4H)
        dUs = dA_bt.reshape(D, B * T, 4 * H).transpose(0, 2, 1) @ Xs.reshape(D, B * T, I)
        dXs = dA_bt @ Us[:, None]
        return dXs, dUs, dWs, dbs

    return hs[1:], grads


def lstm_unroll(p: LstmParams, x: Tensor, reverse: bool = False) -> Tensor:
    """Run one LSTM direction over (B, T, I) from zero state; returns (B, T, H).

    With ``reverse`` the cell consumes t = T..1 and the output at index t is
    the state after having read x_T..x_t.
    """
    _check_seq(p, x)
    X = x.data[:, ::-1] if reverse else x.data
    hs, grads = _unroll(p.U.data[None], p.W.data[None], p.b.data[None], X[None])
    out = hs[:, 0].transpose(1, 0, 2)
    if reverse:
        out = out[:, ::-1]

    def bw(g):
        G = g[:, ::-1] if reverse else g
        dX, dU, dW, db = grads(G.transpose(1, 0, 2)[:, None])
        dX = dX[0][:, ::-1] if reverse else dX[0]
        return dX, dU[0], dW[0], db[0]

    return de.record(np.ascontiguousarray(out), (x, p.U, p.W, p.b), bw, "lstm_unroll")


def bilstm_unroll(p: "BiLstmParams", x: Tensor) -> Tensor:
    """Both directions in one fused node; returns [h_fwd ; h_bwd] as (B, T, 2H)."""
    _check_seq(p.fwd, x)
    H = p.hidden
    X = x.data
    Xs = np.stack([X, X[:, ::-1]])
    Us = np.stack([p.fwd.U.data, p.bwd.U.data])
    Ws = np.stack([p.fwd.W.data, p.bwd.W.data])
    bs = np.stack([p.fwd.b.data, p.bwd.b.data])
    hs, grads = _unroll(Us, Ws, bs, Xs)  # (T, 2, B, H)
    out = np.concatenate([hs[:, 0], hs[::-1, 1]], axis=2).transpose(1, 0, 2)

    def bw(g):
        gt = g.transpose(1, 0, 2)  # (T, B, 2H)
        dH = np.stack([gt[..., :H], gt[::-1, :, H:]], axis=1)
        dXs, dUs, dWs, dbs = grads(dH)
        dX = dXs[0] + dXs[1][:, ::-1]
        return dX, dUs[0], dWs[0], dbs[0], dUs[1], dWs[1], dbs[1]

    parents = (x, p.fwd.U, p.fwd.W, p.fwd.b, p.bwd.U, p.bwd.W, p.bwd.b)
    return de.record(np.ascontiguousarray(out), parents, bw, "bilstm_unroll")


# ---------------------------------------------------------------------------
# bidirectional


def bilstm_states(p: BiLstmParams, x: Tensor, stepwise: bool = False) -> Tensor:
    """Forward and backward hidden sequences side by side, (B, T, 2H)."""
    if not stepwise:
        return bilstm_unroll(p, x)
    return de.concat([lstm_unroll_stepwise(p.fwd, x), lstm_unroll_stepwise(p.bwd, x, reverse=True)], axis=2)


def project(p: BiLstmParams, states: Tensor) -> Tensor:
    """Per-step linear head V.[h_fwd_t ; h_bwd_t] + bias, giving (B, T, out)."""
    if p.V is None:
        raise ShapeError("this BiLSTM has no output projection")
    B, T, H2 = states.shape
    out = p.V.shape[0]
    cat = de.reshape(states, (B * T, H2))
    y = de.add(de.matmul(cat, de.transpose(p.V)), de.broadcast_to(p.bias, (B * T, out)))
    return de.reshape(y, (B, T, out))


def bilstm_forward(p: BiLstmParams, x: Tensor, stepwise: bool = False) -> Tensor:
    """Bidirectional pass with the linear output head; (B, T, I) -> (B, T, out)."""
    return project(p, bilstm_states(p, x, stepwise=stepwise))


def bilstm_summary(p: BiLstmParams, x: Tensor, stepwise: bool = False) -> Tensor:
    """Sequence summary concat(h_fwd_T, h_bwd_1), shape (B, 2H)."""
    H = p.hidden
    hs = bilstm_states(p, x, stepwise=stepwise)
    return de.concat([hs[:, -1, :H], hs[:, 0, H:]], axis=1)
