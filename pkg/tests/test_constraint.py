from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from velc import diffengine as de
from velc.constraint import (
    ConstraintMatrix,
    DegenerateInputError,
    address,
    address_weights,
    constrain,
    normalize,
    recombine,
    sparsify,
)


def cm_of(rows, ths=0.025):
    return ConstraintMatrix(de.parameter(np.asarray(rows, dtype=float)), ths)


# ---------------------------------------------------------------------------
# brute-force oracles


def sparsify_oracle(w, ths):
    out = np.zeros_like(w)
    for idx in np.ndindex(w.shape):
        out[idx] = w[idx] if w[idx] > ths else 0.0
    return out


def recombine_oracle(w_hat, C):
    B, N = w_hat.shape
    out = np.zeros((B, C.shape[1]))
    for b in range(B):
        for i in range(N):
            out[b] += w_hat[b, i] * C[i]
    return out


def constrain_oracle(z, C, ths):
    out = []
    for zb in z:
        cos = np.array([zb @ c / (np.linalg.norm(zb) * np.linalg.norm(c)) for c in C])
        w = cos / np.linalg.norm(cos)
        w_hat = sparsify_oracle(w, ths)
        out.append(w_hat @ C)
    return np.array(out)


# ---------------------------------------------------------------------------
# address


def test_address_examples():
    c = cm_of([[1.0, 1.0], [0.0, 2.0], [3.0, 0.0]])
    w = address(de.constant([[1.0, 0.0]]), c).data[0]
    assert w[0] == pytest.approx(1 / math.sqrt(2), abs=1e-8)
    assert w[1] == 0.0
    assert w[2] == 1.0


def test_address_identity():
    rng = np.random.default_rng(0)
    C = rng.normal(size=(4, 3))
    w = address(de.constant(C[2:3]), cm_of(C)).data[0]
    assert w[2] == pytest.approx(1.0, abs=1e-15)
    assert np.all(np.abs(w) <= 1.0 + 1e-15)


def test_address_degenerate_inputs():
    with pytest.raises(DegenerateInputError):
        address(de.constant([[0.0, 0.0]]), cm_of([[1.0, 0.0]]))
    with pytest.raises(DegenerateInputError):
        address(de.constant([[1.0, 0.0]]), cm_of([[1.0, 0.0], [0.0, 0.0]]))


@settings(max_examples=100, deadline=None)
@given(
    hnp.arrays(np.float64, (2, 3), elements=st.floats(-10, 10)),
    st.floats(1e-3, 1e3),
)
def test_address_scale_invariant(z, lam):
    assume(np.all(np.linalg.norm(z, axis=1) > 1e-3))
    c = cm_of(np.random.default_rng(1).normal(size=(5, 3)))
    a = address(de.constant(z), c).data
    b = address(de.constant(lam * z), c).data
    assert np.allclose(a, b, rtol=0, atol=1e-12)


# ---------------------------------------------------------------------------
# normalize


def test_normalize_examples():
    assert np.allclose(normalize(de.constant([[3.0, 4.0]])).data, [[0.6, 0.8]], rtol=0, atol=1e-15)
    u = np.array([[0.0, 1.0, 0.0]])
    assert np.array_equal(normalize(de.constant(u)).data, u)
    with pytest.raises(DegenerateInputError):
        normalize(de.constant([[0.0, 0.0]]))


@settings(max_examples=100, deadline=None)
@given(hnp.arrays(np.float64, (1, 4), elements=st.floats(-10, 10)), st.floats(1e-3, 1e3))
def test_normalize_unit_and_homogeneous(w, lam):
    assume(np.linalg.norm(w) > 1e-3)
    a = normalize(de.constant(w)).data
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(normalize(de.constant(lam * w)).data, a, rtol=0, atol=1e-12)


# ---------------------------------------------------------------------------
# sparsify


def test_sparsify_examples():
    out = sparsify(de.constant([[0.9, 0.01, 0.43]]), 0.025).data
    assert np.array_equal(out, [[0.9, 0.0, 0.43]])
    out = sparsify(de.constant([[-0.2, 0.0, 0.3]]), 0.0).data
    assert np.array_equal(out, [[0.0, 0.0, 0.3]])
    # strict inequality at the threshold itself
    assert sparsify(de.constant([[0.025]]), 0.025).data[0, 0] == 0.0


@settings(max_examples=200, deadline=None)
@given(hnp.arrays(np.float64, (3, 6), elements=st.floats(-1, 1)), st.floats(0, 0.5))
def test_sparsify_matches_oracle(w, ths):
    out = sparsify(de.constant(w), ths).data
    assert np.array_equal(out, sparsify_oracle(w, ths))
    # never grows the L1 norm or the support
    assert np.all(np.abs(out).sum(1) <= np.abs(w).sum(1))
    assert np.all((out != 0).sum(1) <= (w != 0).sum(1))
    # each entry is either 0 or the original weight
    assert np.all((out == 0) | (out == w))


# ---------------------------------------------------------------------------
# recombine


def test_recombine_examples():
    C = np.array([[1.0, 2.0], [3.0, -1.0]])
    assert np.array_equal(recombine(de.constant([[1.0, 0.0]]), cm_of(C)).data, C[:1])
    assert np.array_equal(recombine(de.constant([[0.0, 0.0]]), cm_of(C)).data, np.zeros((1, 2)))


def test_recombine_matches_summation_oracle():
    rng = np.random.default_rng(2)
    for _ in range(20):
        C = rng.normal(size=(7, 4))
        w = rng.normal(size=(3, 7))
        out = recombine(de.constant(w), cm_of(C)).data
        assert np.allclose(out, recombine_oracle(w, C), rtol=0, atol=1e-12)


# ---------------------------------------------------------------------------
# constrain


def test_constrain_single_row_identity():
    z = np.array([[0.3, -0.4, 1.2]])
    out = constrain(de.constant(z), cm_of(z, ths=0.5)).data
    assert np.allclose(out, z, rtol=0, atol=1e-15)


def test_constrain_fully_suppressed():
    # z points away from every row, so all cosines are negative
    C = np.array([[1.0, 0.0], [0.0, 1.0]])
    out = constrain(de.constant([[-1.0, -2.0]]), cm_of(C)).data
    assert np.array_equal(out, np.zeros((1, 2)))


def test_constrain_matches_stepwise_oracle():
    rng = np.random.default_rng(3)
    for _ in range(20):
        C = rng.normal(size=(6, 3))
        z = rng.normal(size=(4, 3))
        out = constrain(de.constant(z), cm_of(C)).data
        assert np.allclose(out, constrain_oracle(z, C, 0.025), rtol=0, atol=1e-12)


def test_constrain_output_in_row_span():
    rng = np.random.default_rng(4)
    for _ in range(20):
        C = rng.normal(size=(3, 6))  # 3 rows in a 6-dim latent: span is a strict subspace
        z = rng.normal(size=(5, 6))
        out = constrain(de.constant(z), cm_of(C)).data
        coef, *_ = np.linalg.lstsq(C.T, out.T, rcond=None)
        assert np.max(np.abs(C.T @ coef - out.T)) < 1e-8


def test_address_weights_invariants():
    rng = np.random.default_rng(5)
    c = ConstraintMatrix.init(rng, 10, 4)
    aw = address_weights(de.constant(rng.normal(size=(8, 4))), c)
    assert np.allclose(np.linalg.norm(aw.w, axis=1), 1.0)
    assert np.all((aw.w_hat == 0) | (aw.w_hat == aw.w))
    assert np.all(aw.w_hat[aw.w <= c.ths] == 0)


def test_constrain_gradient_check_away_from_threshold():
    rng = np.random.default_rng(6)
    c = ConstraintMatrix.init(rng, 5, 3)
    z = rng.normal(size=(2, 3))
    aw = address_weights(de.constant(z), c)
    assert np.min(np.abs(aw.w - c.ths)) > 1e-3
    w = de.constant(rng.normal(size=(2, 3)))
    assert de.finite_diff_check(lambda t: de.sum(constrain(t, c) * w), z) < 1e-4
    zc = de.constant(z)
    assert de.param_gradient_check(lambda: de.sum(constrain(zc, c) * w), c.C) < 1e-4


def test_init_rows_nonzero():
    c = ConstraintMatrix.init(np.random.default_rng(7), 50, 20)
    assert c.C.shape == (50, 20)
    assert np.all(np.linalg.norm(c.C.data, axis=1) > 1e-6)
    with pytest.raises(ValueError):
        ConstraintMatrix(de.parameter(np.ones((2, 2))), ths=-0.1)
