"""Core math: layers, stable softmax, parameter store, finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capgan.errors import ShapeError
from capgan.nn import (
    LstmState,
    ParamStore,
    affine,
    grad_check,
    lstm_cell_backward,
    lstm_cell_forward,
    lstm_step,
    rng_from_seed,
    sigmoid,
    softmax,
    softmax_xent,
)


def test_affine_identity():
    assert np.allclose(affine([1.0, 2.0], np.eye(2), [0.0, 0.0]), [1.0, 2.0])


def test_affine_hand_example():
    out = affine([1.0, 1.0], [[1.0, 2.0], [3.0, 4.0]], [1.0, 0.0])
    assert np.allclose(out, [4.0, 7.0])


def test_affine_annihilation():
    rng = rng_from_seed(3)
    x = rng.normal(0, 1, 5)
    assert np.allclose(affine(x, np.zeros((4, 5)), np.zeros(4)), np.zeros(4))


def test_affine_shape_mismatch():
    with pytest.raises(ShapeError):
        affine([1.0, 2.0, 3.0], np.eye(2), [0.0, 0.0])


def _zero_lstm_store(hidden, inputs):
    store = ParamStore()
    store.add("lstm_W", np.zeros((4 * hidden, inputs + hidden)))
    store.add("lstm_b", np.zeros(4 * hidden))
    return store


def test_lstm_step_zero_params_zero_cell():
    store = _zero_lstm_store(1, 1)
    out = lstm_step(LstmState(np.zeros(1), np.zeros(1), 0), np.array([0.7]), store)
    assert out.h == pytest.approx(0.0) and out.c == pytest.approx(0.0)
    assert out.t == 1


def test_lstm_step_zero_params_halves_cell():
    store = _zero_lstm_store(1, 1)
    out = lstm_step(LstmState(np.zeros(1), np.array([2.0]), 0), np.array([0.0]), store)
    assert out.c[0] == pytest.approx(1.0, abs=1e-15)
    assert out.h[0] == pytest.approx(0.5 * np.tanh(1.0), abs=1e-15)


def test_lstm_step_halves_any_cell_state():
    rng = rng_from_seed(11)
    c = rng.normal(0, 2, 6)
    store = _zero_lstm_store(6, 3)
    out = lstm_step(LstmState(np.zeros(6), c, 4), rng.normal(0, 1, 3), store)
    assert np.allclose(out.c, 0.5 * c, atol=1e-15)
    assert out.t == 5


def test_lstm_step_matches_scalar_reference():
    """Per-coordinate replay of the gate equations with plain python floats."""
    import math

    H, E = 4, 3
    rng = rng_from_seed(21)
    W = rng.normal(0, 0.7, (4 * H, E + H))
    b = rng.normal(0, 0.3, 4 * H)
    store = ParamStore()
    store.add("lstm_W", W)
    store.add("lstm_b", b)
    x = rng.normal(0, 1, E)
    h0 = rng.normal(0, 0.5, H)
    c0 = rng.normal(0, 0.8, H)
    out = lstm_step(LstmState(h0.copy(), c0.copy(), 0), x, store)

    xh = list(x) + list(h0)
    for k in range(H):
        def dot(row):
            return sum(W[row][j] * xh[j] for j in range(E + H)) + b[row]

        i = 1.0 / (1.0 + math.exp(-dot(k)))
        f = 1.0 / (1.0 + math.exp(-dot(H + k)))
        o = 1.0 / (1.0 + math.exp(-dot(2 * H + k)))
        g = math.tanh(dot(3 * H + k))
        c = f * c0[k] + i * g
        h = o * math.tanh(c)
        assert out.c[k] == pytest.approx(c, rel=1e-12)
        assert out.h[k] == pytest.approx(h, rel=1e-12)


def test_lstm_hidden_in_open_unit_interval():
    rng = rng_from_seed(5)
    for _ in range(5):
        h, c, _ = lstm_cell_forward(
            rng.normal(0, 3, (4, 5)),
            rng.normal(0, 3, (4, 6)),
            rng.normal(0, 3, (4, 6)),
            rng.normal(0, 2, (24, 11)),
            rng.normal(0, 2, 24),
        )
        assert np.all(np.abs(h) < 1.0)


def test_lstm_shape_error():
    with pytest.raises(ShapeError):
        lstm_cell_forward(np.zeros((1, 3)), np.zeros((1, 4)), np.zeros((1, 4)),
                          np.zeros((16, 5)), np.zeros(16))


# --- softmax / cross-entropy ------------------------------------------------------


def test_softmax_xent_uniform():
    loss, grad = softmax_xent(np.zeros(10), 3)
    assert loss == pytest.approx(np.log(10.0), abs=1e-12)
    assert np.allclose(grad, np.full(10, 0.1) - np.eye(10)[3])


def test_softmax_xent_saturated():
    logits = np.full(7, -1000.0)
    logits[2] = 1000.0
    loss, _ = softmax_xent(logits, 2)
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_softmax_xent_hand_evaluated():
    logits = np.array([1.0, 2.0, 3.0])
    loss, _ = softmax_xent(logits, 0)
    assert loss == pytest.approx(-1.0 + np.log(np.exp(1) + np.exp(2) + np.exp(3)), abs=1e-12)


def test_softmax_xent_out_of_range_target():
    with pytest.raises(IndexError):
        softmax_xent(np.zeros(4), 4)


def test_softmax_xent_finite_at_extreme_logits():
    rng = rng_from_seed(8)
    logits = rng.uniform(-1e4, 1e4, 50)
    loss, grad = softmax_xent(logits, 17)
    assert np.isfinite(loss) and np.all(np.isfinite(grad))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(min_value=-1e4, max_value=1e4), min_size=1, max_size=30))
def test_softmax_is_a_distribution(logits):
    p = softmax(np.array(logits))
    assert np.all(p >= 0.0)
    assert abs(p.sum() - 1.0) < 1e-9


def test_sigmoid_known_values():
    assert float(sigmoid(np.float64(0.0))) == 0.5
    assert float(sigmoid(np.log(3.0))) == pytest.approx(0.75, abs=1e-15)
    assert float(sigmoid(np.float64(-800.0))) == pytest.approx(0.0, abs=1e-300)


# --- ParamStore --------------------------------------------------------------------


def test_param_store_grad_buffers_match_shapes():
    store = ParamStore(seed=5)
    store.add("a", np.ones((2, 3)))
    store.add("b", np.zeros(4))
    for name, p in store.params.items():
        assert store.grads[name].shape == p.shape
        assert np.all(store.grads[name] == 0.0)


def test_param_store_zero_grads_leaves_params():
    store = ParamStore()
    store.add("a", np.ones((2, 2)))
    store.grads["a"] += 3.0
    before = store.params["a"].copy()
    store.zero_grads()
    assert np.all(store.grads["a"] == 0.0)
    assert np.array_equal(store.params["a"], before)


def test_param_store_duplicate_name_rejected():
    store = ParamStore()
    store.add("a", np.ones(2))
    with pytest.raises(ValueError):
        store.add("a", np.ones(2))


def test_param_store_freeze_is_immutable_copy():
    store = ParamStore()
    store.add("a", np.ones(3))
    frozen = store.freeze()
    with pytest.raises(ValueError):
        frozen.params["a"][0] = 2.0
    store.params["a"][0] = 5.0
    assert frozen.params["a"][0] == 1.0


def test_assert_finite_catches_nan():
    store = ParamStore()
    store.add("a", np.array([1.0, np.nan]))
    with pytest.raises(FloatingPointError):
        store.assert_finite()


# --- grad_check ---------------------------------------------------------------------


def test_grad_check_quadratic():
    store = ParamStore()
    rng = rng_from_seed(2)
    store.add("w", rng.normal(0, 1, (3, 4)))

    def f(s):
        w = s.params["w"]
        s.grads["w"] += 2.0 * w
        return float((w ** 2).sum())

    assert grad_check(f, store) < 1e-8


def test_grad_check_constant_function():
    store = ParamStore()
    store.add("w", np.ones(5))

    def f(s):
        return 1.5

    assert grad_check(f, store) == 0.0


def test_grad_check_lstm_hidden_sum():
    """One recurrence step, loss = sum of the new hidden state."""
    H, E = 4, 3
    rng = rng_from_seed(9)
    store = ParamStore()
    store.add("lstm_W", rng.normal(0, 0.5, (4 * H, E + H)))
    store.add("lstm_b", rng.normal(0, 0.2, 4 * H))
    x = rng.normal(0, 1, (1, E))
    h0 = rng.normal(0, 0.5, (1, H))
    c0 = rng.normal(0, 0.5, (1, H))

    def f(s):
        h, c, cache = lstm_cell_forward(x, h0, c0, s.params["lstm_W"], s.params["lstm_b"])
        _, _, _, dW, db = lstm_cell_backward(np.ones_like(h), np.zeros_like(c), cache,
                                             s.params["lstm_W"])
        s.grads["lstm_W"] += dW
        s.grads["lstm_b"] += db
        return float(h.sum())

    assert grad_check(f, store) < 1e-4


def test_grad_check_rejects_nonfinite():
    store = ParamStore()
    store.add("w", np.ones(2))

    def f(s):
        return float("nan")

    with pytest.raises(FloatingPointError):
        grad_check(f, store)
