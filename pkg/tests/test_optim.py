import numpy as np
import pytest

from qvnn import AdamState, adam_step
from qvnn.errors import NumericalError


def scalar_adam(grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Reference recurrence on plain floats."""
    x, m, v = 0.0, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return x


def test_zero_gradient_leaves_everything():
    p = {"a": np.array([1.0, -2.0])}
    state = AdamState()
    adam_step(state, p, {"a": np.zeros(2)})
    np.testing.assert_array_equal(p["a"], [1.0, -2.0])
    assert not state.m["a"].any() and not state.v["a"].any()


def test_matches_scalar_recurrence():
    rng = np.random.default_rng(0)
    gs = rng.normal(size=40)
    p = {"w": np.zeros(1)}
    state = AdamState()
    for g in gs:
        adam_step(state, p, {"w": np.array([g])})
    assert p["w"][0] == pytest.approx(scalar_adam(gs), rel=1e-12)
    assert state.step == 40


def test_constant_gradient_step_bounded_by_lr():
    p = {"w": np.zeros(1)}
    state = AdamState(lr=1e-2)
    prev = 0.0
    for _ in range(200):
        adam_step(state, p, {"w": np.array([3.7])})
        step = prev - p["w"][0]
        assert 0 < step <= 1e-2 * (1 + 1e-9)
        prev = p["w"][0]
    assert step == pytest.approx(1e-2, rel=1e-6)


def test_identical_gradients_identical_updates():
    p = {"a": np.array([0.5]), "b": np.array([0.5])}
    state = AdamState()
    for g in (0.3, -1.0, 2.0):
        adam_step(state, p, {"a": np.array([g]), "b": np.array([g])})
    assert p["a"][0] == p["b"][0]


def test_nan_names_layer_and_leaves_params():
    p = {"3.W": np.ones(2)}
    state = AdamState()
    with pytest.raises(NumericalError, match="3.W"):
        adam_step(state, p, {"3.W": np.array([np.nan, 0.0])})
    np.testing.assert_array_equal(p["3.W"], 1.0)
    assert state.step == 0


def test_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step(AdamState(), {"w": np.zeros(2)}, {"w": np.zeros(3)})
