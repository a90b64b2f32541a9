"""Adam: closed-form first step, recurrence-oracle trajectory, edge cases."""
import numpy as np
import pytest

from facelet.optim import Adam, AdamState, adam_step
from facelet.tensor import Parameter

from .oracles import adam_trajectory


def test_zero_grad_leaves_value_unchanged_but_advances_step():
    p = Parameter(np.array([1.5, -2.5]))
    s = AdamState.for_parameter(p, lr=0.1)
    adam_step(p, s)
    np.testing.assert_array_equal(p.data, [1.5, -2.5])
    assert s.step == 1


def test_first_step_closed_form():
    p = Parameter(np.array(0.0))
    p.grad[...] = 1.0
    s = AdamState.for_parameter(p, lr=0.1)
    adam_step(p, s)
    assert float(p.data) == pytest.approx(-0.1, abs=1e-6)


def test_ten_step_trajectory_matches_recurrence_oracle():
    grads = [1.0, -0.5, 0.25, 2.0, -1.0, 0.1, 0.1, -0.3, 0.7, -0.2]
    p = Parameter(np.array(0.3, dtype=np.float64))
    s = AdamState.for_parameter(p, lr=0.05)
    got = []
    for g in grads:
        p.grad[...] = g
        adam_step(p, s)
        got.append(float(p.data))
    expected = adam_trajectory(0.3, grads, lr=0.05)
    np.testing.assert_allclose(got, expected, atol=1e-6)


def test_lr_zero_is_bit_identical():
    rng = np.random.default_rng(0)
    p = Parameter(rng.standard_normal((4, 4)))
    before = p.data.copy()
    s = AdamState.for_parameter(p, lr=0.0)
    p.grad[...] = rng.standard_normal((4, 4))
    adam_step(p, s)
    np.testing.assert_array_equal(p.data, before)
    assert s.step == 1


def test_frozen_parameter_rejected():
    p = Parameter(np.zeros(3), trainable=False)
    s = AdamState.for_parameter(p)
    with pytest.raises(ValueError):
        adam_step(p, s)


def test_grad_left_untouched_by_step():
    p = Parameter(np.zeros(3))
    p.grad[...] = 2.0
    adam_step(p, AdamState.for_parameter(p, lr=0.01))
    np.testing.assert_array_equal(p.grad, [2.0, 2.0, 2.0])


def test_adam_wrapper_filters_frozen_and_steps():
    live = Parameter(np.array(1.0))
    frozen = Parameter(np.array(1.0), trainable=False)
    opt = Adam([live, frozen], lr=0.1)
    live.grad[...] = 1.0
    opt.step()
    assert float(live.data) == pytest.approx(-0.1 + 1.0, abs=1e-6)
    assert float(frozen.data) == 1.0
    opt.zero_grad()
    assert not live.grad.any()
