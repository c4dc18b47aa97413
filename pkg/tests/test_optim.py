import numpy as np
import pytest
from hypothesis import given, strategies as st

from pedkd.autograd import Tensor
from pedkd.optim import Adam, AdamState, LinearDecay, adam_step


def param(a):
    return Tensor(np.asarray(a, dtype=float), requires_grad=True)


@given(st.floats(1e-6, 1.0), st.integers(1, 10_000))
def test_linear_decay_positive_and_non_increasing(lr0, T):
    s = LinearDecay(lr0, T)
    ts = sorted({0, 1, T // 2, T - 1, T})
    lrs = [s.lr(t) for t in ts]
    assert all(v > 0 for v in lrs)
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_linear_decay_endpoints():
    s = LinearDecay(1e-4, 99)
    assert s.lr(0) == 1e-4
    assert s.lr(99) == pytest.approx(1e-4 / 100, rel=1e-12)


def test_zero_gradient_is_identity():
    p = param([1.0, -2.0, 3.0])
    before = p.data.copy()
    st_ = AdamState.for_params([p])
    adam_step([p], [np.zeros(3)], st_, LinearDecay(1e-2, 10))
    np.testing.assert_array_equal(p.data, before)
    assert st_.step == 1


def test_first_step_is_lr_times_sign():
    g = np.array([0.5, -3.0, 1e-3])
    p = param(np.zeros(3))
    adam_step([p], [g], AdamState.for_params([p]), LinearDecay(1e-3, 10))
    # closed form: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    np.testing.assert_allclose(p.data, -1e-3 * g / (np.abs(g) + 1e-8), rtol=1e-12)


def test_second_step_uses_decayed_rate():
    g = np.array([2.0])
    p = param([0.0])
    state = AdamState.for_params([p])
    sched = LinearDecay(1e-2, 4)
    adam_step([p], [g], state, sched)
    x1 = p.data.copy()
    adam_step([p], [g], state, sched)
    m = 0.9 * 0.1 * 2.0 + 0.1 * 2.0
    v = 0.999 * 0.001 * 4.0 + 0.001 * 4.0
    mh, vh = m / (1 - 0.9 ** 2), v / (1 - 0.999 ** 2)
    np.testing.assert_allclose(p.data, x1 - sched.lr(1) * mh / (np.sqrt(vh) + 1e-8), rtol=1e-12)


def test_shape_mismatch_raises():
    p = param([1.0, 2.0])
    with pytest.raises(ValueError):
        adam_step([p], [np.zeros(3)], AdamState.for_params([p]), LinearDecay(1e-3, 5))


def test_adam_minimizes_quadratic():
    p = param([3.0, -4.0])
    opt = Adam([p], LinearDecay(0.1, 500))
    for _ in range(500):
        opt.zero_grad()
        p.grad = 2 * p.data
        opt.step()
    assert np.abs(p.data).max() < 1e-2
