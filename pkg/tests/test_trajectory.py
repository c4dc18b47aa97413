import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pedkd import autograd as ag
from pedkd.autograd import ContractError
from pedkd.scenes import ambiguity_params, generate_scenes, generate_trajectory
from pedkd.student import StudentEncoder
from pedkd.trajectory import (RnnPredictor, TrajConfig, TrajData, ade_fde, behavior_oracle, evaluate_traj,
                              rnn_rollout, train_traj)

from helpers import TINY_STUDENT, same_bits, snapshot


def zero_all(model):
    for _, p in model.named_parameters(include_frozen=True):
        p.data = np.zeros_like(p.data)


def test_zero_weights_predict_origin(rng):
    m = RnnPredictor("fusion", embed_dim=3, hidden=5)
    zero_all(m)
    out = rnn_rollout(m, rng.normal(size=(10, 2)), rng.normal(size=3))
    assert out.shape == (30, 2)
    np.testing.assert_array_equal(out.data, 0.0)


def test_rollout_is_deterministic(rng):
    h, e = rng.normal(size=(4, 10, 2)), rng.normal(size=(4, 3))
    a = rnn_rollout(RnnPredictor("fusion", 3, seed=2), h, e).data
    b = rnn_rollout(RnnPredictor("fusion", 3, seed=2), h, e).data
    assert a.tobytes() == b.tobytes()


def test_one_unit_recursion_by_hand():
    m = RnnPredictor("baseline", hidden=1, layers=1, history_len=2, horizon=2)
    wx = np.array([[0.4], [-0.3]])
    wh, b, wo, bo = 0.9, 0.1, np.array([0.5, -2.0]), np.array([0.05, 0.2])
    m.W_x[0].data, m.W_h[0].data, m.b[0].data = wx, np.array([[wh]]), np.array([b])
    m.W_o.data, m.b_o.data = wo.reshape(1, 2), bo
    hist = [(1.0, 2.0), (0.5, -1.0)]

    def cell(x, h):
        pre = x[0] * wx[0, 0] + x[1] * wx[1, 0] + b + (0.0 if h is None else h * wh)
        return math.tanh(pre)

    h = None
    for x in hist:
        h = cell(x, h)
    x = hist[-1]
    expected = []
    for _ in range(2):
        h = cell(x, h)
        x = (h * wo[0] + bo[0], h * wo[1] + bo[1])
        expected.append(x)
    np.testing.assert_allclose(rnn_rollout(m, np.array(hist)).data, expected, atol=1e-12)


def test_mode_and_shape_contracts(rng):
    base, fused = RnnPredictor("baseline"), RnnPredictor("fusion", embed_dim=4)
    h = rng.normal(size=(10, 2))
    with pytest.raises(ContractError):
        rnn_rollout(base, h, np.zeros(4))
    with pytest.raises(ContractError):
        rnn_rollout(fused, h)
    with pytest.raises(ContractError):
        rnn_rollout(fused, h, np.zeros(5))
    with pytest.raises(ContractError):
        rnn_rollout(base, rng.normal(size=(9, 2)))
    with pytest.raises(ValueError):
        RnnPredictor("fusion", embed_dim=0)


def test_rollout_gradients_through_all_steps(rng):
    m = RnnPredictor("fusion", embed_dim=2, hidden=4, seed=3)
    h, e = rng.normal(size=(2, 10, 2)), rng.normal(size=(2, 2))
    target = rng.normal(size=(2, 30, 2))
    rep = ag.grad_check(lambda *_: ag.smooth_l1(rnn_rollout(m, h, e), target), m.parameters(), max_coords=20)
    assert rep.max_rel_error < 1e-4


def test_ade_fde_examples():
    truth = np.zeros((30, 2))
    assert ade_fde(truth, truth) == (0.0, 0.0)
    assert ade_fde(truth + [1.0, 0.0], truth) == pytest.approx((1.0, 1.0))
    late = truth.copy()
    late[-1] = [3.0, 0.0]
    assert ade_fde(late, truth) == pytest.approx((0.1, 3.0))
    with pytest.raises(ContractError):
        ade_fde(truth[:29], truth)


@given(arrays(np.float64, (30, 2), elements=st.floats(-10, 10)), arrays(np.float64, (30, 2), elements=st.floats(-10, 10)))
def test_ade_fde_bounds(p, t):
    ade, fde = ade_fde(p, t)
    step = np.linalg.norm(p - t, axis=1)
    assert 0 <= ade <= step.max() + 1e-12 and fde >= 0


@given(arrays(np.float64, 2, elements=st.floats(-5, 5)), st.floats(0, 2 * math.pi))
def test_constant_distance_gives_equal_ade_fde(offset, angle):
    t = np.cumsum(np.ones((30, 2)), axis=0)
    rot = np.array([math.cos(angle), math.sin(angle)]) * np.linalg.norm(offset)
    ade, fde = ade_fde(t + rot, t)
    assert ade == pytest.approx(fde, abs=1e-9)


@pytest.fixture(scope="module")
def traj_set():
    scenes = generate_scenes(21, 96, ambiguity_params())
    samples = [generate_trajectory(s) for s in scenes]
    images = np.stack([s.image for s in scenes])
    return TrajData.from_samples(samples), images


def test_relative_frame_round_trips(traj_set):
    data, _ = traj_set
    zero_pred = np.zeros_like(data.future)
    # a model that predicts the origin everywhere is scored in absolute coordinates
    ade, _ = ade_fde(zero_pred + data.origin[:, None], data.future + data.origin[:, None])
    assert ade == pytest.approx(ade_fde(zero_pred, data.future)[0])
    np.testing.assert_array_equal(data.history[:, -1], 0.0)


def test_training_lowers_loss_and_keeps_encoder_frozen(traj_set):
    data, images = traj_set
    enc = StudentEncoder(8, TINY_STUDENT, seed=1)
    enc.freeze()
    before = snapshot(enc)
    cfg = TrajConfig(hidden=8, epochs=6, batch_size=16, lr0=1e-2)
    model = train_traj(cfg, data, "fusion", encoder=enc, params=ambiguity_params(), seed=0)
    assert model.loss[-1] < model.loss[0]
    assert same_bits(before, snapshot(enc))
    pred = model.predict(data, np.stack([enc.embed(images[i:i + 1].astype(float)).data[0] for i in range(len(data))]))
    assert pred.shape == (len(data), 30, 2)


def test_fusion_refuses_trainable_encoder(traj_set):
    data, _ = traj_set
    with pytest.raises(ContractError):
        train_traj(TrajConfig(epochs=1), data, "fusion", encoder=StudentEncoder(8, TINY_STUDENT))


def test_baseline_training_is_deterministic(traj_set):
    data, _ = traj_set
    cfg = TrajConfig(hidden=6, epochs=2, batch_size=32)
    a = train_traj(cfg, data, "baseline", seed=4)
    b = train_traj(cfg, data, "baseline", seed=4)
    assert a.loss == b.loss


def test_behavior_oracle_is_near_noise_floor(traj_set):
    data, _ = traj_set
    rep = evaluate_traj(behavior_oracle(data), data)
    assert rep["ade"] < 0.06
    stay = evaluate_traj(np.repeat(data.origin[:, None], 30, axis=1), data)
    assert stay["ade"] > 5 * rep["ade"]
