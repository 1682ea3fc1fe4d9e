import datetime as dt

import numpy as np
import pytest

from fx_attrib import lstm
from fx_attrib.errors import DataError, NumericError
from fx_attrib.lstm import LstmParameters, Scaler, TrainConfig, forward, init_parameters, train

LN_1_05 = 0.048790164169432003


def hand_params():
    # H = 1; rows are input, forget, output, candidate
    return LstmParameters(
        np.array([[0.3], [-0.2], [0.1], [0.4]]), np.array([[0.2], [0.1], [-0.3], [0.5]]),
        np.array([0.0, 1.0, 0.1, -0.1]), np.array([[0.7]]), np.array([0.05]),
    )


def test_init_shapes_and_forget_bias():
    p = init_parameters(TrainConfig(hidden_size=8, seed=1))
    assert p.Wx.shape == (32, 1) and p.Wh.shape == (32, 8) and p.b.shape == (32,)
    assert p.V.shape == (1, 8) and p.c.shape == (1,)
    assert np.all(p.b[8:16] == 1.0)
    bound = 1 / np.sqrt(8)
    assert np.all(np.abs(p.Wh) <= bound)


def test_init_is_seeded():
    a = init_parameters(TrainConfig(hidden_size=4, seed=5))
    b = init_parameters(TrainConfig(hidden_size=4, seed=5))
    c = init_parameters(TrainConfig(hidden_size=4, seed=6))
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays().values(), b.arrays().values()))
    assert not np.array_equal(a.Wh, c.Wh)


def test_zero_network_outputs_bias():
    p = LstmParameters.zeros(4)
    p.c[0] = 0.37
    assert forward(p, np.array([0.1, 0.9, 0.4, 0.2, 0.6])) == 0.37


def test_hand_computed_recurrence():
    # five steps evaluated independently at 40 digits: 0.074589000769995737088...
    out = forward(hand_params(), np.array([0.1, 0.2, 0.3, 0.4, 0.5]))
    assert out == pytest.approx(0.07458900076999574, abs=1e-15)


def test_order_matters():
    p = hand_params()
    assert forward(p, np.array([0.1, 0.2, 0.3, 0.4, 0.5])) != forward(p, np.array([0.5, 0.4, 0.3, 0.2, 0.1]))


def test_golden_forward():
    # recorded from this implementation; the H = 1 case above pins the recurrence
    p = init_parameters(TrainConfig(hidden_size=8, seed=3))
    assert forward(p, np.array([0.1, 0.5, 0.2, 0.9, 0.4])) == pytest.approx(-0.42054711801163214, abs=1e-14)


def test_batch_forward_matches_single():
    p = init_parameters(TrainConfig(hidden_size=5, seed=2))
    W = np.random.default_rng(0).uniform(size=(7, 5))
    batch = forward(p, W)
    assert np.allclose(batch, [forward(p, w) for w in W], rtol=0, atol=1e-15)


def test_memorizes_single_sample():
    cfg = TrainConfig(hidden_size=4, epochs=500, learning_rate=1e-2)
    res = train(init_parameters(cfg), (np.array([[0.2, 0.4, 0.6, 0.5, 0.3]]), np.array([0.7])), None, cfg)
    assert res.losses[-1] < 1e-6


def test_linear_series_is_learned():
    rates = 1 + 0.001 * np.arange(200)
    scaler = Scaler.fit(rates)
    s = scaler.scale(rates)
    W = np.stack([s[i:i + 5] for i in range(195)])
    cfg = TrainConfig(hidden_size=8, epochs=500, learning_rate=1e-2)
    res = train(init_parameters(cfg), (W, s[5:]), None, cfg)
    final, _ = lstm.loss_and_gradients(res.params, W, s[5:])
    assert final < 1e-4
    assert res.losses[-1] <= res.losses[0]


def test_training_is_deterministic():
    cfg = TrainConfig(hidden_size=3, epochs=30, learning_rate=1e-2, seed=9)
    data = (np.random.default_rng(1).uniform(size=(20, 5)), np.random.default_rng(2).uniform(size=20))
    a = train(init_parameters(cfg), data, None, cfg)
    b = train(init_parameters(cfg), data, None, cfg)
    assert a.losses == b.losses
    assert np.array_equal(a.params.Wh, b.params.Wh)


def test_train_needs_samples():
    cfg = TrainConfig(hidden_size=2)
    with pytest.raises(DataError):
        train(init_parameters(cfg), [], Scaler(0, 1), cfg)


def test_gradient_check_seed_one():
    p = init_parameters(TrainConfig(hidden_size=3, seed=1))
    rng = np.random.default_rng(1)
    assert lstm.gradient_check(p, rng.uniform(size=5), float(rng.uniform())) < 1e-4


def test_gradient_check_coarse_step_is_worse():
    p = init_parameters(TrainConfig(hidden_size=3, seed=1))
    rng = np.random.default_rng(1)
    w, t = rng.uniform(size=5), float(rng.uniform())
    assert lstm.gradient_check(p, w, t, 1e-2) > lstm.gradient_check(p, w, t, 1e-5)


def test_zero_params_bias_gradient():
    p = LstmParameters.zeros(2)
    loss, grads = lstm.loss_and_gradients(p, np.array([0.3] * 5), 0.5)
    # loss = (c - t)^2, so dL/dc = 2 (c - t) = -1
    assert grads["c"][0] == pytest.approx(-1.0, abs=1e-15)
    assert np.all(grads["Wh"] == 0)
    assert lstm.gradient_check(p, np.array([0.3] * 5), 0.5) < 1e-6


def test_scaler_descale_and_return():
    sc = Scaler(1.0, 2.0)
    assert sc.descale(0.5) == 1.5
    p = LstmParameters.zeros(1)
    p.c[0] = 0.5
    fp = lstm.predict_rate(p, sc, [1.2] * 5, 1.5, dt.date(2020, 1, 2))
    assert fp.predicted_rate == 1.5 and fp.predicted_return == 0.0
    p.c[0] = 0.05
    fp = lstm.predict_rate(p, Scaler(0.0, 21.0), [1.0] * 5, 1.0)
    assert fp.predicted_rate == pytest.approx(1.05, abs=1e-15)
    assert fp.predicted_return == pytest.approx(LN_1_05, abs=1e-14)


def test_non_positive_prediction_raises():
    p = LstmParameters.zeros(1)
    p.c[0] = -5.0
    with pytest.raises(NumericError):
        lstm.predict_rate(p, Scaler(1.0, 2.0), [1.5] * 5, 1.5)


def test_degenerate_scaler():
    with pytest.raises(DataError):
        Scaler.fit([1.0, 1.0, 1.0])


def test_save_load_round_trip(tmp_path):
    p = init_parameters(TrainConfig(hidden_size=3, seed=4))
    lstm.save(tmp_path / "m.txt", p, Scaler(0.5, 0.9), 5)
    q, sc, window = lstm.load(tmp_path / "m.txt")
    assert window == 5 and sc == Scaler(0.5, 0.9)
    for name, arr in p.arrays().items():
        assert np.array_equal(arr, getattr(q, name))


def test_load_rejects_foreign_file(tmp_path):
    (tmp_path / "x.txt").write_text("hello\n")
    with pytest.raises(DataError):
        lstm.load(tmp_path / "x.txt")


def test_tiny_gradient_entry_is_exact():
    # seed 14, H = 4: this Wh entry has gradient ~7.6e-8, where a 1e-5 central
    # difference is dominated by float round-off; a larger step and a
    # fourth-order difference agree with the analytic value
    p = init_parameters(TrainConfig(hidden_size=4, seed=14))
    rng = np.random.default_rng(14)
    w, t = rng.uniform(size=5), float(rng.uniform())
    _, grads = lstm.loss_and_gradients(p, w, t)
    flat = p.Wh.reshape(-1)
    orig = flat[37]

    def loss_at(h):
        flat[37] = orig + h
        value, _ = lstm.loss_and_gradients(p, w, t)
        flat[37] = orig
        return value

    h = 1e-3
    richardson = (8 * (loss_at(h / 2) - loss_at(-h / 2)) - (loss_at(h) - loss_at(-h))) / (6 * h)
    analytic = grads["Wh"].reshape(-1)[37]
    assert abs(analytic) < 1e-7
    assert abs(richardson - analytic) / abs(analytic) < 1e-5
