import logging

import numpy as np
import pytest

from eyewave import mlp
from eyewave.mlp import Label, Mlp, StopReason, TrainingConfig
from oracles import finite_difference_gradient, random_spd, separable_patch_set


def random_data(rng, n):
    x = rng.uniform(0, 1, (n, mlp.N_INPUT))
    return mlp.samples_from_arrays(x, rng.integers(0, 2, n).astype(bool))


def test_parameter_count_and_order():
    theta = np.arange(mlp.N_PARAMS, dtype=float)
    net = Mlp.from_flat(theta)
    assert net.W1[0, 1] == 1 and net.W1[1, 0] == 9
    assert net.b1[0] == 54
    assert net.W2[0, 0] == 60 and net.W2[1, 0] == 66
    assert net.b2.tolist() == [72, 73]
    np.testing.assert_array_equal(net.flatten(), theta)


def test_mlp_validates():
    with pytest.raises(ValueError):
        Mlp(np.zeros((6, 8)), np.zeros(6), np.zeros((2, 6)), np.zeros(2))
    with pytest.raises(ValueError):
        Mlp.from_flat(np.r_[np.zeros(73), np.nan])


def test_init_determinism_and_range():
    a, b = mlp.init(3), mlp.init(3)
    np.testing.assert_array_equal(a.flatten(), b.flatten())
    assert not np.array_equal(a.flatten(), mlp.init(4).flatten())
    assert np.all(np.abs(a.W1) <= 1 / 3)
    assert np.all(np.abs(a.W2) <= 1 / np.sqrt(6))
    assert not a.b1.any() and not a.b2.any()


def test_zero_net_outputs_half():
    out, hidden = mlp.forward(Mlp.zeros(), np.arange(9.0))
    np.testing.assert_array_equal(out, [0.5, 0.5])
    np.testing.assert_array_equal(hidden, np.full(6, 0.5))


def test_forward_single_path_by_hand():
    W1 = np.zeros((6, 9))
    W1[2, 4] = 1.5
    W2 = np.zeros((2, 6))
    W2[1, 2] = -2.0
    net = Mlp(W1, np.zeros(6), W2, np.zeros(2))
    x = np.zeros(9)
    x[4] = 0.8
    sig = lambda t: 1 / (1 + np.exp(-t))
    h2 = sig(1.5 * 0.8)
    out, _ = mlp.forward(net, x)
    np.testing.assert_allclose(out, [0.5, sig(-2.0 * h2)], rtol=1e-15)


def test_outputs_in_open_interval():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        net = Mlp.from_flat(rng.normal(0, 3, mlp.N_PARAMS))
        out, _ = mlp.forward(net, rng.normal(0, 3, 9))
        assert np.all((out > 0) & (out < 1))


def test_sigmoid_extremes_are_finite():
    s = mlp.sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    assert np.all(np.isfinite(s))
    np.testing.assert_array_equal(s, [0.0, 0.5, 1.0])


def test_mse_examples():
    data = mlp.samples_from_arrays(np.zeros((1, 9)), [True])
    assert mlp.mse(Mlp.zeros(), data) == 0.25
    # target equals the zero net's output exactly
    exact = mlp.Dataset(np.zeros((1, 9)), np.array([[0.5, 0.5]]))
    assert mlp.mse(Mlp.zeros(), exact) == 0.0
    with pytest.raises(ValueError):
        mlp.mse(Mlp.zeros(), [])


def test_mse_bounded():
    rng = np.random.default_rng(1)
    for _ in range(50):
        m = mlp.mse(Mlp.from_flat(rng.normal(0, 5, mlp.N_PARAMS)), random_data(rng, 10))
        assert 0 <= m <= 1


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    for _ in range(100):
        theta = rng.normal(0, 1, mlp.N_PARAMS)
        data = random_data(rng, int(rng.integers(1, 12)))
        _, g = mlp._loss_and_grad(theta, data)
        fd = finite_difference_gradient(theta, data)
        assert np.linalg.norm(g - fd) <= 1e-4 * max(np.linalg.norm(fd), 1e-8)


def test_gradient_zero_at_perfect_fit():
    exact = mlp.Dataset(np.ones((3, 9)), np.full((3, 2), 0.5))
    np.testing.assert_array_equal(mlp.gradient(Mlp.zeros(), exact), np.zeros(mlp.N_PARAMS))


def test_gradient_averaging_invariance():
    rng = np.random.default_rng(3)
    net = mlp.init(0)
    one = random_data(rng, 1)
    many = mlp.Dataset(np.repeat(one.inputs, 5, 0), np.repeat(one.targets, 5, 0))
    np.testing.assert_allclose(mlp.gradient(net, many), mlp.gradient(net, one), rtol=1e-12, atol=1e-15)


def test_fr_quadratic_oracle():
    rng = np.random.default_rng(4)
    for _ in range(20):
        n = int(rng.integers(2, 11))
        A, b = random_spd(rng, n), rng.normal(size=n)
        fun = lambda x: (0.5 * x @ A @ x - b @ x, A @ x - b)
        for state in mlp.fletcher_reeves(fun, np.zeros(n), mlp.quadratic_exact_step(A)):
            if np.linalg.norm(state.g) < 1e-8:
                break
            assert state.iteration < n
        assert state.iteration <= n
        np.testing.assert_allclose(state.x, np.linalg.solve(A, b), atol=1e-7)


def test_fr_restarts_on_schedule():
    A = np.diag([1.0, 2.0, 3.0, 4.0])
    fun = lambda x: (0.5 * x @ A @ x - x.sum(), A @ x - 1.0)
    states = mlp.fletcher_reeves(fun, np.zeros(4), mlp.backtracking(0.5), restart_interval=2)
    flags = [next(states).restarted for _ in range(5)]
    assert flags[0] and flags[2] and flags[4]


def test_backtracking_raises_without_descent():
    search = mlp.backtracking(0.5, max_halvings=3)
    fun = lambda x: (float(x @ x), 2 * x)
    with pytest.raises(mlp.LineSearchFailed):
        search(fun, np.ones(2), 2.0, np.full(2, 2.0), np.ones(2))  # ascent direction


def test_training_config_validation():
    with pytest.raises(ValueError):
        TrainingConfig(mse_goal=0)
    with pytest.raises(ValueError):
        TrainingConfig(max_epochs=0)


def test_train_goal_met_at_epoch_zero():
    net = mlp.init(0)
    x = np.random.default_rng(5).uniform(size=(4, 9))
    out, _ = mlp.forward(net, x)
    net2, rep = mlp.train(net, mlp.Dataset(x, out))
    assert rep.stop_reason == StopReason.GOAL_MET
    assert rep.epochs == 0 and rep.final_mse < 1e-30
    np.testing.assert_array_equal(net2.flatten(), net.flatten())


def test_train_separable_set():
    net, rep = mlp.train(mlp.init(0), separable_patch_set())
    assert rep.stop_reason == StopReason.GOAL_MET
    assert rep.final_mse <= 1e-3
    assert [r.epoch for r in rep.records] == list(range(len(rep.records)))
    mses = [r.mse for r in rep.records]
    assert all(b <= a for a, b in zip(mses, mses[1:]))
    assert rep.net is net


def test_train_max_epochs_and_determinism():
    rng = np.random.default_rng(6)
    data = random_data(rng, 30)
    cfg = TrainingConfig(max_epochs=5, mse_goal=1e-9)
    a = mlp.train(mlp.init(1), data, cfg)
    b = mlp.train(mlp.init(1), data, cfg)
    assert a[1].stop_reason == StopReason.MAX_EPOCHS and a[1].epochs == 5
    assert a[1].to_text() == b[1].to_text()
    np.testing.assert_array_equal(a[0].flatten(), b[0].flatten())


def test_train_gradient_vanished():
    rng = np.random.default_rng(7)
    cfg = TrainingConfig(min_gradient=10.0, mse_goal=1e-12)
    _, rep = mlp.train(mlp.init(0), random_data(rng, 10), cfg)
    assert rep.stop_reason == StopReason.GRADIENT_VANISHED and rep.epochs == 0


def test_train_warns_on_single_class(caplog):
    data = mlp.samples_from_arrays(np.zeros((3, 9)), [True] * 3)
    with caplog.at_level(logging.WARNING, logger="eyewave.mlp"):
        mlp.train(mlp.init(0), data, TrainingConfig(max_epochs=2))
    assert "single class" in caplog.text


def test_train_non_finite_raises():
    data = mlp.Dataset(np.full((2, 9), np.nan), np.array([[0.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(mlp.TrainingError) as err:
        mlp.train(mlp.init(0), data)
    assert err.value.epoch == 0


def test_report_text_format():
    _, rep = mlp.train(mlp.init(0), separable_patch_set(5), TrainingConfig(max_epochs=2, mse_goal=1e-12))
    lines = rep.to_text().splitlines()
    assert len(lines) == len(rep.records)
    epoch, m, g = lines[0].split("\t")
    assert int(epoch) == 0 and float(m) == rep.records[0].mse and float(g) == rep.records[0].gradient_norm


def test_classify_rules():
    W2 = np.zeros((2, 6))
    net = Mlp(np.zeros((6, 9)), np.zeros(6), W2, np.log([0.1 / 0.9, 0.9 / 0.1]))
    label, score = mlp.classify(net, np.zeros(9))
    assert label is Label.EYE
    assert score == pytest.approx(0.8)
    assert mlp.classify(Mlp.zeros(), np.zeros(9)) == (Label.NON_EYE, 0.0)


def test_classify_batch_agrees_with_classify():
    rng = np.random.default_rng(8)
    net = mlp.init(2)
    x = rng.uniform(size=(20, 9))
    scores = mlp.classify_batch(net, x)
    for row, s in zip(x, scores):
        label, score = mlp.classify(net, row)
        assert score == pytest.approx(s, abs=1e-15)
        assert (label is Label.EYE) == (s > 0)


def test_balanced_replicates_minority():
    data = mlp.samples_from_arrays(np.arange(54.0).reshape(6, 9), [True] + [False] * 5)
    out = mlp.balanced(data)
    eye = out.targets[:, 1] > out.targets[:, 0]
    assert eye.sum() == 5 and (~eye).sum() == 5
