"""Squared-error training loop: losses, adjoints, backtracking line search."""

import numpy as np
import pytest

import dagdnn as dd
from conftest import RELU, fd_gradient, random_net
from dagdnn.graph import NodeKind
from dagdnn.training import (
    TrainConfig,
    TrainData,
    bind_params,
    extract_params,
    fidelity,
    loss,
    loss_and_grad,
    param_count,
    train,
    train_run_from_json,
    train_run_to_json,
)


def linear_net(w):
    w = np.asarray(w, dtype=float)
    return dd.build_graph(
        [(0, NodeKind.INPUT, w.shape[1]), (1, NodeKind.OUTPUT, w.shape[0])],
        [(0, 1, dd.Linear(w))],
    )


def relu_net(rng, width=4, dim=2):
    w1 = rng.standard_normal((width, dim))
    b1 = rng.standard_normal(width)
    w2 = rng.standard_normal((1, width))
    return dd.build_graph(
        [(0, NodeKind.INPUT, dim), (1, NodeKind.COMPUTE, width), (2, NodeKind.OUTPUT, 1)],
        [(0, 1, dd.ActAffine(RELU, w1, b1)), (1, 2, dd.Linear(w2))],
    )


def test_fidelity_closed_form():
    g = linear_net([[2.0]])
    data = TrainData(np.array([[1.0], [2.0]]), np.array([[3.0], [3.0]]))
    # residuals: 2*1-3 = -1, 2*2-3 = 1 -> mean of (1, 1) = 1
    assert fidelity(g, data) == pytest.approx(1.0)


def test_loss_adds_scaled_param_count():
    g = linear_net(np.ones((2, 3)))
    data = TrainData(np.zeros((1, 3)), np.zeros((1, 2)))
    assert loss(g, data, lam=0.5) == pytest.approx(fidelity(g, data) + 0.5 * 6)


def test_extract_bind_round_trip(rng):
    g = relu_net(rng)
    theta = extract_params(g)
    assert param_count(theta) == 4 * 2 + 4 + 4
    shifted = {aid: {k: v + 1.0 for k, v in p.items()} for aid, p in theta.items()}
    h = bind_params(g, shifted)
    assert dd.graph_equal(bind_params(h, theta), g)


def test_bind_params_ignores_missing_arcs(rng):
    g = relu_net(rng)
    theta = extract_params(g)
    partial = {aid: p for aid, p in list(theta.items())[:1]}
    h = bind_params(g, partial)  # untouched arcs keep their functions
    assert len(h.arcs) == len(g.arcs)


def test_gradient_matches_finite_differences(rng):
    g = relu_net(rng)
    # nudge inputs away from relu kinks
    x = rng.standard_normal((6, 2)) + 0.05
    y = rng.standard_normal((6, 1))
    data = TrainData(x, y)
    _, grad = loss_and_grad(g, data)
    num = fd_gradient(g, data, lam=0.0)
    for aid in grad:
        for key in grad[aid]:
            a, b = grad[aid][key], num[aid][key]
            denom = max(1.0, float(np.max(np.abs(b))))
            assert np.max(np.abs(a - b)) / denom <= 1e-5, (aid, key)


def test_regularizer_does_not_change_gradient(rng):
    g = relu_net(rng)
    data = TrainData(rng.standard_normal((4, 2)), rng.standard_normal((4, 1)))
    l0, g0 = loss_and_grad(g, data, lam=0.0)
    l1, g1 = loss_and_grad(g, data, lam=0.1)
    assert l1 == pytest.approx(l0 + 0.1 * param_count(extract_params(g)))
    for aid in g0:
        for key in g0[aid]:
            assert np.array_equal(g0[aid][key], g1[aid][key])


def test_train_linear_regression_reaches_normal_equations(rng):
    w0 = rng.standard_normal((1, 2))
    g = linear_net(w0)
    x = rng.standard_normal((32, 2))
    y = x @ np.array([1.5, -0.5]) + 0.01 * rng.standard_normal(32)
    data = TrainData(x, y.reshape(-1, 1))
    run = train(g, data, TrainConfig(max_steps=400, grad_tol=1e-12), seed=0)
    w_star = np.linalg.lstsq(x, y, rcond=None)[0]
    w_hat = run.theta_final[0]["matrix"].ravel()
    assert np.allclose(w_hat, w_star, atol=1e-6)


def test_history_losses_strictly_decrease(rng):
    g = relu_net(rng)
    data = TrainData(rng.standard_normal((8, 2)), rng.standard_normal((8, 1)))
    run = train(g, data, TrainConfig(max_steps=40), seed=3)
    losses = [h["loss"] for h in run.history]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_train_is_deterministic(rng):
    g = relu_net(rng)
    data = TrainData(rng.standard_normal((8, 2)), rng.standard_normal((8, 1)))
    cfg = TrainConfig(max_steps=25)
    r1 = train(g, data, cfg, seed=11)
    r2 = train(g, data, cfg, seed=11)
    assert [h["loss"] for h in r1.history] == [h["loss"] for h in r2.history]
    for aid in r1.theta_final:
        for key in r1.theta_final[aid]:
            assert np.array_equal(r1.theta_final[aid][key], r2.theta_final[aid][key])


def test_stop_on_gradient_at_perfect_fit():
    g = linear_net([[2.0]])
    x = np.array([[1.0], [2.0]])
    data = TrainData(x, 2.0 * x)
    run = train(g, data, TrainConfig(max_steps=10), seed=0)
    assert run.stop_reason == "gradient"
    assert run.steps == 0


def test_stop_on_max_steps(rng):
    g = relu_net(rng)
    data = TrainData(rng.standard_normal((8, 2)), rng.standard_normal((8, 1)))
    run = train(g, data, TrainConfig(max_steps=5), seed=0)
    assert run.stop_reason == "max_steps"
    assert run.steps == 5


def test_checkpoint_schedule(rng):
    g = relu_net(rng)
    data = TrainData(rng.standard_normal((8, 2)), rng.standard_normal((8, 1)))
    run = train(g, data, TrainConfig(max_steps=10, checkpoint_every=4), seed=0)
    assert set(run.checkpoints) == {0, 4, 8, 10}


def test_final_graph_reproduces_final_loss(rng):
    g = relu_net(rng)
    data = TrainData(rng.standard_normal((8, 2)), rng.standard_normal((8, 1)))
    cfg = TrainConfig(max_steps=15, lam=0.01)
    run = train(g, data, cfg, seed=5)
    assert loss(run.final_graph(), data, lam=cfg.lam) == pytest.approx(run.final_loss)
    assert fidelity(run.final_graph(), data) == pytest.approx(run.final_fidelity)


def test_best_loss_scans_whole_history(rng):
    g = relu_net(rng)
    data = TrainData(rng.standard_normal((8, 2)), rng.standard_normal((8, 1)))
    run = train(g, data, TrainConfig(max_steps=20), seed=2)
    assert run.best_loss == min(h["loss"] for h in run.history)
    assert run.best_loss == run.final_loss  # descent is monotone


def test_train_data_validates_shapes():
    with pytest.raises(dd.DagDnnError):
        TrainData(np.zeros((0, 2)), np.zeros((0, 1)))
    with pytest.raises(dd.DagDnnError):
        TrainData(np.zeros((3, 2)), np.zeros((4, 1)))


def test_run_json_round_trip(rng):
    g = relu_net(rng)
    data = TrainData(rng.standard_normal((6, 2)), rng.standard_normal((6, 1)))
    run = train(g, data, TrainConfig(max_steps=8, checkpoint_every=3, lam=0.01), seed=9)
    back = train_run_from_json(train_run_to_json(run))
    assert back.steps == run.steps
    assert back.stop_reason == run.stop_reason
    assert back.seed == run.seed
    assert [h["loss"] for h in back.history] == [h["loss"] for h in run.history]
    assert set(back.checkpoints) == set(run.checkpoints)
    for t, theta in run.checkpoints.items():
        for aid in theta:
            for key in theta[aid]:
                assert np.array_equal(back.checkpoints[t][aid][key], theta[aid][key])
    assert dd.graph_equal(back.graph, run.graph)
    assert np.array_equal(back.data.inputs, run.data.inputs)


@pytest.mark.parametrize("seed", range(5))
def test_training_random_nets_never_increases_loss(seed):
    rng = np.random.default_rng(777 + seed)
    g = dd.normalize_all(random_net(rng))
    d_in = g.dim_of(g.input_id)
    d_out = g.dim_of(g.output_id)
    data = TrainData(rng.standard_normal((5, d_in)), rng.standard_normal((5, d_out)))
    run = train(g, data, TrainConfig(max_steps=10), seed=seed)
    losses = [h["loss"] for h in run.history]
    assert all(b <= a for a, b in zip(losses, losses[1:]))
