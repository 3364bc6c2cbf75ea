import numpy as np
import pytest

from dualconv.errors import ConfigError, ShapeError
from dualconv.graph import FC, Conv, ModelConfig, Pool, Route, Skip, Upsample
from dualconv.kernels import ConvKind, ConvSpec
from dualconv.network import instantiate, softmax_cross_entropy
from dualconv.tensor import seeded_random
from dualconv.train import (SyntheticTask, TrainConfig, end_to_end_gradcheck, layer_gradcheck, multistep_lr,
                            relative_errors, sgd_step, train)
from dualconv.zoo import tiny

SMALL_TASK = SyntheticTask(train_size=64, test_size=64, seed=3)


def test_two_layer_output_shape():
    cfg = ModelConfig("two", (1, 3, 8, 8), (Conv("a", ConvSpec(ConvKind.STANDARD, 3, 8, 3, 2, 1)),
                                            Conv("b", ConvSpec(ConvKind.DUAL, 8, 4, 3, 1, 0, 4))))
    out = instantiate(cfg, 0).forward(seeded_random((1, 3, 8, 8), 0))
    assert out.shape == (1, 4, 2, 2)


def test_instantiate_deterministic():
    a, b = instantiate(tiny("tiny-all"), 5), instantiate(tiny("tiny-all"), 5)
    for layer in a.weights:
        for blk in a.weights[layer]:
            assert a.weights[layer][blk].tobytes() == b.weights[layer][blk].tobytes()


def test_zero_weights_zero_logits():
    net = instantiate(tiny("tiny-mixed"), 0)
    for ws in net.weights.values():
        for blk in ws:
            ws[blk][:] = 0
    assert not net.forward(seeded_random((3, 4, 8, 8), 1)).any()


def test_forward_rejects_wrong_input():
    with pytest.raises(ShapeError):
        instantiate(tiny("tiny-dual"), 0).forward(seeded_random((1, 3, 8, 8), 0))


def test_softmax_cross_entropy():
    logits = np.zeros((2, 4))
    loss, grad = softmax_cross_entropy(logits, np.array([0, 3]))
    assert loss == pytest.approx(np.log(4))
    np.testing.assert_allclose(grad.sum(axis=1), 0, atol=1e-15)
    assert grad[0, 0] == pytest.approx((0.25 - 1) / 2)


def test_sgd_step():
    one = np.ones(1)
    assert sgd_step(one, np.zeros(1), 0.1).item() == 1.0
    assert sgd_step(one, one, 0.1).item() == pytest.approx(0.9)
    assert sgd_step(one, np.zeros(1), 0.1, 5e-4).item() == pytest.approx(0.99995)
    with pytest.raises(ShapeError):
        sgd_step(one, np.ones(2), 0.1)


@pytest.mark.parametrize("args,expected", [((0.1, 0.1, 50, 49), 0.1), ((0.1, 0.1, 50, 50), 0.01),
                                           ((0.1, 0.2, 60, 120), 0.004)])
def test_multistep(args, expected):
    assert multistep_lr(*args) == pytest.approx(expected)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=-1)
    with pytest.raises(ConfigError):
        TrainConfig(lr_decay_factor=0)


def test_task_is_deterministic():
    a, b = SMALL_TASK.generate(), SMALL_TASK.generate()
    for u, v in zip(a, b):
        assert np.array_equal(u, v)


def test_zero_lr_constant_loss():
    res = train(tiny("tiny-dual"), SMALL_TASK, TrainConfig(learning_rate=0.0, epochs=3))
    losses = [r.train_loss for r in res.history]
    assert losses == [losses[0]] * 3


def test_small_lr_loss_decreases():
    res = train(tiny("tiny-dual"), SMALL_TASK, TrainConfig(learning_rate=0.01, epochs=5, weight_decay=0.0))
    losses = [r.train_loss for r in res.history]
    assert all(b <= a for a, b in zip(losses, losses[1:]))


def test_same_seed_same_trajectory(tmp_path):
    cfg = TrainConfig(epochs=2)
    a = train(tiny("tiny-dual"), SMALL_TASK, cfg, trajectory_path=tmp_path / "a.csv")
    b = train(tiny("tiny-dual"), SMALL_TASK, cfg, trajectory_path=tmp_path / "b.csv")
    assert a.history == b.history
    assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "epoch,lr,train_loss,test_accuracy"


def test_frozen_zero_pointwise_dual_trains_like_group():
    dual_net = instantiate(tiny("tiny-dual"), 0)
    frozen = []
    for name, ws in dual_net.weights.items():
        if "pointwise" in ws:
            ws["pointwise"][:] = 0
            frozen.append(f"{name}.pointwise")
    cfg = TrainConfig(epochs=2, frozen=tuple(frozen))
    d = train(tiny("tiny-dual"), SMALL_TASK, cfg, network=dual_net)
    g = train(tiny("tiny-group"), SMALL_TASK, cfg)
    assert [r.train_loss for r in d.history] == [r.train_loss for r in g.history]


def test_train_rejects_mismatched_task():
    with pytest.raises(ConfigError):
        train(tiny("tiny-dual", classes=3), SMALL_TASK, TrainConfig(epochs=1))


# -- gradient checks ------------------------------------------------------------

def test_relative_error_floor():
    a = np.array([1.0, 0.0])
    n = np.array([1.0, 1e-12])
    assert relative_errors(a, n).max() <= 1e-9


def test_gradcheck_single_pointwise():
    assert end_to_end_gradcheck(tiny("single-pointwise"), 0).max_rel_error <= 1e-7


@pytest.mark.parametrize("spec", [ConvSpec(ConvKind.DUAL, 4, 4, 3, 1, 1, 2), ConvSpec(ConvKind.HET, 4, 2, 3, 2, 1, None, 4),
                                  ConvSpec(ConvKind.DEPTHWISE_SEPARABLE, 3, 4, 3, 2, 0)], ids=lambda s: s.kind.value)
def test_layer_gradcheck(spec):
    assert layer_gradcheck(spec, 1, shape=(1, None, 5, 5)).max_rel_error <= 1e-6


def test_graph_ops_gradcheck():
    std = ConvKind.STANDARD
    cfg = ModelConfig("ops", (1, 2, 6, 6), (
        Conv("a", ConvSpec(std, 2, 4, 3, 1, 1)),
        Pool("mp", "max", 2, 2, 1),
        Conv("b", ConvSpec(ConvKind.DUAL, 4, 4, 3, 1, 1, 2), act="relu6"),
        Skip("sk", "mp"),
        Upsample("up", 2),
        Conv("c", ConvSpec(std, 4, 2, 1, 2, 0), src="up"),
        Route("rt", ("c", "b")),
        Pool("ap", "avg", 3, 1, 1),
        Pool("gp", "gavg"),
        FC("fc", 6, 3),
    ))
    assert end_to_end_gradcheck(cfg, 0, batch=2).max_rel_error <= 1e-6


def test_zero_input_zero_first_layer_grad():
    net = instantiate(tiny("tiny-dual"), 0, 64)
    x = np.zeros((2, 4, 8, 8))
    out = net.forward(x, keep=True)
    _, d = softmax_cross_entropy(out.reshape(2, -1), np.array([0, 1]))
    grads, _ = net.backward(d.reshape(out.shape))
    first = next(iter(net.weights))
    assert not grads[first]["spatial"].any()
