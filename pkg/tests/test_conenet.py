import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conerace import conenet as cn
from conerace.errors import DatasetError
from conerace.sensors import BLUE, RED


def _sample(rng, n):
    pts = rng.uniform(-8, 8, (n, 2))
    return cn.encode_input(pts, rng.choice([RED, BLUE], n))


def test_encode_three_cones():
    x = cn.encode_input([(3.0, 1.0), (1.0, 0.5), (2.0, -1.0)])
    assert np.array_equal(x[:6], [1.0, 0.5, 2.0, -1.0, 3.0, 1.0])
    assert np.all(x[6:] == 0.0) and x.shape == (30,)


def test_encode_empty():
    assert np.array_equal(cn.encode_input(np.zeros((0, 2))), np.zeros(30))


def test_encode_truncates_to_nearest_fifteen():
    rng = np.random.default_rng(4)
    pts = rng.uniform(-10, 10, (17, 2))
    labels = np.arange(17)
    x, lab = cn.encode_input(pts, labels)
    ranked = sorted(range(17), key=lambda i: math.hypot(*pts[i]))[:15]
    assert np.array_equal(x.reshape(15, 2), pts[ranked])
    assert list(lab) == ranked


@given(st.integers(0, 2**32 - 1), st.integers(0, 15))
def test_forward_rows_are_distributions(seed, n):
    rng = np.random.default_rng(seed)
    net = cn.Network.init(seed % 1000)
    p = cn.forward(net, cn.encode_input(rng.uniform(-10, 10, (n, 2))))
    assert p.shape == (15, 3)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-6) and np.all((p > 0) & (p < 1))


def test_forward_rejects_bad_length():
    with pytest.raises(ValueError):
        cn.forward(cn.Network.init(0), np.zeros(29))


def test_zero_head_is_uniform():
    net = cn.Network.init(3, zero_head=True)
    x, _ = _sample(np.random.default_rng(0), 9)
    assert np.allclose(cn.forward(net, x), 1.0 / 3.0, atol=1e-15)


def test_forward_is_continuous():
    net = cn.Network.init(1)
    x, _ = _sample(np.random.default_rng(1), 10)
    p0 = cn.forward(net, x)
    for h in (1e-3, 1e-5, 1e-7):
        xp = x.copy()
        xp[4] += h
        # the network is piecewise linear before the softmax, so the change is O(h)
        assert np.abs(cn.forward(net, xp) - p0).max() <= 100.0 * h


def test_uniform_loss_is_ln3():
    net = cn.Network.init(0, zero_head=True)
    x, lab = _sample(np.random.default_rng(2), 7)
    loss, _ = cn.backward(net, x, lab)
    assert loss == pytest.approx(math.log(3.0), abs=1e-14)


def test_padding_only_gives_zero_gradient():
    loss, grads = cn.backward(cn.Network.init(0), np.zeros(30), np.zeros(15, dtype=int))
    assert loss == 0.0 and all(np.all(g == 0.0) for g in grads.values())


def gradient_check_error(n_per_array=None, seed=7):
    """Worst relative error of analytic vs central-difference gradients.

    ``n_per_array`` limits the check to a random subset of each parameter
    array; ``None`` checks every parameter.
    """
    rng = np.random.default_rng(seed)
    batch = [_sample(rng, int(rng.integers(3, 16))) for _ in range(10)]
    X = np.array([b[0] for b in batch])
    Y = np.array([b[1] for b in batch])
    net = cn.Network.init(5)
    # nonzero biases so every code path carries gradient
    for k, v in net.params.items():
        if k.endswith(".b"):
            v[:] = rng.normal(0, 0.1, v.shape)
    _, grads = cn.loss_and_grads(net, X, Y)
    h = 1e-5
    worst = 0.0
    for name, p in net.params.items():
        flat = p.reshape(-1)
        g = grads[name].reshape(-1)
        idx = range(flat.size) if n_per_array is None else rng.choice(flat.size, min(n_per_array, flat.size), replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            lp, _ = cn.loss_and_grads(net, X, Y)
            flat[i] = old - h
            lm, _ = cn.loss_and_grads(net, X, Y)
            flat[i] = old
            num = (lp - lm) / (2 * h)
            worst = max(worst, abs(num - g[i]) / max(abs(num), abs(g[i]), 1e-6))
    return worst


def test_gradient_check_sampled():
    assert gradient_check_error(n_per_array=60) < 1e-4


def test_adam_single_step_by_hand():
    cfg = cn.TrainConfig()
    params = {"w": np.array([1.0, -2.0, 0.5])}
    g = {"w": np.array([0.3, -4.0, 0.0])}
    state = cn.AdamState.zeros_like(params)
    cn.adam_step(params, g, state, cfg)
    m_hat = (1 - 0.9) * g["w"] / (1 - 0.9)
    v_hat = (1 - 0.999) * g["w"] ** 2 / (1 - 0.999)
    expect = np.array([1.0, -2.0, 0.5]) - 1e-3 * m_hat / (np.sqrt(v_hat) + 1e-8)
    assert np.allclose(params["w"], expect, rtol=0, atol=1e-15)
    assert state.t == 1
    # first step moves each nonzero coordinate by about lr against the gradient sign
    assert params["w"][0] == pytest.approx(1.0 - 1e-3, abs=1e-10)


def test_adam_zero_gradient_and_determinism():
    p1, p2 = {"w": np.ones(4)}, {"w": np.ones(4)}
    s = cn.AdamState.zeros_like(p1)
    cn.adam_step(p1, {"w": np.zeros(4)}, s)
    assert np.array_equal(p1["w"], np.ones(4))
    s1, s2 = cn.AdamState.zeros_like(p1), cn.AdamState.zeros_like(p2)
    g = {"w": np.array([0.1, -0.2, 0.3, 0.0])}
    for _ in range(2):
        cn.adam_step(p1, g, s1)
        cn.adam_step(p2, g, s2)
    assert np.array_equal(p1["w"], p2["w"])
    with pytest.raises(ValueError):
        cn.adam_step(p1, g, s1, t=0)


def test_train_config_validation():
    with pytest.raises(ValueError):
        cn.TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        cn.TrainConfig(n_val=0)


@pytest.fixture(scope="module")
def dataset():
    return cn.generate_dataset(400, seed=3)


def test_dataset_is_deterministic(dataset):
    again = cn.generate_dataset(400, seed=3)
    assert np.array_equal(dataset.inputs, again.inputs) and np.array_equal(dataset.labels, again.labels)


def test_dataset_class_balance(dataset):
    lab = dataset.labels[dataset.labels != cn.PAD]
    assert 0.4 <= np.mean(lab == RED) <= 0.6


def test_dataset_blue_on_left(dataset):
    # mirrored samples swap both sides, so blue stays left in every sample
    pts = dataset.inputs.reshape(-1, 15, 2)
    agree = [np.mean(pts[i, dataset.labels[i] == BLUE, 1] > pts[i, dataset.labels[i] == RED, 1].mean()) for i in range(len(dataset)) if np.any(dataset.labels[i] == BLUE) and np.any(dataset.labels[i] == RED)]
    assert np.mean(agree) > 0.9


def test_dataset_cones_are_separated(dataset):
    pts = dataset.inputs.reshape(-1, 15, 2)
    for i in range(len(dataset)):
        p = pts[i, dataset.labels[i] != cn.PAD]
        d = np.hypot(*(p[:, None] - p[None]).transpose(2, 0, 1))
        np.fill_diagonal(d, np.inf)
        assert d.min() >= 0.5


def test_mirror_is_an_involution(dataset):
    x, lab = dataset.inputs[0], dataset.labels[0]
    xm, lm = cn.mirror_sample(x, lab)
    assert np.array_equal(xm[0::2], x[0::2]) and np.array_equal(xm[1::2], -x[1::2])
    assert np.array_equal(lm == RED, lab == BLUE)
    xb, lb = cn.mirror_sample(xm, lm)
    assert np.array_equal(xb, x) and np.array_equal(lb, lab)


def test_dataset_shortfall_raises():
    with pytest.raises(DatasetError):
        cn.split_dataset(cn.generate_dataset(10, seed=0), cn.TrainConfig())


def test_short_training_is_reproducible_and_learns(dataset):
    cfg = cn.TrainConfig(epochs=3, n_train=240, n_val=80, n_test=80, seed=2)
    a, b = cn.train(cfg, dataset), cn.train(cfg, dataset)
    assert a.history == b.history
    assert a.history[-1]["train_loss"] < a.history[0]["train_loss"]


def test_save_load_round_trip(tmp_path):
    net = cn.Network.init(9)
    net.save(tmp_path / "m.bin")
    back = cn.Network.load(tmp_path / "m.bin")
    assert all(np.array_equal(net.params[k], back.params[k]) for k in net.params)
    (tmp_path / "bad.bin").write_bytes(b"nope" * 8)
    with pytest.raises(ValueError):
        cn.Network.load(tmp_path / "bad.bin")


def test_lidar_color_probabilities_in_input_order():
    net = cn.Network.init(0, zero_head=True)
    colors, conf = cn.lidar_color_probabilities(net, [(5.0, 1.0), (2.0, -1.0)])
    assert colors.shape == (2,) and np.allclose(conf, 0.5)
