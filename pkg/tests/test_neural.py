import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eodeblur.neural import (
    Architecture, CorruptWeightsError, ModelWeights, ShapeError, Tensor, TrainConfig, backward,
    content_loss, conv2d, conv2d_forward, gradcheck, gradcheck_report, init_weights, load_weights,
    lr_at, mimo_forward, pyramid, save_weights, train_toy,
)
from eodeblur.neural import tensor as T
from eodeblur.neural.loss import content_loss_graph
from eodeblur.neural.model import Graph, parameter_shapes
from eodeblur.neural.train import loss_and_gradients
from eodeblur.neural.weights_io import expected_file_size


def naive_conv(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for ni in range(n):
        for oi in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = b[oi]
                    for ci in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[ni, ci, i * stride + u, j * stride + v] * w[oi, ci, u, v]
                    out[ni, oi, i, j] = acc
    return out


def test_conv_identity_and_ones():
    x = np.random.default_rng(0).normal(size=(1, 2, 5, 5))
    eye = np.zeros((2, 2, 1, 1))
    eye[0, 0] = eye[1, 1] = 1
    np.testing.assert_array_equal(conv2d_forward(x, eye, None)[0], x)
    out, _ = conv2d_forward(np.ones((1, 1, 5, 5)), np.ones((1, 1, 3, 3)), None, pad=1)
    assert out[0, 0, 2, 2] == 9 and out[0, 0, 0, 0] == 4


@given(st.integers(0, 10_000), st.sampled_from([1, 2]), st.sampled_from([0, 1]))
@settings(max_examples=10, deadline=None)
def test_conv_matches_naive_loop(seed, stride, pad):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(1, 2, 8, 8))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    out, _ = conv2d_forward(x, w, b, stride, pad)
    assert np.abs(out - naive_conv(x, w, b, stride, pad)).max() <= 1e-5


def test_conv_shape_errors():
    with pytest.raises(ShapeError):
        conv2d_forward(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)), None)
    with pytest.raises(ShapeError):
        conv2d_forward(np.zeros((2, 4, 4)), np.zeros((1, 2, 3, 3)), None)


def test_mimo_shapes_identity_determinism():
    x = np.random.default_rng(1).uniform(size=(1, 3, 64, 64)).astype(np.float32)
    w = init_weights(seed=3)
    outs = mimo_forward(w, x)
    assert [o.shape for o in outs] == [(1, 3, 64, 64), (1, 3, 32, 32), (1, 3, 16, 16)]
    again = mimo_forward(w, x)
    assert all(np.array_equal(a, b) for a, b in zip(outs, again))
    ident = mimo_forward(init_weights(seed=3, zero_heads=True), x)
    for o, t in zip(ident, pyramid(x)):
        np.testing.assert_array_equal(o, t)
    with pytest.raises(ShapeError):
        mimo_forward(w, x[:, :, :62])


def test_parameter_count():
    assert init_weights().n_parameters == sum(int(np.prod(s)) for s in parameter_shapes(Architecture()).values())
    assert init_weights().n_parameters == 44_793


def _hand_dft(x):
    n, m = x.shape
    out = np.zeros((n, m), complex)
    for u in range(n):
        for v in range(m):
            for i in range(n):
                for j in range(m):
                    out[u, v] += x[i, j] * np.exp(-2j * np.pi * (u * i / n + v * j / m))
    return out


def test_content_loss_hand_dft():
    rng = np.random.default_rng(2)
    o = rng.normal(size=(1, 1, 4, 4))
    t = rng.normal(size=(1, 1, 4, 4))
    d = (o - t)[0, 0]
    lam = 0.3
    expected = np.abs(d).mean() + lam * np.abs(_hand_dft(d)).mean()
    assert content_loss([o], [t], lam) == pytest.approx(expected, abs=1e-6)
    assert content_loss([o], [t], 0.0) == pytest.approx(np.abs(d).mean(), abs=1e-12)
    assert content_loss([o, o[:, :, :2, :2]], [o, o[:, :, :2, :2]], lam) == 0.0
    with pytest.raises(ShapeError):
        content_loss([o], [t[:, :, :2]], lam)


def test_lr_schedule_values():
    cfg = TrainConfig()
    assert (cfg.batch_size, cfg.lr_initial, cfg.lr_step, cfg.lr_gamma, cfg.total_iterations) == (4, 1e-4, 500, 0.5, 3000)
    assert lr_at(cfg, 0) == 1e-4
    assert lr_at(cfg, 500) == 5e-5
    assert lr_at(cfg, 2999) == 3.125e-6
    with pytest.raises(ValueError):
        lr_at(cfg, 3000)
    with pytest.raises(ValueError):
        lr_at(cfg, -1)


def test_train_config_from_ini(tmp_path):
    p = tmp_path / "t.ini"
    p.write_text("[train]\nbatch_size = 2\nlr_initial = 0.001\n")
    cfg = TrainConfig.from_ini(p, total_iterations=10)
    assert (cfg.batch_size, cfg.lr_initial, cfg.total_iterations) == (2, 1e-3, 10)
    p.write_text("[train]\nbogus = 1\n")
    with pytest.raises(ValueError):
        TrainConfig.from_ini(p)


def test_backward_zero_at_identity():
    x = np.random.default_rng(4).uniform(size=(2, 3, 16, 16)).astype(np.float32)
    grads = backward(init_weights(seed=0, zero_heads=True), x, x, 0.0)
    assert all(not np.any(g) for g in grads.values())


def test_backward_linear_in_loss_scale():
    rng = np.random.default_rng(5)
    x = rng.uniform(size=(1, 3, 16, 16))
    y = rng.uniform(size=(1, 3, 16, 16))
    w = init_weights(seed=2).astype(np.float64)
    _, g1 = loss_and_gradients(w, x, y, 0.1)
    graph = Graph(w)
    loss = content_loss_graph(graph.forward(Tensor(x)), pyramid(y), 0.1)
    T.scale(loss, 2.0).backward()
    for k, g2 in graph.gradients().items():
        np.testing.assert_allclose(g2, 2 * g1[k], atol=1e-6)


@pytest.fixture(scope="module")
def small_sample():
    rng = np.random.default_rng(0)
    return rng.uniform(size=(1, 3, 8, 8)), rng.uniform(size=(1, 3, 8, 8))


def test_gradcheck_passes(small_sample):
    report = gradcheck_report(init_weights(seed=1), small_sample, n_params=60)
    assert report.checked == 60
    assert report.max_relative_error <= 1e-3


def test_gradcheck_detects_sign_flip(small_sample):
    def flipped(*args):
        return {k: -g for k, g in backward(*args).items()}

    err = gradcheck(init_weights(seed=1), small_sample, n_params=20, grad_fn=flipped)
    assert err == pytest.approx(2.0, abs=0.05)


def test_gradcheck_linear_model_exact():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(1, 3, 8, 8))
    r = rng.normal(size=(1, 8, 8, 8))

    def graph_loss(w):
        graph = Graph(w)
        t = graph.tensors
        out = conv2d(Tensor(x), t["enc1.in.w"], t["enc1.in.b"], pad=1)
        return graph, Tensor(np.sum(out.value * r), (out,), lambda g: out._accumulate(g * r))

    def loss_fn(w, _x, _y, _lam):
        return float(graph_loss(w)[1].value)

    def grad_fn(w, _x, _y, _lam):
        graph, loss = graph_loss(w)
        loss.backward()
        return graph.gradients()

    err = gradcheck(init_weights(seed=0), (x, x), n_params=60, grad_fn=grad_fn, loss_fn=loss_fn)
    assert err <= 1e-6


def _pairs(n=4, size=16, seed=0):
    rng = np.random.default_rng(seed)
    clean = rng.uniform(size=(n, 3, size, size)).astype(np.float32)
    blurred = 0.5 * clean + 0.5 * clean.mean(axis=(2, 3), keepdims=True)
    return list(zip(blurred, clean))


def test_train_toy_deterministic_and_errors(tmp_path):
    cfg = TrainConfig(batch_size=2, total_iterations=6, lr_initial=1e-3)
    a = train_toy(cfg, _pairs())
    b = train_toy(cfg, _pairs())
    assert a.curve == b.curve
    rows = a.write_csv(tmp_path / "c.csv").read_text().splitlines()
    assert rows[0] == "iteration,lr,loss" and len(rows) == 7
    with pytest.raises(ValueError):
        train_toy(cfg, [])


def test_weights_roundtrip_and_size(tmp_path):
    w = init_weights(seed=9)
    path = save_weights(w, tmp_path / "w.bin")
    back = load_weights(path)
    for k in w.params:
        np.testing.assert_array_equal(back.params[k], w.params[k])
    data_bytes = sum(4 * a.size for a in w.params.values())
    meta = sum(2 + len(k) + 1 + 4 * a.ndim for k, a in w.params.items())
    desc = b'{"in_channels": 3, "widths": [8, 16, 32]}'
    header = 4 + 2 + 4 + 4 + len(desc)
    assert path.stat().st_size == header + meta + data_bytes == expected_file_size(w)


def test_weights_corruption(tmp_path):
    path = save_weights(init_weights(), tmp_path / "w.bin")
    blob = path.read_bytes()
    path.write_bytes(blob[:-10])
    with pytest.raises(CorruptWeightsError):
        load_weights(path)
    path.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(CorruptWeightsError):
        load_weights(path)
    path.write_bytes(blob[:4] + struct.pack("<H", 99) + blob[6:])
    with pytest.raises(CorruptWeightsError):
        load_weights(path)
    other = init_weights(Architecture(widths=(4, 8, 16)))
    bad = ModelWeights.__new__(ModelWeights)
    bad.arch, bad.params = Architecture(), other.params
    save_weights(bad, path)
    with pytest.raises(CorruptWeightsError):
        load_weights(path)
