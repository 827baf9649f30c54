import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from modelaided import nn


class LogDecoder:
    """10 ** (z * s + m), as used for log-scaled targets."""

    def __init__(self, m=1.0, s=0.5):
        self.m, self.s = m, s

    def decode(self, z):
        return 10.0 ** (z * self.s + self.m)

    def decode_grad(self, z):
        return math.log(10.0) * self.s * 10.0 ** (z * self.s + self.m)


def reference_forward(model, x):
    h = np.asarray(x, dtype=float)
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = np.array([sum(W[r, c] * h[c] for c in range(W.shape[1])) + b[r] for r in range(W.shape[0])])
        h = np.maximum(z, 0.0) if i < len(model.weights) - 1 else z
    return h


def test_shapes_and_he_scale():
    m = nn.init_mlp((1, 8, 8, 2, 1))
    assert [W.shape for W in m.weights] == [(8, 1), (8, 8), (2, 8), (1, 2)]
    assert all(np.all(b == 0) for b in m.biases)
    big = nn.init_mlp((400, 500), rng_seed=3)
    assert abs(big.weights[0].std() / math.sqrt(2.0 / 400) - 1.0) < 0.02


def test_forward_matches_hand_loop(rng):
    m = nn.init_mlp((3, 5, 4, 2), rng_seed=1)
    for layer in m.biases:
        layer += rng.normal(size=layer.shape)
    X = rng.normal(size=(6, 3))
    out = nn.forward(m, X)
    for x, y in zip(X, out):
        np.testing.assert_allclose(y, reference_forward(m, x), rtol=0, atol=1e-12)
    np.testing.assert_array_equal(nn.forward(m, X[0]), out[0])


def test_clamped_head():
    m = nn.init_mlp((1, 1), nn.CLAMPED_UNIT)
    m.weights[0][:] = 2.0
    np.testing.assert_array_equal(nn.forward(m, np.array([[-1.0], [0.25], [3.0]])).ravel(), [0.0, 0.5, 1.0])
    assert nn.forward(m, [3.0], clamp=False)[0] == 6.0


def test_relative_mse_examples():
    assert nn.relative_mse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert nn.relative_mse([2.0], [1.0]) == 1.0
    assert nn.relative_mse([1.1, 0.0], [1.0, 2.0]) == pytest.approx((0.01 + 1.0) / 2)
    with pytest.raises(ValueError):
        nn.relative_mse([1.0], [0.0])


def flat(grads):
    return np.concatenate([g.ravel() for g in grads])


def numeric_gradient(model, X, Y, loss, decoder, h=1e-6):
    out = []
    for arr in model.params():
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            k = it.multi_index
            old = arr[k]
            arr[k] = old + h
            fp = nn.evaluate_loss(model, X, Y, loss, decoder, clamp=False)
            arr[k] = old - h
            fm = nn.evaluate_loss(model, X, Y, loss, decoder, clamp=False)
            arr[k] = old
            g[k] = (fp - fm) / (2 * h)
        out.append(g)
    return out


@pytest.mark.parametrize("case", range(20))
def test_backprop_matches_finite_differences(case):
    r = np.random.default_rng(100 + case)
    sizes = [int(r.integers(1, 4))] + [int(r.integers(2, 6)) for _ in range(int(r.integers(1, 3)))] + [int(r.integers(1, 3))]
    m = nn.init_mlp(sizes, rng_seed=case)
    for b in m.biases:
        b += 0.1 * r.normal(size=b.shape)
    X = r.normal(size=(7, sizes[0]))
    loss, dec = [(nn.MSE, None), (nn.RELATIVE_MSE, None), (nn.RELATIVE_MSE, LogDecoder())][case % 3]
    Y = r.normal(size=(7, sizes[-1])) if dec else 1.0 + r.random((7, sizes[-1]))
    _, grads = nn.loss_and_gradient(m, X, Y, loss, dec)
    fd = numeric_gradient(m, X, Y, loss, dec)
    a, b = flat(grads), flat(fd)
    assert np.linalg.norm(a - b) <= 1e-4 * max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def test_duplicated_batch_same_gradient(rng):
    m = nn.init_mlp((2, 4, 1), rng_seed=2)
    X, Y = rng.normal(size=(5, 2)), 1.0 + rng.random((5, 1))
    v1, g1 = nn.loss_and_gradient(m, X, Y)
    v2, g2 = nn.loss_and_gradient(m, np.vstack([X, X]), np.vstack([Y, Y]))
    assert v1 == pytest.approx(v2, rel=1e-14)
    for a, b in zip(g1, g2):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


@given(st.floats(-1e3, 1e3).filter(lambda g: abs(g) > 1e-3))
def test_adam_first_step_closed_form(g):
    state = nn.AdamState.zeros_like([np.zeros(1)])
    new = nn.adam_step([np.zeros(1)], [np.array([g])], state)
    # m_hat = g, v_hat = g^2
    assert new[0][0] == pytest.approx(-1e-3 * g / (abs(g) + 1e-8), rel=1e-12)
    assert state.t == 1


def test_adam_zero_gradient_is_noop():
    p = [np.array([1.5, -2.0])]
    new = nn.adam_step(p, [np.zeros(2)], nn.AdamState.zeros_like(p))
    np.testing.assert_array_equal(new[0], p[0])


def test_adam_minimizes_quadratic():
    theta = [np.array([3.0])]
    state = nn.AdamState.zeros_like(theta)
    for _ in range(5000):
        theta = nn.adam_step(theta, [2 * theta[0]], state, learning_rate=1e-2)
    assert abs(theta[0][0]) < 1e-2


def test_zero_epochs_and_zero_rows_return_copy():
    m = nn.init_mlp((1, 3, 1), rng_seed=4)
    out, rep = nn.train(m, np.ones((4, 1)), np.ones((4, 1)), nn.TrainConfig(epochs=0))
    assert out is not m and out.checksum() == m.checksum() and rep.train_curve == []
    out, _ = nn.train(m, np.empty((0, 1)), np.empty((0, 1)), nn.TrainConfig(epochs=5))
    assert out.checksum() == m.checksum()


def test_fine_tune_zero_epochs_identical_and_shape_checked():
    m = nn.init_mlp((2, 4, 1), rng_seed=5)
    out, _ = nn.fine_tune(m, np.ones((3, 2)), np.ones((3, 1)), nn.TrainConfig(epochs=0))
    for a, b in zip(out.params(), m.params()):
        np.testing.assert_array_equal(a, b)
    with pytest.raises(nn.ArchitectureMismatchError):
        nn.fine_tune(m, np.ones((3, 3)), np.ones((3, 1)), nn.TrainConfig(epochs=1))
    with pytest.raises(nn.ArchitectureMismatchError):
        nn.fine_tune(m, np.ones((3, 2)), np.ones((3, 2)), nn.TrainConfig(epochs=1))


def test_training_is_deterministic_and_learns(rng):
    X = rng.uniform(1.0, 2.0, size=(400, 1))
    Y = 2.0 * X
    cfg = nn.TrainConfig(epochs=300, batch_size=32, learning_rate=1e-2, rng_seed=9)
    m0 = nn.init_mlp((1, 8, 1), rng_seed=1)
    a, rep = nn.train(m0, X, Y, cfg)
    b, _ = nn.train(m0, X, Y, cfg)
    assert a.checksum() == b.checksum()
    assert rep.final_val_loss < 1e-3
    assert len(rep.train_curve) == len(rep.val_curve) == 300
    assert rep.n_val == 80


def test_split_keeps_a_training_row():
    tr, va = nn.split_indices(1, 0.9, 0)
    assert tr.size == 1 and va.size == 0
    tr, va = nn.split_indices(10, 0.2, 3)
    assert sorted(np.concatenate([tr, va])) == list(range(10)) and va.size == 2


def test_hidden_unit_permutation_invariance(rng):
    m = nn.init_mlp((3, 6, 2), rng_seed=8)
    m.biases[0] += rng.normal(size=6)
    perm = rng.permutation(6)
    p = m.copy()
    p.weights[0] = m.weights[0][perm]
    p.biases[0] = m.biases[0][perm]
    p.weights[1] = m.weights[1][:, perm]
    X = rng.normal(size=(10, 3))
    np.testing.assert_allclose(nn.forward(p, X), nn.forward(m, X), rtol=1e-13, atol=1e-14)


def test_save_load_bit_exact(tmp_path, rng):
    m = nn.init_mlp((3, 5, 2), nn.CLAMPED_UNIT, rng_seed=6)
    m.biases[0] += rng.normal(size=5) * 1e-7
    m.normalization = {"feature_mean": [0.1, 0.2, 0.3]}
    back = nn.load(nn.save(m, tmp_path / "m.json"))
    assert back.layer_sizes == m.layer_sizes and back.output_activation == m.output_activation
    assert back.normalization == m.normalization
    for a, b in zip(back.params(), m.params()):
        np.testing.assert_array_equal(a, b)
    assert back.checksum() == m.checksum()


def test_minor_version_loads_and_major_rejected(tmp_path):
    d = nn.to_dict(nn.init_mlp((1, 2, 1)))
    d["version"] = "1.7"
    assert nn.from_dict(d).layer_sizes == (1, 2, 1)
    d["version"] = "2.0"
    with pytest.raises(nn.ModelFormatError):
        nn.from_dict(d)


@pytest.mark.parametrize("text", ["", "{not json", "[]", json.dumps({"format": "other"}),
                                  json.dumps({"format": nn.FORMAT_NAME, "version": "1.0", "layer_sizes": [1, 2],
                                              "weights": [[1.0]], "biases": [[0.0, 0.0]],
                                              "output_activation": "linear"})])
def test_corrupt_files_rejected(tmp_path, text):
    path = tmp_path / "bad.json"
    path.write_text(text)
    with pytest.raises(nn.ModelFormatError):
        nn.load(path)


def test_invalid_configs():
    with pytest.raises(ValueError):
        nn.TrainConfig(epochs=-1)
    with pytest.raises(ValueError):
        nn.TrainConfig(validation_fraction=1.0)
    with pytest.raises(ValueError):
        nn.TrainConfig(loss="huber")
