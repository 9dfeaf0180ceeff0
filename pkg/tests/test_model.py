import math

import numpy as np
import pytest

from splicernn.cells import IrnnParams, parameter_count
from splicernn.model import (
    REFERENCE_ARCHITECTURES,
    PROB_EPS,
    ConfigError,
    ModelConfig,
    SpliceModel,
    backward,
    example_losses,
    forward,
    loss,
    predict,
)

from gradcheck import model_gradient_error
from oracles import central_difference, max_relative_error


def _zeroed(model):
    for arr in model.parameters().values():
        arr[...] = 0.0
    return model


def _random_codes(r, n, w):
    return r.integers(0, 4, size=(n, w))


@pytest.mark.parametrize("kind", ["lstm", "gru", "irnn"])
def test_zero_weights_give_uniform(kind, rng):
    model = _zeroed(SpliceModel.init(ModelConfig(kind, (3,), window_length=6)))
    trace = forward(model, _random_codes(rng, 5, 6))
    np.testing.assert_array_equal(trace.y_hat, 0.5)
    np.testing.assert_allclose(trace.probs, 1 / 3, rtol=1e-15)
    assert loss(trace, [0, 1, 2, 0, 1]) == pytest.approx(math.log(3), rel=1e-14)
    labels, _ = predict(model, _random_codes(rng, 5, 6))
    assert not labels.any()  # ties resolve to class 0


def test_infer_ignores_dropout(rng):
    codes = _random_codes(rng, 8, 10)
    a = SpliceModel.init(ModelConfig("lstm", (5, 4), window_length=10, dropout_rate=0.9, seed=4))
    b = SpliceModel.init(ModelConfig("lstm", (5, 4), window_length=10, dropout_rate=0.0, seed=4))
    assert forward(a, codes).probs.tobytes() == forward(b, codes).probs.tobytes()
    assert predict(a, codes)[1].tobytes() == predict(b, codes)[1].tobytes()


def test_train_equals_infer_without_dropout(rng):
    model = SpliceModel.init(ModelConfig("gru", (4,), window_length=8, seed=2))
    codes = _random_codes(rng, 6, 8)
    assert forward(model, codes, "train").probs.tobytes() == forward(model, codes).probs.tobytes()


def test_train_dropout_needs_randomness(rng):
    model = SpliceModel.init(ModelConfig("gru", (4,), window_length=8, dropout_rate=0.5))
    with pytest.raises(ValueError, match="rng"):
        forward(model, _random_codes(rng, 2, 8), "train")


def test_irnn_hand_oracle():
    cfg = ModelConfig("irnn", (1,), num_classes=3, window_length=2)
    E = np.array([[0.5, -0.2, 0.1, 0.0], [0.3, 0.3, -0.4, 0.2], [-0.1, 0.6, 0.2, 0.4], [0.0, 0.1, 0.0, -0.5]])
    w_x = np.array([0.7, -0.3, 0.5, 0.2])
    layer = IrnnParams(W_x=w_x[None].copy(), W_h=np.array([[0.9]]), b=np.array([0.05]))
    W_out = np.array([[1.2], [-0.8], [0.4]])
    b_out = np.array([0.1, 0.2, -0.3])
    model = SpliceModel(cfg, E.copy(), [layer], W_out.copy(), b_out.copy())

    # window "GA": codes 2, 0
    h1 = max(0.0, sum(a * b for a, b in zip(w_x, E[2])) + 0.05)
    h2 = max(0.0, sum(a * b for a, b in zip(w_x, E[0])) + 0.9 * h1 + 0.05)
    y = [1 / (1 + math.exp(-(W_out[k, 0] * h2 + b_out[k]))) for k in range(3)]
    p = [v / sum(y) for v in y]

    trace = forward(model, np.array([2, 0]))
    assert trace.h_last[0, 0] == pytest.approx(h2, rel=1e-14)
    np.testing.assert_allclose(trace.probs[0], p, rtol=1e-14)


def test_loss_hand_value():
    model = _zeroed(SpliceModel.init(ModelConfig("irnn", (1,), window_length=2)))
    trace = forward(model, np.zeros((1, 2), dtype=int))
    trace.probs = np.array([[0.7, 0.2, 0.1]])
    assert loss(trace, [0]) == pytest.approx(0.356675, abs=5e-7)
    assert example_losses(trace, [2])[0] == pytest.approx(math.log(10), rel=1e-14)


def test_loss_is_finite_when_saturated(rng):
    model = SpliceModel.init(ModelConfig("irnn", (2,), window_length=4))
    model.W_out[...] = 0.0
    model.b_out[...] = [-1e4, 1e4, 1e4]
    trace = forward(model, _random_codes(rng, 3, 4))
    losses = example_losses(trace, [0, 0, 0])
    assert np.all(np.isfinite(losses))
    assert losses[0] == pytest.approx(-math.log(PROB_EPS / (2 - PROB_EPS)), rel=1e-9)


def test_labels_validated(rng):
    model = SpliceModel.init(ModelConfig("irnn", (2,), window_length=4))
    trace = forward(model, _random_codes(rng, 2, 4))
    with pytest.raises(ValueError):
        loss(trace, [0, 3])
    with pytest.raises(ValueError):
        loss(trace, [0])


def test_output_gradient_at_uniform():
    # d(-ln(y0 / sum y)) / dy = -e0 / y0 + 1 / sum y = (-4/3, 2/3, 2/3) at y = 0.5
    y = np.full(3, 0.5)

    def f():
        return -math.log(y[0] / y.sum())

    (numeric,) = central_difference(f, [y])
    np.testing.assert_allclose(numeric, [-4 / 3, 2 / 3, 2 / 3], rtol=1e-8)
    # the model's backward at zero weights: dz = dy * y(1-y)
    model = _zeroed(SpliceModel.init(ModelConfig("irnn", (1,), window_length=2)))
    trace = forward(model, np.zeros((1, 2), dtype=int), "train")
    grads = backward(model, trace, [0])
    np.testing.assert_allclose(grads["output.b"], numeric * 0.25, rtol=1e-8)


def test_backward_rejects_infer_trace(rng):
    model = SpliceModel.init(ModelConfig("lstm", (2,), window_length=4))
    trace = forward(model, _random_codes(rng, 1, 4))
    with pytest.raises(ValueError, match="no caches"):
        backward(model, trace, [0])


@pytest.mark.parametrize("kind", ["lstm", "gru", "irnn"])
@pytest.mark.parametrize("seed", range(4))
def test_whole_model_gradient(kind, seed):
    assert model_gradient_error(kind, 500 + seed) < 1e-5


def test_tiny_w6_model_gradient_covers_embedding():
    model = SpliceModel.init(ModelConfig("lstm", (3,), window_length=6, seed=11))
    codes = np.array([[0, 1, 2, 3, 0, 1], [3, 3, 2, 2, 1, 0]])
    labels = [2, 1]

    def f():
        return loss(forward(model, codes, "train"), labels)

    grads = backward(model, forward(model, codes, "train"), labels)
    params = model.parameters()
    numeric = central_difference(f, list(params.values()))
    for (name, _), num in zip(params.items(), numeric):
        assert max_relative_error(grads[name], num) < 1e-5, name
    assert np.abs(grads["embedding"]).max() > 0


def test_absent_code_has_zero_embedding_gradient(rng):
    model = SpliceModel.init(ModelConfig("gru", (3,), window_length=6, seed=1))
    codes = np.array([[0, 1, 0, 1, 1, 0], [1, 1, 0, 0, 0, 0]])
    grads = backward(model, forward(model, codes, "train"), [0, 2])
    assert not grads["embedding"][2:].any()
    assert grads["embedding"][:2].any()


def test_identical_windows_identical_embedding_gradients(rng):
    model = SpliceModel.init(ModelConfig("lstm", (3,), window_length=6, seed=5))
    codes = _random_codes(rng, 1, 6)
    one = backward(model, forward(model, codes, "train"), [1], scale=1.0)
    two = backward(model, forward(model, np.vstack([codes, codes]), "train"), [1, 1], scale=1.0)
    # batch reductions may reorder sums, so compare to rounding level
    np.testing.assert_allclose(two["embedding"], 2 * one["embedding"], rtol=1e-13, atol=1e-16)


@pytest.mark.parametrize("kind", ["lstm", "gru", "irnn"])
def test_probabilities_sum_to_one(kind, rng):
    model = SpliceModel.init(ModelConfig(kind, (6, 5), window_length=20, seed=3))
    for arr in model.parameters().values():
        arr *= 3.0
    probs = forward(model, _random_codes(rng, 50, 20)).probs
    assert np.max(np.abs(probs.sum(axis=1) - 1.0)) <= 1e-12
    assert np.all((probs > 0) & (probs < 1))


@pytest.mark.parametrize("kind,sizes", sorted(REFERENCE_ARCHITECTURES.items()))
def test_reference_architectures(kind, sizes):
    model = SpliceModel.init(ModelConfig(kind, sizes))
    assert model.config.widths == (4, *sizes, 3)
    expected, d = 16, 4
    for h in sizes:
        expected += parameter_count(kind, d, h)
        d = h
    expected += 3 * d + 3
    assert model.num_parameters() == expected


def test_lstm_reference_architecture_count():
    # 4-60-30-3: 15780 + 11010 + 93 + 16 embedding
    assert SpliceModel.init(ModelConfig("lstm", (60, 30))).num_parameters() == 26899


def test_config_errors_listed_together():
    with pytest.raises(ConfigError) as err:
        ModelConfig("rnn", (), num_classes=4, window_length=7)
    msg = str(err.value)
    for key in ("cell_kind", "layer_sizes", "num_classes", "window_length"):
        assert key in msg


def test_width_chain_checked():
    cfg = ModelConfig("irnn", (3,), window_length=4)
    model = SpliceModel.init(cfg)
    with pytest.raises(ConfigError):
        SpliceModel(cfg, model.embedding, model.layers, np.zeros((3, 5)), model.b_out)


def test_onehot_embedding_is_frozen_identity():
    model = SpliceModel.init(ModelConfig("irnn", (3,), window_length=4, embedding="onehot"))
    np.testing.assert_array_equal(model.embedding, np.eye(4))
    assert "embedding" not in model.trainable()


def test_float32_precision(rng):
    model = SpliceModel.init(ModelConfig("lstm", (3,), window_length=6, precision="float32"))
    trace = forward(model, _random_codes(rng, 2, 6))
    assert trace.probs.dtype == np.float32


def test_init_is_seeded():
    a = SpliceModel.init(ModelConfig("gru", (4,), window_length=4, seed=8))
    b = SpliceModel.init(ModelConfig("gru", (4,), window_length=4, seed=8))
    c = SpliceModel.init(ModelConfig("gru", (4,), window_length=4, seed=9))
    assert all(np.array_equal(x, y) for x, y in zip(a.parameters().values(), b.parameters().values()))
    assert not np.array_equal(a.W_out, c.W_out)


def test_wrong_window_length(rng):
    model = SpliceModel.init(ModelConfig("gru", (4,), window_length=4))
    with pytest.raises(ValueError, match="window length"):
        forward(model, _random_codes(rng, 1, 6))
