import numpy as np
import pytest

from wavpool.errors import ConfigError, DegenerateBatchError, DimensionError, LabelError, ProtocolError
from wavpool.nn import (
    Adam,
    BatchNorm2d,
    Conv2d,
    Dense,
    Flatten,
    MaxPool3d,
    OptimizerConfig,
    ReLU,
    SGD,
    Sequential,
    gradient_check,
    load_checkpoint,
    numerical_gradient,
    param_count,
    relative_error,
    save_checkpoint,
    softmax_xent,
)
from wavpool.tensor import PaddingMode, SeededRng, conv2d, maxpool3d

SEEDS = [0, 1, 2, 3, 4]
GRAD_TOL = 1e-4


class TestDense:
    def test_identity(self):
        layer = Dense(2, 2, SeededRng(0))
        layer.W.value[:] = np.eye(2)
        assert layer.forward(np.array([[3.0, 4.0]])).tolist() == [[3.0, 4.0]]

    def test_bias_only(self, rng):
        layer = Dense(3, 2, SeededRng(0))
        layer.W.value[:] = 0
        layer.b.value[:] = [1, 2]
        assert np.array_equal(layer.forward(rng.normal(size=(4, 3))), np.tile([1.0, 2.0], (4, 1)))

    def test_matches_matmul_broadcast(self, rng):
        layer = Dense(5, 3, SeededRng(2))
        layer.b.value[:] = rng.normal(size=3)
        x = rng.normal(size=(4, 5))
        assert np.max(np.abs(layer.forward(x) - (x @ layer.W.value + layer.b.value))) <= 1e-12

    def test_width_mismatch(self):
        with pytest.raises(DimensionError):
            Dense(3, 2, SeededRng(0)).forward(np.ones((1, 4)))

    def test_dw_closed_form(self, rng):
        layer = Dense(4, 3, SeededRng(0))
        x, d = rng.normal(size=(5, 4)), rng.normal(size=(5, 3))
        layer.forward(x)
        layer.backward(d)
        assert np.allclose(layer.W.grad, x.T @ d, atol=1e-12)

    def test_init_bounds(self):
        layer = Dense(16, 8, SeededRng(3))
        assert np.abs(layer.W.value).max() <= np.sqrt(1 / 16)
        assert not layer.b.value.any()


class TestConvLayer:
    def test_haar_smooth_constant(self):
        layer = Conv2d(1, 1, 2, SeededRng(0), stride=2, padding=PaddingMode.NONE)
        layer.W.value[:] = 0.5
        out = layer.forward(np.full((1, 1, 4, 4), 3.0))
        assert np.array_equal(out, np.full((1, 1, 2, 2), 6.0))

    def test_delta_kernel_shifts(self, rng):
        layer = Conv2d(1, 1, 3, SeededRng(0), padding=PaddingMode.NONE)
        layer.W.value[:] = 0
        layer.W.value[0, 0, 2, 1] = 1.0
        x = rng.normal(size=(1, 1, 6, 7))
        assert np.array_equal(layer.forward(x)[0, 0], x[0, 0, 2:6, 1:6])

    @pytest.mark.parametrize("stride,padding", [(1, PaddingMode.NONE), (1, PaddingMode.ZERO), (2, PaddingMode.ZERO)])
    def test_matches_per_channel_loop(self, rng, stride, padding):
        layer = Conv2d(3, 2, 3, SeededRng(1), stride=stride, padding=padding)
        layer.b.value[:] = rng.normal(size=2)
        x = rng.normal(size=(2, 3, 7, 6))
        out = layer.forward(x)
        for n in range(2):
            for o in range(2):
                ref = sum(conv2d(x[n, c], layer.W.value[o, c], stride, padding) for c in range(3))
                assert np.max(np.abs(out[n, o] - (ref + layer.b.value[o]))) <= 1e-12

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            Conv2d(2, 1, 3, SeededRng(0)).forward(np.ones((1, 3, 5, 5)))


class TestBatchNorm:
    def test_training_standardizes(self, rng):
        bn = BatchNorm2d(3)
        out = bn.forward(rng.normal(2.0, 5.0, size=(8, 3, 4, 4)), training=True)
        assert np.abs(out.mean(axis=(0, 2, 3))).max() <= 1e-9
        assert np.abs(out.var(axis=(0, 2, 3)) - 1).max() <= 1e-6

    def test_eval_with_matching_stats(self, rng):
        bn = BatchNorm2d(2)
        x = rng.normal(size=(6, 2, 3, 3))
        train_out = bn.forward(x, training=True)
        bn.running_mean[:] = x.mean(axis=(0, 2, 3))
        bn.running_var[:] = x.var(axis=(0, 2, 3))
        assert np.allclose(bn.forward(x, training=False), train_out, atol=1e-12)

    def test_zero_scale(self, rng):
        bn = BatchNorm2d(2)
        bn.gamma.value[:] = 0
        bn.beta.value[:] = [0.5, -1.0]
        out = bn.forward(rng.normal(size=(4, 2, 3, 3)), training=True)
        assert np.array_equal(out[:, 0], np.full((4, 3, 3), 0.5))
        assert np.array_equal(out[:, 1], np.full((4, 3, 3), -1.0))

    def test_degenerate_batch(self):
        with pytest.raises(DegenerateBatchError):
            BatchNorm2d(1).forward(np.ones((1, 1, 2, 2)), training=True)


class TestSoftmaxXent:
    def test_uniform(self):
        loss, _ = softmax_xent(np.zeros((3, 10)), [0, 5, 9])
        assert loss == pytest.approx(np.log(10), abs=1e-12)

    def test_saturated(self):
        logits = np.zeros((1, 10))
        logits[0, 4] = 1000.0
        loss, grad = softmax_xent(logits, [4])
        assert loss <= 1e-9
        assert np.all(np.isfinite(grad))

    def test_gradient_finite_differences(self, rng):
        logits = rng.normal(size=(5, 4))
        labels = rng.integers(0, 4, size=5)
        _, grad = softmax_xent(logits, labels)
        num = numerical_gradient(lambda: softmax_xent(logits, labels)[0], logits)
        assert relative_error(grad, num) <= 1e-6

    def test_label_out_of_range(self):
        with pytest.raises(LabelError):
            softmax_xent(np.zeros((2, 3)), [0, 3])


def layer_cases(seed):
    """(layer, input, training) triples covering every layer kind."""
    r = np.random.default_rng(seed)
    rng = SeededRng(seed)
    bn = BatchNorm2d(3)
    bn.gamma.value[:] = r.uniform(0.5, 1.5, 3)
    bn.beta.value[:] = r.normal(size=3)
    conv = Conv2d(2, 3, 3, rng, padding=PaddingMode.ZERO)
    conv.b.value[:] = r.normal(size=3)
    conv_even = Conv2d(1, 2, 2, rng, padding=PaddingMode.ZERO)
    conv_stride = Conv2d(2, 2, 3, rng, stride=2, padding=PaddingMode.NONE)
    relu_x = r.normal(size=(3, 5))
    relu_x[np.abs(relu_x) < 1e-3] = 0.5
    return {
        "dense": (Dense(4, 3, rng), r.normal(size=(3, 4)), True),
        "relu": (ReLU(), relu_x, True),
        "flatten": (Flatten(), r.normal(size=(2, 3, 2)), True),
        "conv": (conv, r.normal(size=(2, 2, 5, 4)), True),
        "conv_even_kernel": (conv_even, r.normal(size=(2, 1, 4, 5)), True),
        "conv_strided": (conv_stride, r.normal(size=(2, 2, 7, 7)), True),
        "batchnorm_train": (bn, r.normal(size=(4, 3, 3, 2)), True),
        "batchnorm_eval": (BatchNorm2d(2), r.normal(size=(3, 2, 2, 2)), False),
        "maxpool3d": (MaxPool3d((2, 2, 3)), r.normal(size=(2, 3, 3, 5)), True),
    }


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("kind", list(layer_cases(0)))
def test_layer_gradients(kind, seed):
    layer, x, training = layer_cases(seed)[kind]
    errors = gradient_check(layer, x, SeededRng(100 + seed), h=1e-5, training=training)
    assert max(errors.values()) <= GRAD_TOL, errors


def test_relu_mask():
    relu = ReLU()
    x = np.array([[-1.0, 2.0, 0.0, 3.0]])
    relu.forward(x)
    assert relu.backward(np.ones((1, 4))).tolist() == [[0.0, 1.0, 0.0, 1.0]]


def test_maxpool_first_found_tie():
    pool = MaxPool3d((2, 2, 2))
    x = np.zeros((1, 2, 2, 2))
    pool.forward(x)
    d = pool.backward(np.ones((1, 1, 1, 1)))
    expected = np.zeros((1, 2, 2, 2))
    expected[0, 0, 0, 0] = 1.0
    assert np.array_equal(d, expected)


def test_maxpool_layer_matches_kernel(rng):
    x = rng.normal(size=(3, 4, 3, 6))
    out = MaxPool3d((2, 2, 3)).forward(x)
    for n in range(3):
        assert np.array_equal(out[n], maxpool3d(x[n], (2, 2, 3)))


def test_backward_before_forward():
    with pytest.raises(ProtocolError):
        Dense(2, 2, SeededRng(0)).backward(np.ones((1, 2)))
    with pytest.raises(ProtocolError):
        Sequential([ReLU()]).backward(np.ones((1, 2)))


class TestOptimizers:
    def _param(self, value, grad):
        layer = Dense(1, 1, SeededRng(0))
        p = layer.W
        p.value[:] = value
        p.grad[:] = grad
        return p

    def test_sgd_step(self):
        p = self._param(1.0, 1.0)
        SGD([p], OptimizerConfig("sgd", 0.1)).step()
        assert p.value[0, 0] == pytest.approx(0.9, abs=1e-15)
        assert p.grad[0, 0] == 0.0

    def test_adam_first_step(self):
        p = self._param(1.0, 1.0)
        Adam([p], OptimizerConfig("adam", 0.01)).step()
        assert p.value[0, 0] == pytest.approx(1.0 - 0.01, abs=1e-8)

    @pytest.mark.parametrize("kind", ["sgd", "adam"])
    def test_zero_gradient(self, kind):
        p = self._param(0.3, 0.0)
        opt = SGD([p], OptimizerConfig(kind, 0.1)) if kind == "sgd" else Adam([p], OptimizerConfig(kind, 0.1))
        opt.step()
        assert p.value[0, 0] == 0.3

    def test_lr_bounds(self):
        with pytest.raises(ConfigError):
            OptimizerConfig("sgd", 0.9)
        with pytest.raises(ConfigError):
            OptimizerConfig("sgd", 0.0)
        with pytest.raises(ConfigError):
            OptimizerConfig("rmsprop", 0.1)


@pytest.mark.parametrize("seed", SEEDS)
def test_small_sgd_step_does_not_increase_loss(seed):
    r = np.random.default_rng(seed)
    rng = SeededRng(seed)
    model = Sequential([Dense(6, 5, rng), ReLU(), Dense(5, 3, rng)])
    x, y = r.normal(size=(8, 6)), r.integers(0, 3, size=8)
    loss0, d = softmax_xent(model.forward(x, True), y)
    model.backward(d)
    SGD(model.params(), OptimizerConfig("sgd", 1e-4)).step()
    loss1, _ = softmax_xent(model.forward(x, True), y)
    assert loss1 <= loss0


def test_param_count():
    assert param_count(Dense(10, 5, SeededRng(0))) == 55
    assert param_count(Conv2d(1, 4, 3, SeededRng(0))) == 40


def test_param_count_invariant_under_training(rng):
    model = Sequential([Dense(4, 3, SeededRng(0)), ReLU(), Dense(3, 2, SeededRng(1))])
    before = param_count(model)
    _, d = softmax_xent(model.forward(rng.normal(size=(5, 4)), True), [0, 1, 0, 1, 1])
    model.backward(d)
    SGD(model.params(), OptimizerConfig("sgd", 0.1)).step()
    assert param_count(model) == before


def test_checkpoint_round_trip(tmp_path, rng):
    model = Sequential([Dense(3, 4, SeededRng(0), "a"), BatchNorm2d(2, name="bn")])
    model.layers[0].b.value[:] = rng.normal(size=4)
    model.layers[1].running_mean[:] = [0.25, -1.5]
    save_checkpoint(tmp_path / "ck", model, {"arch": "toy"}, seed=7, epoch=3)
    other = Sequential([Dense(3, 4, SeededRng(9), "a"), BatchNorm2d(2, name="bn")])
    manifest = load_checkpoint(tmp_path / "ck", other)
    assert manifest["seed"] == 7 and manifest["epoch"] == 3
    for p, q in zip(model.params(), other.params()):
        assert np.array_equal(p.value, q.value)
    assert other.layers[1].running_mean.tolist() == [0.25, -1.5]
    raw = np.fromfile(tmp_path / "ck" / "tensors" / "a.b.f64", dtype="<f8")
    assert np.array_equal(raw, model.layers[0].b.value)
