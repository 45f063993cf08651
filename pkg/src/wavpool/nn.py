"""Layers with explicit forward/backward passes, optimizers and gradient checks.

Every layer follows one contract: ``forward(x, training)`` caches what the
backward pass needs and ``backward(d_out)`` accumulates parameter gradients
and returns the gradient with respect to the layer input. Calling
``backward`` without a preceding ``forward`` raises :class:`ProtocolError`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    ConfigError,
    DegenerateBatchError,
    DimensionError,
    LabelError,
    ProtocolError,
)
from .tensor import DTYPE, PaddingMode, SeededRng, pad2d, same_padding


@dataclass
class Param:
    value: np.ndarray
    name: str
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self):
        self.grad.fill(0.0)


def uniform_fan_in(rng: SeededRng, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    """Base class; subclasses override ``_forward``/``_backward``."""

    name = "layer"

    def __init__(self):
        self._cache = None

    def params(self) -> list[Param]:
        return []

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-trainable state that a checkpoint must carry."""
        return {}

    def forward(self, x, training: bool = False):
        out, self._cache = self._forward(x, training)
        return out

    def backward(self, d_out):
        if self._cache is None:
            raise ProtocolError(f"{type(self).__name__}.backward called before forward")
        return self._backward(d_out, self._cache)

    __call__ = forward

    def _forward(self, x, training):
        raise NotImplementedError

    def _backward(self, d_out, cache):
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, in_features: int, out_features: int, rng: SeededRng, name="dense"):
        super().__init__()
        if in_features < 1 or out_features < 1:
            raise ConfigError("dense layer sizes must be positive")
        self.in_features = in_features
        self.out_features = out_features
        self.name = name
        self.W = Param(uniform_fan_in(rng, (in_features, out_features), in_features), f"{name}.W")
        self.b = Param(np.zeros(out_features), f"{name}.b")

    def params(self):
        return [self.W, self.b]

    def _forward(self, x, training):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise DimensionError(
                f"{self.name}: expected input [batch x {self.in_features}], got {x.shape}"
            )
        return x @ self.W.value + self.b.value, x

    def _backward(self, d_out, x):
        self.W.grad += x.T @ d_out
        self.b.grad += d_out.sum(axis=0)
        return d_out @ self.W.value.T


class ReLU(Layer):
    name = "relu"

    def _forward(self, x, training):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def _backward(self, d_out, mask):
        return np.where(mask, d_out, 0.0)


class Flatten(Layer):
    name = "flatten"

    def _forward(self, x, training):
        return x.reshape(x.shape[0], -1), x.shape

    def _backward(self, d_out, shape):
        return d_out.reshape(shape)


class Reshape(Layer):
    """Reshape the per-sample part of a batch, e.g. ``[B, H, W] -> [B, 1, H, W]``."""

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(shape)

    def _forward(self, x, training):
        return x.reshape(x.shape[0], *self.shape), x.shape

    def _backward(self, d_out, shape):
        return d_out.reshape(shape)


class Conv2d(Layer):
    """Multi-channel cross-correlation via im2col, input ``[B, C_in, H, W]``."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: SeededRng,
        stride: int = 1,
        padding=PaddingMode.ZERO,
        name="conv",
    ):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = PaddingMode(padding)
        if self.padding is PaddingMode.REPLICATE:
            raise ConfigError("Conv2d supports 'none' or 'zero' padding")
        self.name = name
        fan_in = in_channels * kernel_size * kernel_size
        self.W = Param(
            uniform_fan_in(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in),
            f"{name}.W",
        )
        self.b = Param(np.zeros(out_channels), f"{name}.b")

    def params(self):
        return [self.W, self.b]

    def _pads(self):
        if self.padding is PaddingMode.NONE:
            return ((0, 0), (0, 0))
        p = same_padding(self.kernel_size)
        return (p, p)

    def _forward(self, x, training):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise DimensionError(
                f"{self.name}: expected [batch x {self.in_channels} x H x W], got {x.shape}"
            )
        k, s = self.kernel_size, self.stride
        xp = pad2d(x, self._pads(), self.padding)
        if xp.shape[2] < k or xp.shape[3] < k:
            raise DimensionError(f"{self.name}: kernel {k} larger than padded input {xp.shape[2:]}")
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        B, C, Ho, Wo = win.shape[:4]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * k * k)
        wmat = self.W.value.reshape(self.out_channels, -1)
        out = (cols @ wmat.T + self.b.value).reshape(B, Ho, Wo, self.out_channels)
        return out.transpose(0, 3, 1, 2), (cols, xp.shape, (B, Ho, Wo))

    def _backward(self, d_out, cache):
        cols, xp_shape, (B, Ho, Wo) = cache
        k, s = self.kernel_size, self.stride
        d2 = d_out.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, self.out_channels)
        wmat = self.W.value.reshape(self.out_channels, -1)
        self.W.grad += (d2.T @ cols).reshape(self.W.value.shape)
        self.b.grad += d2.sum(axis=0)
        dcols = (d2 @ wmat).reshape(B, Ho, Wo, self.in_channels, k, k)
        dxp = np.zeros(xp_shape)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + s * Ho : s, j : j + s * Wo : s] += dcols[:, :, :, :, i, j].transpose(
                    0, 3, 1, 2
                )
        (top, bottom), (left, right) = self._pads()
        return dxp[:, :, top : xp_shape[2] - bottom, left : xp_shape[3] - right]


class BatchNorm2d(Layer):
    """Per-channel standardization of ``[B, C, H, W]`` with learned scale and shift."""

    def __init__(self, channels: int, name="bn", momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.channels = channels
        self.name = name
        self.momentum = momentum
        self.eps = eps
        self.gamma = Param(np.ones(channels), f"{name}.gamma")
        self.beta = Param(np.zeros(channels), f"{name}.beta")
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {f"{self.name}.running_mean": self.running_mean, f"{self.name}.running_var": self.running_var}

    def _forward(self, x, training):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise DimensionError(f"{self.name}: expected {self.channels} channels, got {x.shape}")
        shape = (1, -1, 1, 1)
        if training:
            if x.shape[0] < 2:
                raise DegenerateBatchError("batch norm needs a batch of at least 2 in training")
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            n = x.shape[0] * x.shape[2] * x.shape[3]
            m = self.momentum
            self.running_mean[:] = (1 - m) * self.running_mean + m * mean
            self.running_var[:] = (1 - m) * self.running_var + m * var * n / max(n - 1, 1)
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
        out = self.gamma.value.reshape(shape) * x_hat + self.beta.value.reshape(shape)
        return out, (x_hat, inv_std, training)

    def _backward(self, d_out, cache):
        x_hat, inv_std, training = cache
        shape = (1, -1, 1, 1)
        self.gamma.grad += (d_out * x_hat).sum(axis=(0, 2, 3))
        self.beta.grad += d_out.sum(axis=(0, 2, 3))
        dx_hat = d_out * self.gamma.value.reshape(shape)
        if not training:
            return dx_hat * inv_std.reshape(shape)
        mean_dx = dx_hat.mean(axis=(0, 2, 3), keepdims=True)
        mean_dx_x = (dx_hat * x_hat).mean(axis=(0, 2, 3), keepdims=True)
        return (dx_hat - mean_dx - x_hat * mean_dx_x) * inv_std.reshape(shape)


class MaxPool3d(Layer):
    """Stride-1 max pooling over the last three axes of ``[B, d1, d2, d3]``.

    Gradient goes to the first maximal cell of each window in row-major order.
    """

    def __init__(self, kernel):
        super().__init__()
        self.kernel = tuple(int(k) for k in kernel)

    def _forward(self, x, training):
        if x.ndim != 4:
            raise DimensionError(f"maxpool3d expects [batch x d1 x d2 x d3], got {x.shape}")
        if any(k > d for k, d in zip(self.kernel, x.shape[1:])):
            raise DimensionError(f"pooling kernel {self.kernel} exceeds input {x.shape[1:]}")
        win = sliding_window_view(x, self.kernel, axis=(1, 2, 3))
        flat = win.reshape(*win.shape[:4], -1)
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        return out, (x.shape, arg)

    def _backward(self, d_out, cache):
        shape, arg = cache
        B, d1, d2, d3 = shape
        k1, k2, k3 = self.kernel
        a, rem = np.divmod(arg, k2 * k3)
        b, c = np.divmod(rem, k3)
        o1, o2, o3 = arg.shape[1:]
        i = np.arange(o1).reshape(1, -1, 1, 1) + a
        j = np.arange(o2).reshape(1, 1, -1, 1) + b
        l = np.arange(o3).reshape(1, 1, 1, -1) + c
        n = np.arange(B).reshape(-1, 1, 1, 1)
        flat_idx = ((n * d1 + i) * d2 + j) * d3 + l
        dx = np.bincount(flat_idx.ravel(), weights=d_out.ravel(), minlength=B * d1 * d2 * d3)
        return dx.reshape(shape)


class Sequential(Layer):
    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def buffers(self):
        out = {}
        for layer in self.layers:
            out.update(layer.buffers())
        return out

    def forward(self, x, training: bool = False):
        for layer in self.layers:
            x = layer.forward(x, training)
        self._cache = True
        return x

    __call__ = forward

    def backward(self, d_out):
        if self._cache is None:
            raise ProtocolError("Sequential.backward called before forward")
        for layer in reversed(self.layers):
            d_out = layer.backward(d_out)
        return d_out


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits, labels):
    """Mean softmax cross-entropy and its gradient with respect to the logits."""
    logits = np.asarray(logits, dtype=DTYPE)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"{labels.shape[0] if labels.ndim else 0} labels for {n} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LabelError(f"labels must lie in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - z[rows, labels]))
    grad = np.exp(z - log_norm[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / n


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.kind!r}")
        if not 0.0 < self.learning_rate <= 0.8:
            raise ConfigError(f"learning rate {self.learning_rate} outside (0, 0.8]")


class SGD:
    def __init__(self, params, config: OptimizerConfig):
        self.params = list(params)
        self.lr = config.learning_rate

    def step(self):
        for p in self.params:
            p.value -= self.lr * p.grad
            p.zero_grad()


class Adam:
    def __init__(self, params, config: OptimizerConfig):
        self.params = list(params)
        self.cfg = config
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        c = self.cfg
        self.t += 1
        corr1 = 1.0 - c.beta1**self.t
        corr2 = 1.0 - c.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * p.grad
            v *= c.beta2
            v += (1.0 - c.beta2) * p.grad**2
            p.value -= c.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + c.eps)
            p.zero_grad()


def make_optimizer(params, config: OptimizerConfig):
    return {"sgd": SGD, "adam": Adam}[config.kind](params, config)


def optimizer_step(optimizer):
    optimizer.step()


def param_count(layers) -> int:
    if isinstance(layers, Layer):
        layers = [layers]
    return sum(p.size for layer in layers for p in layer.params())


def state_dict(model: Layer) -> dict[str, np.ndarray]:
    state = {p.name: p.value.copy() for p in model.params()}
    state.update({k: v.copy() for k, v in model.buffers().items()})
    return state


def load_state_dict(model: Layer, state: dict[str, np.ndarray]):
    for p in model.params():
        p.value[...] = state[p.name]
    for k, v in model.buffers().items():
        v[...] = state[k]


def save_checkpoint(directory, model: Layer, config: dict, seed: int, epoch: int):
    """Write ``manifest.json`` plus one raw little-endian float64 blob per tensor."""
    directory = Path(directory)
    (directory / "tensors").mkdir(parents=True, exist_ok=True)
    tensors = {}
    for name, arr in state_dict(model).items():
        fname = f"tensors/{name}.f64"
        arr.astype("<f8").tofile(directory / fname)
        tensors[name] = {"file": fname, "shape": list(arr.shape)}
    manifest = {"config": config, "seed": seed, "epoch": epoch, "dtype": "float64-le", "tensors": tensors}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_checkpoint(directory, model: Layer) -> dict:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    state = {
        name: np.fromfile(directory / meta["file"], dtype="<f8").reshape(meta["shape"])
        for name, meta in manifest["tensors"].items()
    }
    load_state_dict(model, state)
    return manifest


def numerical_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to ``x`` (modified in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def relative_error(a, b, floor: float = 1e-6) -> float:
    """Max elementwise ``|a - b| / (|a| + |b|)``; ``floor`` bounds the denominator
    so that gradients that are exactly zero (e.g. a conv bias feeding batch
    norm) are not judged on round-off alone."""
    a, b = np.asarray(a), np.asarray(b)
    denom = np.maximum(np.abs(a) + np.abs(b), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def gradient_check(layer: Layer, x: np.ndarray, rng: SeededRng, h: float = 1e-5, training=True,
                   loss_fn=None):
    """Compare analytic and central-difference gradients of a scalar loss.

    The default loss is a fixed random projection ``sum(R * layer(x))``.
    Returns ``{name: relative_error}`` covering the input and every parameter.
    """
    x = np.array(x, dtype=DTYPE)
    if loss_fn is None:
        proj = rng.normal(size=layer.forward(x, training).shape)

        def loss_fn(out):
            return float(np.sum(out * proj)), proj

    buffers = {k: v.copy() for k, v in layer.buffers().items()}

    def restore():
        for k, v in layer.buffers().items():
            v[...] = buffers[k]

    def value():
        restore()
        return loss_fn(layer.forward(x, training))[0]

    for p in layer.params():
        p.zero_grad()
    restore()
    _, d_out = loss_fn(layer.forward(x, training))
    dx = layer.backward(d_out)
    analytic = {"input": dx}
    analytic.update({p.name: p.grad.copy() for p in layer.params()})

    errors = {"input": relative_error(dx, numerical_gradient(value, x, h))}
    for p in layer.params():
        errors[p.name] = relative_error(analytic[p.name], numerical_gradient(value, p.value, h))
    restore()
    return errors
