"""WavPool, MLP and CNN classifiers assembled from :mod:`wavpool.nn` layers."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DimensionError, ProtocolError
from .nn import (
    BatchNorm2d,
    Conv2d,
    Dense,
    Flatten,
    Layer,
    MaxPool3d,
    ReLU,
    Reshape,
    Sequential,
)
from .tensor import PaddingMode, SeededRng
from .wavelet import (
    DetailTriple,
    MRDecomposition,
    ORIENTATIONS,
    decompose,
    haar_filters_2d,
    level_count,
    reconstruct_level,
)


def scaled_hidden_sizes(base_hidden: int, levels: int, scaling: bool) -> list[int]:
    """Hidden width per level; with scaling, ``level * N_level`` stays ~``base_hidden``."""
    if not scaling:
        return [base_hidden] * levels
    return [max(1, int(np.floor(base_hidden / ell + 0.5))) for ell in range(1, levels + 1)]


def detail_shapes(input_shape) -> list[tuple[int, int]]:
    """Per-level detail shapes produced by halving with pad-to-even."""
    h, w = input_shape
    shapes = []
    for _ in range(level_count(input_shape)):
        h, w = (h + 1) // 2, (w + 1) // 2
        shapes.append((h, w))
    return shapes


@dataclass
class MicroWavConfig:
    level: int
    detail_input_size: int
    hidden_size: int

    def __post_init__(self):
        if self.hidden_size < 1 or self.detail_input_size < 1:
            raise ConfigError(f"invalid MicroWav sizes {self}")


@dataclass
class WavPoolConfig:
    input_shape: tuple = (28, 28)
    base_hidden: int = 256
    scaling: bool = True
    pool_kernel: tuple = (2, 2, 2)
    num_classes: int = 10

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        self.pool_kernel = tuple(int(k) for k in self.pool_kernel)
        if len(self.pool_kernel) != 3 or self.pool_kernel[0] != self.pool_kernel[1]:
            raise ConfigError(f"pool kernel must have the form (k1, k1, k2), got {self.pool_kernel}")
        if self.base_hidden < 1 or self.num_classes < 2:
            raise ConfigError("base_hidden must be >= 1 and num_classes >= 2")
        k1, _, k2 = self.pool_kernel
        if not (1 <= k1 <= min(self.levels, 3) and 1 <= k2 <= self.base_hidden):
            raise ConfigError(
                f"pool kernel {self.pool_kernel} does not fit the {self.stack_shape} stack"
            )

    @property
    def levels(self) -> int:
        return level_count(self.input_shape)

    @property
    def hidden_sizes(self) -> list[int]:
        return scaled_hidden_sizes(self.base_hidden, self.levels, self.scaling)

    @property
    def stack_shape(self) -> tuple[int, int, int]:
        return (self.levels, 3, self.base_hidden)

    @property
    def pooled_shape(self) -> tuple[int, int, int]:
        k1, _, k2 = self.pool_kernel
        return (self.levels - k1 + 1, 4 - k1, self.base_hidden - k2 + 1)

    def microwav_configs(self) -> list[MicroWavConfig]:
        return [
            MicroWavConfig(ell, h * w, n)
            for ell, ((h, w), n) in enumerate(zip(detail_shapes(self.input_shape), self.hidden_sizes), 1)
        ]


@dataclass
class MLPConfig:
    input_size: int = 784
    hidden1: int = 256
    hidden2: int = 256
    num_classes: int = 10

    def __post_init__(self):
        if min(self.input_size, self.hidden1, self.hidden2, self.num_classes) < 1:
            raise ConfigError(f"MLP sizes must be positive: {self}")


@dataclass
class CNNConfig:
    kernel_size: int = 3
    hidden_channels_1: int = 4
    hidden_channels_2: int = 8
    num_classes: int = 10
    input_shape: tuple = (28, 28)

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        if not 2 <= self.kernel_size <= 4:
            raise ConfigError(f"kernel size {self.kernel_size} outside [2, 4]")
        for c in (self.hidden_channels_1, self.hidden_channels_2):
            if not 1 <= c <= 20:
                raise ConfigError(f"channel count {c} outside [1, 20]")


class MRDFrontEnd(Layer):
    """Fixed Haar decomposition of a batch ``[B, H, W]``; has no trainable state.

    ``forward`` returns the list of per-level :class:`DetailTriple` (finest
    first). The smooth view is computed but not passed on.
    """

    name = "mrd"

    def __init__(self, input_shape):
        super().__init__()
        self.input_shape = tuple(input_shape)
        self.filters = haar_filters_2d()

    def _forward(self, x, training):
        if x.ndim != 3 or x.shape[1:] != self.input_shape:
            raise DimensionError(f"expected images [B x {self.input_shape}], got {x.shape}")
        mrd = decompose(x, self.filters)
        return mrd.levels, mrd

    def _backward(self, d_levels, mrd: MRDecomposition):
        # Adjoint of analysis: synthesis, then fold replicated pad rows/cols back.
        c = np.zeros_like(mrd.smooth)
        for triple, record in zip(reversed(d_levels), reversed(mrd.pad_log)):
            c = reconstruct_level(c, triple, self.filters)
            oh, ow = record.original_shape
            if record.cols_added:
                c[..., :, ow - 1] += c[..., :, ow]
            if record.rows_added:
                c[..., oh - 1, :] += c[..., oh, :]
            c = c[..., :oh, :ow]
        return c


class MicroWav(Layer):
    """Three independent dense+ReLU heads, one per detail orientation of one level."""

    def __init__(self, cfg: MicroWavConfig, rng: SeededRng):
        super().__init__()
        self.cfg = cfg
        self.name = f"microwav{cfg.level}"
        self.heads = {
            a: Sequential([Dense(cfg.detail_input_size, cfg.hidden_size, rng, f"{self.name}.{a}"), ReLU()])
            for a in ORIENTATIONS
        }

    def params(self):
        return [p for a in ORIENTATIONS for p in self.heads[a].params()]

    def _forward(self, details: DetailTriple, training):
        outs = []
        for a in ORIENTATIONS:
            flat = details[a].reshape(details[a].shape[0], -1)
            if flat.shape[1] != self.cfg.detail_input_size:
                raise DimensionError(
                    f"{self.name}: detail has {flat.shape[1]} elements, expected {self.cfg.detail_input_size}"
                )
            outs.append(self.heads[a].forward(flat, training))
        return np.stack(outs, axis=1), details.shape

    def _backward(self, d_out, shape):
        grads = [self.heads[a].backward(d_out[:, i]).reshape(shape) for i, a in enumerate(ORIENTATIONS)]
        return DetailTriple(*grads)


def microwav_forward(layer: MicroWav, details: DetailTriple) -> np.ndarray:
    """``[3 x N]`` output of one MicroWav for a single image's details."""
    single = DetailTriple(*(details[a][None] for a in ORIENTATIONS))
    return layer.forward(single)[0]


class WavPool(Layer):
    """MRD front end -> MicroWav per level -> zero-pad/stack -> 3D max pool -> dense head."""

    def __init__(self, cfg: WavPoolConfig, rng: SeededRng):
        super().__init__()
        self.cfg = cfg
        self.front = MRDFrontEnd(cfg.input_shape)
        self.micro = [MicroWav(mc, rng) for mc in cfg.microwav_configs()]
        self.pool = MaxPool3d(cfg.pool_kernel)
        self.flatten = Flatten()
        self.head = Dense(int(np.prod(cfg.pooled_shape)), cfg.num_classes, rng, "head")
        self.last_stack = None

    def params(self):
        return [p for m in self.micro for p in m.params()] + self.head.params()

    def stack(self, levels, training=False) -> np.ndarray:
        """MRP stack ``[B, L, 3, N_1]``; rows beyond ``N_level`` are zero."""
        B = levels[0].shape[0]
        out = np.zeros((B, *self.cfg.stack_shape))
        for ell, (m, triple) in enumerate(zip(self.micro, levels)):
            out[:, ell, :, : m.cfg.hidden_size] = m.forward(triple, training)
        return out

    def forward(self, x, training: bool = False):
        levels = self.front.forward(x, training)
        self.last_stack = self.stack(levels, training)
        pooled = self.pool.forward(self.last_stack, training)
        self._cache = True
        return self.head.forward(self.flatten.forward(pooled, training), training)

    __call__ = forward

    def backward(self, d_out):
        if self._cache is None:
            raise ProtocolError("WavPool.backward called before forward")
        d = self.pool.backward(self.flatten.backward(self.head.backward(d_out)))
        d_levels = [m.backward(d[:, ell, :, : m.cfg.hidden_size]) for ell, m in enumerate(self.micro)]
        return self.front.backward(d_levels)


def build_wavpool(cfg: WavPoolConfig, seed: int = 0) -> WavPool:
    return WavPool(cfg, SeededRng(seed, stream=1))


def build_mlp(cfg: MLPConfig, seed: int = 0) -> Sequential:
    rng = SeededRng(seed, stream=1)
    model = Sequential(
        [
            Flatten(),
            Dense(cfg.input_size, cfg.hidden1, rng, "fc1"),
            ReLU(),
            Dense(cfg.hidden1, cfg.hidden2, rng, "fc2"),
            ReLU(),
            Dense(cfg.hidden2, cfg.num_classes, rng, "out"),
        ]
    )
    model.cfg = cfg
    return model


def build_cnn(cfg: CNNConfig, seed: int = 0) -> Sequential:
    rng = SeededRng(seed, stream=1)
    h, w = cfg.input_shape
    k, c1, c2 = cfg.kernel_size, cfg.hidden_channels_1, cfg.hidden_channels_2
    model = Sequential(
        [
            Reshape((1, h, w)),
            Conv2d(1, c1, k, rng, padding=PaddingMode.ZERO, name="conv1"),
            BatchNorm2d(c1, name="bn1"),
            ReLU(),
            Conv2d(c1, c2, k, rng, padding=PaddingMode.ZERO, name="conv2"),
            BatchNorm2d(c2, name="bn2"),
            ReLU(),
            Flatten(),
            Dense(c2 * h * w, cfg.num_classes, rng, "out"),
        ]
    )
    model.cfg = cfg
    return model


ARCHITECTURES = {
    "wavpool": (WavPoolConfig, build_wavpool),
    "mlp": (MLPConfig, build_mlp),
    "cnn": (CNNConfig, build_cnn),
}


def default_config(arch: str, input_shape=(28, 28), num_classes: int = 10):
    """Non-optimized configuration of ``arch`` for images of ``input_shape``."""
    if arch == "wavpool":
        return WavPoolConfig(input_shape=input_shape, num_classes=num_classes)
    if arch == "mlp":
        return MLPConfig(input_size=int(np.prod(input_shape)), num_classes=num_classes)
    if arch == "cnn":
        return CNNConfig(input_shape=input_shape, num_classes=num_classes)
    raise ConfigError(f"unknown architecture {arch!r}")


def build_model(arch: str, cfg, seed: int = 0) -> Layer:
    if arch not in ARCHITECTURES:
        raise ConfigError(f"unknown architecture {arch!r}")
    return ARCHITECTURES[arch][1](cfg, seed)


def config_to_dict(cfg) -> dict:
    d = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def config_from_dict(arch: str, values: dict):
    cls = ARCHITECTURES[arch][0]
    known = cls.__dataclass_fields__
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"unknown {arch} config keys: {sorted(unknown)}")
    return cls(**values)
