"""Dense float64 tensors, seeded randomness and the raw numerical kernels.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. The kernels
here (``matmul``, ``conv2d``, ``maxpool3d``) are the single-sample reference
forms; the layers in :mod:`wavpool.nn` use batched equivalents that are
tested against them.
"""
from __future__ import annotations

import enum

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError

DTYPE = np.float64


def as_tensor(data, ndim=None):
    """Return ``data`` as a C-contiguous float64 array, optionally checking rank."""
    arr = np.ascontiguousarray(data, dtype=DTYPE)
    if ndim is not None and arr.ndim != ndim:
        raise DimensionError(f"expected a rank-{ndim} tensor, got shape {arr.shape}")
    return arr


class PaddingMode(str, enum.Enum):
    NONE = "none"
    ZERO = "zero"
    REPLICATE = "replicate"


class SeededRng:
    """Portable pseudo-random generator.

    Backed by numpy's PCG64 bit generator (PCG-XSL-RR 128/64), whose output
    stream is fixed by specification and identical on every platform. A
    ``stream`` id derives independent sub-streams from one user seed, so that
    weight init and data shuffling never share draws.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        seq = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, self.stream])
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, stream={self.stream})"

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high, size=None):
        """Integers in ``[low, high)``."""
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, seq):
        return seq[int(self._gen.integers(0, len(seq)))]


def matmul(a, b):
    a = as_tensor(a, 2)
    b = as_tensor(b, 2)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def same_padding(k: int) -> tuple[int, int]:
    """Pad amounts (before, after) that keep a stride-1 output the input size."""
    before = (k - 1) // 2
    return before, k - 1 - before


def pad2d(x, pads, mode: PaddingMode):
    """Pad the last two axes of ``x``; ``pads`` is ((top, bottom), (left, right))."""
    mode = PaddingMode(mode)
    if mode is PaddingMode.NONE or not any(p for pair in pads for p in pair):
        return x
    width = [(0, 0)] * (x.ndim - 2) + [tuple(pads[0]), tuple(pads[1])]
    if mode is PaddingMode.ZERO:
        return np.pad(x, width, mode="constant")
    return np.pad(x, width, mode="edge")


def conv2d(input, kernel, stride: int = 1, padding=PaddingMode.NONE, pad=None):
    """Strided 2D cross-correlation of one channel.

    With ``padding`` other than ``none`` the input is padded by ``pad``
    (``((top, bottom), (left, right))``), defaulting to the amounts that keep
    a stride-1 output the same size as the input.
    """
    x = as_tensor(input, 2)
    k = as_tensor(kernel, 2)
    if stride < 1:
        raise ValueError("stride must be positive")
    padding = PaddingMode(padding)
    kh, kw = k.shape
    if padding is not PaddingMode.NONE:
        if pad is None:
            pad = (same_padding(kh), same_padding(kw))
        x = pad2d(x, pad, padding)
    if kh > x.shape[0] or kw > x.shape[1]:
        raise DimensionError(f"kernel {k.shape} larger than padded input {x.shape}")
    windows = sliding_window_view(x, (kh, kw))[::stride, ::stride]
    return np.einsum("ijkl,kl->ij", windows, k)


def maxpool3d(input, kernel):
    """Stride-1, unpadded 3D max pooling over a rank-3 tensor."""
    x = as_tensor(input, 3)
    kernel = tuple(int(k) for k in kernel)
    if len(kernel) != 3 or any(k < 1 for k in kernel):
        raise DimensionError(f"invalid pooling kernel {kernel}")
    if any(k > d for k, d in zip(kernel, x.shape)):
        raise DimensionError(f"pooling kernel {kernel} exceeds input shape {x.shape}")
    return sliding_window_view(x, kernel).max(axis=(-3, -2, -1))
