"""Haar multi-resolution decomposition of 2D signals and its exact inverse.

A decomposition keeps the final smooth view plus three oriented details
(vertical, horizontal, diagonal) per level. Levels are stored finest first:
``levels[0]`` is level 1, ``levels[-1]`` is level L.

Every function accepts either a single image ``[H, W]`` or a stack
``[..., H, W]``; the transform acts on the last two axes.

Normalization: the 1D Haar filters carry 1/sqrt(2) and the 2D filters 1/2,
which makes the 2D filter bank orthonormal and therefore self-inverse.
Odd extents are made even by replicating the last row/column before a level
is computed; the padding is logged and trimmed again on reconstruction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CorruptionError, SignalTooSmallError
from .tensor import PaddingMode, as_tensor, pad2d

ORIENTATIONS = ("v", "h", "d")


@dataclass(frozen=True)
class WaveletFilters2D:
    smooth: np.ndarray
    detail_v: np.ndarray
    detail_h: np.ndarray
    detail_d: np.ndarray
    n_v: int = 1

    def bank(self) -> np.ndarray:
        """The four filters stacked as ``[smooth, v, h, d]``."""
        return np.stack([self.smooth, self.detail_v, self.detail_h, self.detail_d])

    @property
    def size(self) -> int:
        return self.smooth.shape[0]


@dataclass
class DetailTriple:
    v: np.ndarray
    h: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        if not (self.v.shape == self.h.shape == self.d.shape):
            raise CorruptionError(
                f"detail shapes differ: v{self.v.shape} h{self.h.shape} d{self.d.shape}"
            )

    @property
    def shape(self):
        return self.v.shape

    def __getitem__(self, orientation: str) -> np.ndarray:
        if orientation not in ORIENTATIONS:
            raise KeyError(orientation)
        return getattr(self, orientation)


@dataclass(frozen=True)
class PadRecord:
    """Rows/columns appended (by edge replication) before one level."""

    original_shape: tuple[int, int]
    rows_added: int = 0
    cols_added: int = 0

    @property
    def padded_shape(self) -> tuple[int, int]:
        return (self.original_shape[0] + self.rows_added, self.original_shape[1] + self.cols_added)

    @property
    def excess(self) -> int:
        h, w = self.padded_shape
        return h * w - self.original_shape[0] * self.original_shape[1]


@dataclass
class MRDecomposition:
    smooth: np.ndarray
    levels: list[DetailTriple]
    input_shape: tuple[int, int]
    pad_log: list[PadRecord] = field(default_factory=list)

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    def views(self):
        """All views as ``(name, array)`` pairs, smooth first then finest to coarsest."""
        yield "smooth", self.smooth
        for i, triple in enumerate(self.levels, start=1):
            for a in ORIENTATIONS:
                yield f"level{i}_{a}", triple[a]

    def element_count(self) -> int:
        """Per-image element count summed over the smooth view and all details."""
        count = _grid_size(self.smooth)
        for triple in self.levels:
            count += 3 * _grid_size(triple.v)
        return count

    def padded_size(self) -> int:
        """Raw input size plus every element introduced by pad-to-even."""
        h, w = self.input_shape
        return h * w + sum(rec.excess for rec in self.pad_log)


def _grid_size(arr) -> int:
    return arr.shape[-2] * arr.shape[-1]


def haar_filters_1d():
    """Return the 1D Haar ``(smooth, detail)`` pair.

    The detail filter is built from the smooth one by reversal with
    alternating sign, ``detail[i] = (-1)**i * smooth[N - 1 - i]``.
    """
    smooth = np.full(2, 1.0 / math.sqrt(2.0))
    n = len(smooth)
    detail = np.array([(-1) ** i * smooth[n - 1 - i] for i in range(n)])
    return smooth, detail


def haar_filters_2d() -> WaveletFilters2D:
    """Outer products of the 1D pair: v = psi x phi, h = phi x psi, d = psi x psi.

    The 1/sqrt(2) factors are multiplied out before the outer product so the
    entries are exactly +-1/2 in floating point.
    """
    phi, psi = np.array([1.0, 1.0]), np.array([1.0, -1.0])
    return WaveletFilters2D(
        smooth=np.outer(phi, phi) / 2,
        detail_v=np.outer(psi, phi) / 2,
        detail_h=np.outer(phi, psi) / 2,
        detail_d=np.outer(psi, psi) / 2,
        n_v=1,
    )


def level_count(shape, n_v: int = 1) -> int:
    """Number of decomposition levels for a 2D signal of the given shape.

    The signal size is taken per dimension (the smaller extent for
    rectangles): ``floor(log2(min(H, W))) - n_v + 1``.
    """
    h, w = (int(s) for s in shape[-2:])
    if n_v < 1:
        raise ValueError("n_v must be >= 1")
    if min(h, w) < 2:
        raise SignalTooSmallError(f"signal of shape {(h, w)} is smaller than 2 in some dimension")
    levels = int(math.floor(math.log2(min(h, w)))) - n_v + 1
    if levels < 1:
        raise SignalTooSmallError(
            f"signal of shape {(h, w)} is too small for a wavelet with n_v={n_v}"
        )
    return levels


def decompose_level(c_prev, filters: WaveletFilters2D):
    """One analysis step: ``(c_next, DetailTriple, PadRecord)``."""
    c_prev = as_tensor(c_prev)
    h, w = c_prev.shape[-2:]
    if h < 2 or w < 2:
        raise SignalTooSmallError(f"cannot decompose a level of shape {(h, w)}")
    record = PadRecord((h, w), h % 2, w % 2)
    x = pad2d(c_prev, ((0, record.rows_added), (0, record.cols_added)), PaddingMode.REPLICATE)
    k = filters.size
    windows = sliding_window_view(x, (k, k), axis=(-2, -1))[..., ::2, ::2, :, :]
    out = np.einsum("...ijkl,fkl->f...ij", windows, filters.bank())
    return out[0], DetailTriple(out[1], out[2], out[3]), record


def decompose(signal, filters: WaveletFilters2D | None = None, levels: int | None = None) -> MRDecomposition:
    """Full decomposition: ``levels`` (default: all L) applications of :func:`decompose_level`."""
    filters = filters or haar_filters_2d()
    signal = as_tensor(signal)
    if signal.ndim < 2:
        raise SignalTooSmallError(f"expected a 2D signal, got shape {signal.shape}")
    total = level_count(signal.shape, filters.n_v)
    if levels is None:
        levels = total
    elif not 1 <= levels <= total:
        raise ValueError(f"levels must be in [1, {total}], got {levels}")
    c = signal
    details, pad_log = [], []
    for _ in range(levels):
        c, triple, record = decompose_level(c, filters)
        details.append(triple)
        pad_log.append(record)
    return MRDecomposition(
        smooth=c, levels=details, input_shape=tuple(signal.shape[-2:]), pad_log=pad_log
    )


def reconstruct_level(c_next, details: DetailTriple, filters: WaveletFilters2D) -> np.ndarray:
    """Synthesis step for a 2x2 filter bank: expand each coefficient by its filter and sum."""
    if c_next.shape != details.shape:
        raise CorruptionError(
            f"smooth view {c_next.shape} does not match details {details.shape}"
        )
    coeffs = np.stack([c_next, details.v, details.h, details.d])
    blocks = np.einsum("f...ij,fkl->...ikjl", coeffs, filters.bank())
    *lead, h, kh, w, kw = blocks.shape
    return blocks.reshape(*lead, h * kh, w * kw)


def reconstruct(mrd: MRDecomposition, filters: WaveletFilters2D | None = None) -> np.ndarray:
    filters = filters or haar_filters_2d()
    if filters.size != 2:
        raise NotImplementedError("only 2-tap filter banks can be inverted")
    if len(mrd.pad_log) != len(mrd.levels):
        raise CorruptionError("pad_log and level list lengths differ")
    c = mrd.smooth
    for triple, record in zip(reversed(mrd.levels), reversed(mrd.pad_log)):
        if c.shape[-2:] != triple.shape[-2:]:
            raise CorruptionError(
                f"level shapes inconsistent: smooth {c.shape} vs details {triple.shape}"
            )
        c = reconstruct_level(c, triple, filters)
        if c.shape[-2:] != record.padded_shape:
            raise CorruptionError(
                f"rebuilt level has shape {c.shape[-2:]}, pad log expects {record.padded_shape}"
            )
        oh, ow = record.original_shape
        c = c[..., :oh, :ow]
    if tuple(c.shape[-2:]) != tuple(mrd.input_shape):
        raise CorruptionError(f"reconstructed {c.shape[-2:]}, expected {mrd.input_shape}")
    return np.ascontiguousarray(c)


def flatten_details(mrd: MRDecomposition, level: int, orientation: str) -> np.ndarray:
    """Row-major flattening of one detail (level is 1-based, 1 = finest)."""
    if not 1 <= level <= mrd.num_levels:
        raise IndexError(f"level {level} outside [1, {mrd.num_levels}]")
    detail = mrd.levels[level - 1][orientation]
    return detail.reshape(*detail.shape[:-2], -1)
