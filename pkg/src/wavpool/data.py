"""MNIST / Fashion-MNIST IDX and CIFAR-10 binary loaders, plus seeded subsets.

Expected layout under the data directory (``--data-dir`` or
``WAVPOOL_DATA_DIR``)::

    mnist/    train-images-idx3-ubyte  train-labels-idx1-ubyte  t10k-...
    fashion/  (same file names as mnist)
    cifar10/  data_batch_1.bin ... data_batch_5.bin  test_batch.bin

IDX files may also be gzip-compressed with a ``.gz`` suffix.
"""
from __future__ import annotations

import gzip
import hashlib
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataSizeError, FormatError
from .tensor import SeededRng

IDX_UBYTE = 0x08
CIFAR_RECORD = 1 + 3 * 32 * 32
LUMA = (0.299, 0.587, 0.114)

TASKS = ("mnist", "fashion", "cifar10")


@dataclass(frozen=True)
class LabeledDataset:
    images: np.ndarray
    labels: np.ndarray
    name: str
    source_digest: str = ""

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise FormatError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, int]:
        return tuple(self.images.shape[1:])

    def take(self, indices, name=None) -> "LabeledDataset":
        indices = np.asarray(indices)
        return LabeledDataset(
            self.images[indices], self.labels[indices], name or self.name, self.source_digest
        )


@dataclass(frozen=True)
class SplitSpec:
    seed: int
    n_train: int = 4000
    n_val: int = 2000


def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    raw = path.read_bytes()
    if path.suffix == ".gz":
        raw = gzip.decompress(raw)
    return raw


def parse_idx(raw: bytes) -> np.ndarray:
    """Decode an unsigned-byte IDX blob into an array of its declared shape."""
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise FormatError("bad IDX magic")
    dtype, ndim = raw[2], raw[3]
    if dtype != IDX_UBYTE:
        raise FormatError(f"unsupported IDX element type 0x{dtype:02x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataSizeError("IDX file truncated inside its header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = int(np.prod(dims))
    if len(raw) - header < expected:
        raise DataSizeError(
            f"IDX payload has {len(raw) - header} bytes, header declares {expected}"
        )
    return np.frombuffer(raw, dtype=np.uint8, count=expected, offset=header).reshape(dims)


def load_idx(images_path, labels_path, name="idx") -> LabeledDataset:
    raw_images = _read_bytes(images_path)
    raw_labels = _read_bytes(labels_path)
    if raw_images[2:4] != bytes([IDX_UBYTE, 3]):
        raise FormatError(f"{images_path}: not an IDX image file (magic {raw_images[:4].hex()})")
    if raw_labels[2:4] != bytes([IDX_UBYTE, 1]):
        raise FormatError(f"{labels_path}: not an IDX label file (magic {raw_labels[:4].hex()})")
    images = parse_idx(raw_images)
    labels = parse_idx(raw_labels)
    if len(images) != len(labels):
        raise FormatError(f"{len(images)} images but {len(labels)} labels")
    digest = hashlib.sha256(raw_images + raw_labels).hexdigest()
    return LabeledDataset(images.astype(np.float64) / 255.0, labels.astype(np.int64), name, digest)


def load_cifar10_gray(batch_paths, name="cifar10") -> LabeledDataset:
    """Load CIFAR-10 binary batches, converting each image to BT.601 luma in [0, 1]."""
    images, labels = [], []
    sha = hashlib.sha256()
    for path in batch_paths:
        raw = _read_bytes(path)
        if len(raw) == 0 or len(raw) % CIFAR_RECORD:
            raise FormatError(f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD}")
        sha.update(raw)
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        labels.append(records[:, 0].astype(np.int64))
        planes = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64)
        gray = LUMA[0] * planes[:, 0] + LUMA[1] * planes[:, 1] + LUMA[2] * planes[:, 2]
        images.append(gray / 255.0)
    if not images:
        raise FileNotFoundError("no CIFAR-10 batch files given")
    return LabeledDataset(np.concatenate(images), np.concatenate(labels), name, sha.hexdigest())


def subset_split(ds: LabeledDataset, spec: SplitSpec):
    """Disjoint seeded train/validation subsets drawn from ``ds``."""
    if spec.n_train < 1 or spec.n_val < 1:
        raise DataSizeError("split sizes must be positive")
    if spec.n_train + spec.n_val > len(ds):
        raise DataSizeError(
            f"{ds.name} has {len(ds)} samples, split needs {spec.n_train + spec.n_val}"
        )
    order = SeededRng(spec.seed, stream=2).permutation(len(ds))
    train_idx = order[: spec.n_train]
    val_idx = order[spec.n_train : spec.n_train + spec.n_val]
    return ds.take(train_idx, f"{ds.name}-train"), ds.take(val_idx, f"{ds.name}-val")


def resolve_data_dir(data_dir=None) -> Path:
    data_dir = data_dir or os.environ.get("WAVPOOL_DATA_DIR")
    if not data_dir:
        raise FileNotFoundError("no data directory: pass --data-dir or set WAVPOOL_DATA_DIR")
    return Path(data_dir)


def _first_existing(directory: Path, name: str) -> Path:
    for candidate in (directory / name, directory / f"{name}.gz"):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"missing {directory / name}[.gz]")


def load_task(task: str, data_dir=None, split: str = "train") -> LabeledDataset:
    """Load the official ``train`` or ``test`` split of a task."""
    root = resolve_data_dir(data_dir)
    if task in ("mnist", "fashion"):
        prefix = "train" if split == "train" else "t10k"
        d = root / task
        return load_idx(
            _first_existing(d, f"{prefix}-images-idx3-ubyte"),
            _first_existing(d, f"{prefix}-labels-idx1-ubyte"),
            name=task,
        )
    if task == "cifar10":
        d = root / "cifar10"
        if not d.exists() and (root / "cifar-10-batches-bin").exists():
            d = root / "cifar-10-batches-bin"
        names = [f"data_batch_{i}.bin" for i in range(1, 6)] if split == "train" else ["test_batch.bin"]
        paths = [d / n for n in names]
        for p in paths:
            if not p.exists():
                raise FileNotFoundError(f"missing {p}")
        return load_cifar10_gray(paths, name="cifar10")
    raise ValueError(f"unknown task {task!r}; choose from {TASKS}")


def write_idx(path, array: np.ndarray):
    """Write a uint8 array as an IDX file (used for fixtures and exports)."""
    array = np.asarray(array, dtype=np.uint8)
    header = bytes([0, 0, IDX_UBYTE, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.tobytes())
