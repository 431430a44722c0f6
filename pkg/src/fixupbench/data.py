"""Dataset loaders: IDX (MNIST-format), CIFAR-10 binary batches, synthetic Gaussians."""

import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, FormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32


@dataclass(frozen=True)
class Dataset:
    """Standardized inputs with integer labels.

    ``mean``/``std`` are the statistics that were subtracted/divided; they
    broadcast against one example.
    """

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise FormatError(f"{self.inputs.shape[0]} inputs but {self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise FormatError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return self.inputs.shape[0]


@dataclass(frozen=True)
class Splits:
    train: Dataset
    test: Dataset

    @property
    def num_classes(self):
        return self.train.num_classes


def _standardize(raw, stats, axes):
    if stats is None:
        mean = raw.mean(axis=axes, keepdims=True)[0]
        std = raw.std(axis=axes, keepdims=True)[0]
        std = np.where(std > 0, std, 1.0)
    else:
        mean, std = stats
    return (raw - mean) / std, mean, std


def read_idx(path, expected_magic):
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 4:
        raise FormatError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", blob[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", blob[4:header])
    count = int(np.prod(dims))
    if len(blob) - header < count:
        raise FormatError(f"{path}: payload has {len(blob) - header} bytes, expected {count}")
    return np.frombuffer(blob, dtype=np.uint8, count=count, offset=header).reshape(dims)


def write_idx(path, array):
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(f">{array.ndim}I", *array.shape))
        f.write(array.tobytes())


def load_idx(images_path, labels_path, num_classes=10, stats=None):
    """Load an IDX image/label pair as (N, 1, rows, cols) inputs.

    Pixels are scaled to [0, 1] and standardized with a single mean/std,
    computed here unless ``stats`` (taken from the training split) is given.
    """
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    raw = images.astype(np.float64)[:, None, :, :] / 255.0
    if stats is None:
        mean, std = np.array(raw.mean()), np.array(raw.std() or 1.0)
    else:
        mean, std = stats
    return Dataset((raw - mean) / std, labels.astype(np.int64), num_classes, mean, std)


def load_cifar10_bin(paths, stats=None):
    """Load CIFAR-10 binary batches: each record is a label byte then R, G, B 32x32 planes."""
    if isinstance(paths, (str, bytes)) or hasattr(paths, "__fspath__"):
        paths = [paths]
    chunks = []
    for path in paths:
        with open(path, "rb") as f:
            blob = f.read()
        if len(blob) % CIFAR_RECORD:
            raise FormatError(f"{path}: length {len(blob)} is not a multiple of {CIFAR_RECORD}")
        chunks.append(np.frombuffer(blob, dtype=np.uint8).reshape(-1, CIFAR_RECORD))
    records = np.concatenate(chunks)
    labels = records[:, 0].astype(np.int64)
    raw = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    x, mean, std = _standardize(raw, stats, axes=(0, 2, 3))
    return Dataset(x, labels, 10, mean, std)


def synth_gaussian(num_classes, dim, n_per_class, separation, seed):
    """Seeded Gaussian mixture: class k is centred at ``separation * e_(k mod dim)``.

    Unit isotropic noise, shuffled and split 80/20; features standardized with
    training-split statistics.
    """
    if num_classes < 2 or dim < 1 or separation < 0 or n_per_class < 1:
        raise ConfigError("synth_gaussian needs num_classes >= 2, dim >= 1, separation >= 0")
    rng = T.make_rng(seed)
    labels = np.repeat(np.arange(num_classes), n_per_class)
    centers = np.zeros((num_classes, dim))
    centers[np.arange(num_classes), np.arange(num_classes) % dim] = separation
    x = centers[labels] + rng.standard_normal((labels.size, dim))
    order = rng.permutation(labels.size)
    x, labels = x[order], labels[order]
    n_train = int(round(0.8 * labels.size))
    train_raw, test_raw = x[:n_train], x[n_train:]
    train_x, mean, std = _standardize(train_raw, None, axes=(0,))
    test_x = (test_raw - mean) / std
    return Splits(Dataset(train_x, labels[:n_train], num_classes, mean, std),
                  Dataset(test_x, labels[n_train:], num_classes, mean, std))
