import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple

import numpy as np

from src.utils.errors import DatasetError
from src.utils.utils import spawn_rngs

logger = logging.getLogger(__name__)

# CIFAR-10 binary layout: 1 label byte + 3072 pixel bytes (R, G, B planes, row-major)
CIFAR_SHAPE = (3, 32, 32)
CIFAR_RECORD_BYTES = 1 + int(np.prod(CIFAR_SHAPE))
CIFAR_RECORDS_PER_FILE = 10000
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"
CIFAR_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR_STD = (0.2470, 0.2435, 0.2616)


@dataclass(frozen=True)
class Dataset:
    """Images N x C x H x W (float64, normalized) and integer labels in [0, num_classes)."""

    images: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.images.ndim != 4 or self.labels.shape != (self.images.shape[0],):
            raise DatasetError(f"images {self.images.shape} and labels {self.labels.shape} disagree")
        if len(self.labels) == 0:
            raise DatasetError("dataset is empty")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise DatasetError(f"labels must lie in [0, {self.num_classes})")
        self.images.flags.writeable = False
        self.labels.flags.writeable = False

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def batch(self, indices: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
        indices = np.asarray(indices, dtype=np.int64)
        return self.images[indices], self.labels[indices]

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.images, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        return h.hexdigest()


# ===== CIFAR-10 binary =====

def parse_record(record: bytes) -> Tuple[int, np.ndarray]:
    if len(record) != CIFAR_RECORD_BYTES:
        raise DatasetError(f"record must be {CIFAR_RECORD_BYTES} bytes, got {len(record)}")
    pixels = np.frombuffer(record, dtype=np.uint8, offset=1).reshape(CIFAR_SHAPE)
    return int(record[0]), pixels


def serialize_record(label: int, pixels: np.ndarray) -> bytes:
    if pixels.shape != CIFAR_SHAPE or pixels.dtype != np.uint8:
        raise DatasetError(f"pixels must be uint8 {CIFAR_SHAPE}, got {pixels.dtype} {pixels.shape}")
    return bytes([label]) + pixels.tobytes()


def normalize_cifar(pixels: np.ndarray) -> np.ndarray:
    """uint8 N x 3 x 32 x 32 -> [0, 1] -> per-channel standardized float64."""
    x = pixels.astype(np.float64) / 255.0
    mean = np.asarray(CIFAR_MEAN).reshape(1, 3, 1, 1)
    std = np.asarray(CIFAR_STD).reshape(1, 3, 1, 1)
    return (x - mean) / std


class BaseDataLoader:
    """Base loader that reads files below one directory."""

    def __init__(self, folder: str | Path):
        self.base_path = Path(folder)

    def _read_bytes(self, name: str) -> bytes:
        path = self.base_path / name
        if not path.is_file():
            raise DatasetError(f"missing dataset file {path}")
        return path.read_bytes()


class Cifar10Loader(BaseDataLoader):
    def _read_batch(self, name: str) -> Tuple[np.ndarray, np.ndarray]:
        raw = self._read_bytes(name)
        expected = CIFAR_RECORD_BYTES * CIFAR_RECORDS_PER_FILE
        if len(raw) != expected:
            raise DatasetError(f"{name}: expected {expected} bytes, got {len(raw)}")
        records = np.frombuffer(raw, dtype=np.uint8).reshape(CIFAR_RECORDS_PER_FILE, CIFAR_RECORD_BYTES)
        labels = records[:, 0].astype(np.int64)
        if labels.max() > 9:
            raise DatasetError(f"{name}: label byte out of range ({labels.max()})")
        return records[:, 1:].reshape((-1,) + CIFAR_SHAPE), labels

    def _load(self, names: Sequence[str]) -> Dataset:
        parts = [self._read_batch(name) for name in names]
        pixels = np.concatenate([p for p, _ in parts])
        labels = np.concatenate([lab for _, lab in parts])
        return Dataset(normalize_cifar(pixels), labels, 10)

    def load_train(self) -> Dataset:
        return self._load(CIFAR_TRAIN_FILES)

    def load_test(self) -> Dataset:
        return self._load([CIFAR_TEST_FILE])


def load_cifar10(path: str | Path) -> Tuple[Dataset, Dataset]:
    """(train, test) from a directory holding the standard binary batches."""
    loader = Cifar10Loader(path)
    train, test = loader.load_train(), loader.load_test()
    logger.info(f"loaded CIFAR-10 from {path}: {len(train)} train / {len(test)} test")
    return train, test


# ===== synthetic =====

def synthesize_dataset(num_classes: int, n_per_class: int, shape: Sequence[int], seed: int,
                       difficulty: float = 0.0, split: str = "train") -> Dataset:
    """Class-conditional Gaussian blobs.

    Each class has a mean pattern m_c ~ N(0, I); a sample is
    (m_c + difficulty * noise) / sqrt(1 + difficulty^2), so every pixel has
    zero mean and unit variance. Train and test share the class means and use
    independent noise.
    """
    if n_per_class < 2:
        raise DatasetError(f"need at least 2 samples per class, got {n_per_class}")
    if split not in ("train", "test"):
        raise DatasetError(f"unknown split {split!r}")
    shape = tuple(int(s) for s in shape)
    mean_rng, train_rng, test_rng = spawn_rngs(seed, 3)
    means = mean_rng.normal(0.0, 1.0, size=(num_classes,) + shape)
    noise_rng = train_rng if split == "train" else test_rng

    labels = np.repeat(np.arange(num_classes, dtype=np.int64), n_per_class)
    noise = noise_rng.normal(0.0, 1.0, size=(len(labels),) + shape)
    images = (means[labels] + difficulty * noise) / np.sqrt(1.0 + difficulty ** 2)
    return Dataset(images, labels, num_classes)
