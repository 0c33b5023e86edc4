"""
Dataset ingestion: IDX image/label files and synthetic Gaussian blobs
"""
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Tuple

import numpy as np

import config
from core.errors import IngestionError, ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dataset:
    """Inputs [N, ...], integer labels [N] and the number of classes"""
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise ValidationError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")
        if self.num_classes < 1:
            raise ValidationError(f"num_classes must be positive, got {self.num_classes}")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValidationError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def sample_shape(self) -> Tuple[int, ...]:
        return tuple(self.inputs.shape[1:])

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.inputs[indices], self.labels[indices], self.num_classes)

    def flattened(self) -> "Dataset":
        return Dataset(self.inputs.reshape(len(self.inputs), -1), self.labels, self.num_classes)

    def class_histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


def _read_header(data: bytes, path: Path, expected_magic: int, dims: int) -> Tuple[int, ...]:
    header_size = 4 * (1 + dims)
    if len(data) < header_size:
        raise IngestionError(f"header needs {header_size} bytes, file has {len(data)}", str(path), len(data))
    magic, *sizes = struct.unpack(f">{1 + dims}I", data[:header_size])
    if magic != expected_magic:
        raise IngestionError(f"bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}", str(path), 0)
    return tuple(sizes)


def load_idx(images_path, labels_path, num_classes: Optional[int] = None) -> Dataset:
    """
    Load an IDX image file (magic 0x00000803) and label file (magic 0x00000801)
    Pixels are scaled to [0, 1]; images come back as [N, 1, rows, cols]
    """
    images_path, labels_path = Path(images_path), Path(labels_path)
    image_bytes = images_path.read_bytes()
    label_bytes = labels_path.read_bytes()

    count, rows, cols = _read_header(image_bytes, images_path, config.IDX_IMAGE_MAGIC, 3)
    (label_count,) = _read_header(label_bytes, labels_path, config.IDX_LABEL_MAGIC, 1)

    pixel_count = count * rows * cols
    if len(image_bytes) - 16 < pixel_count:
        raise IngestionError(f"expected {pixel_count} pixel bytes, found {len(image_bytes) - 16}",
                             str(images_path), len(image_bytes))
    if len(label_bytes) - 8 < label_count:
        raise IngestionError(f"expected {label_count} label bytes, found {len(label_bytes) - 8}",
                             str(labels_path), len(label_bytes))
    if count != label_count:
        raise IngestionError(f"{count} images but {label_count} labels", str(labels_path), 4)
    if count == 0:
        raise IngestionError("file holds no samples", str(images_path), 4)

    pixels = np.frombuffer(image_bytes, dtype=np.uint8, count=pixel_count, offset=16)
    images = (pixels.astype(np.float32) / 255.0).reshape(count, 1, rows, cols)
    labels = np.frombuffer(label_bytes, dtype=np.uint8, count=label_count, offset=8).astype(np.int64)
    classes = num_classes if num_classes is not None else int(labels.max()) + 1
    logger.info(f"Loaded {count} {rows}x{cols} images from {images_path.name}")
    return Dataset(images, labels, classes)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path):
    """Write uint8 images [N, rows, cols] and labels [N] in IDX format"""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    count, rows, cols = images.shape
    Path(images_path).write_bytes(
        struct.pack(">4I", config.IDX_IMAGE_MAGIC, count, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(
        struct.pack(">2I", config.IDX_LABEL_MAGIC, len(labels)) + labels.tobytes())


def synth_blobs(n: int, num_classes: int, dim: int, spread: float, seed: int,
                radius: float = config.SYNTH_MEAN_RADIUS) -> Dataset:
    """
    Balanced Gaussian blobs around class means on a sphere of `radius`
    Means come from one stream and samples from another, both keyed by seed
    """
    if num_classes < 1 or dim < 1:
        raise ValidationError(f"num_classes and dim must be positive, got {num_classes}, {dim}")
    if n < num_classes:
        raise ValidationError(f"need at least one sample per class: n={n} < num_classes={num_classes}")
    if spread < 0:
        raise ValidationError(f"spread must be non-negative, got {spread}")

    mean_rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0]))
    sample_rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 1]))
    means = mean_rng.standard_normal((num_classes, dim))
    means *= radius / np.linalg.norm(means, axis=1, keepdims=True)

    labels = sample_rng.permutation(np.arange(n) % num_classes)
    noise = sample_rng.standard_normal((n, dim))
    inputs = (means[labels] + spread * noise).astype(np.float32)
    return Dataset(inputs, labels.astype(np.int64), num_classes)


def train_test_split(dataset: Dataset, test_size: int, seed: int) -> Tuple[Dataset, Dataset]:
    """Deterministic shuffle, last `test_size` samples held out"""
    if not 0 < test_size < len(dataset):
        raise ValidationError(f"test_size must be in (0, {len(dataset)}), got {test_size}")
    order = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 2])).permutation(len(dataset))
    return dataset.subset(order[:-test_size]), dataset.subset(order[-test_size:])


def batches(dataset: Dataset, batch_size: int,
            rng: Optional[np.random.Generator] = None) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Mini-batches in shuffled order (or index order without an rng)"""
    if batch_size < 1:
        raise ValidationError(f"batch_size must be positive, got {batch_size}")
    order = rng.permutation(len(dataset)) if rng is not None else np.arange(len(dataset))
    for start in range(0, len(order), batch_size):
        index = order[start:start + batch_size]
        yield dataset.inputs[index], dataset.labels[index]
