"""Datasets: IDX container reader/writer and seeded synthetic generators."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import PredCodeError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
DATA_ENV_VAR = "PREDCODE_DATA"


class IdxFormatError(PredCodeError, ValueError):
    """Base class for malformed IDX files."""


class IdxMagicError(IdxFormatError):
    def __init__(self, path, expected, found):
        super().__init__(f"{path}: bad magic number, expected 0x{expected:08x}, found 0x{found:08x}")
        self.expected = expected
        self.found = found


class IdxTruncatedError(IdxFormatError):
    pass


class IdxCountMismatchError(IdxFormatError):
    pass


@dataclass(eq=False)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray | None = None
    name: str = ""
    split: str = ""
    classes: int | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        if self.inputs.ndim != 2:
            raise ValueError(f"inputs must be (samples, features), got shape {self.inputs.shape}")
        if not np.all(np.isfinite(self.inputs)):
            raise ValueError("inputs contain non-finite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.inputs),):
                raise ValueError(f"{len(self.labels)} labels for {len(self.inputs)} samples")
            if self.classes is None:
                self.classes = int(self.labels.max()) + 1 if len(self.labels) else 0
            if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.classes):
                raise ValueError(f"labels outside [0, {self.classes})")

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def features(self) -> int:
        return self.inputs.shape[1]

    def subset(self, count: int) -> "Dataset":
        labels = None if self.labels is None else self.labels[:count]
        return Dataset(self.inputs[:count], labels, self.name, self.split, self.classes)


def _open(path: Path):
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_idx(path, magic: int) -> np.ndarray:
    path = Path(path)
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise IdxTruncatedError(f"{path}: header truncated ({len(raw)} bytes)")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IdxMagicError(path, magic, found)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncatedError(f"{path}: header truncated ({len(raw)} of {header} bytes)")
    shape = struct.unpack(f">{ndim}I", raw[4:header])
    expected = int(np.prod(shape))
    payload = len(raw) - header
    if payload < expected:
        raise IdxTruncatedError(f"{path}: payload has {payload} bytes, header promises {expected}")
    return np.frombuffer(raw, dtype=np.uint8, count=expected, offset=header).reshape(shape)


def load_idx(path_images, path_labels=None, name: str = "", split: str = "") -> Dataset:
    """Read an IDX image file (and optional label file); pixels scaled to [0, 1]."""
    images = _read_idx(path_images, IMAGE_MAGIC)
    inputs = images.reshape(len(images), -1).astype(float) / 255.0
    labels = None
    classes = None
    if path_labels is not None:
        labels = _read_idx(path_labels, LABEL_MAGIC).astype(np.int64)
        if len(labels) != len(images):
            raise IdxCountMismatchError(
                f"{len(images)} images in {path_images} but {len(labels)} labels in {path_labels}"
            )
        classes = int(labels.max()) + 1 if len(labels) else 0
    return Dataset(inputs, labels, name=name, split=split, classes=classes)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as IDX (3-D images or 1-D labels); ``.gz`` paths are compressed."""
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError(f"IDX writer expects uint8, got {array.dtype}")
    if array.ndim == 3:
        magic = IMAGE_MAGIC
    elif array.ndim == 1:
        magic = LABEL_MAGIC
    else:
        raise ValueError(f"IDX writer handles 1-D labels or 3-D images, got {array.ndim}-D")
    blob = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape) + array.tobytes()
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wb") as fh:
        fh.write(blob)


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def find_mnist(directory) -> dict[str, tuple[Path, Path]] | None:
    """Locate the four MNIST-family files (plain or ``.gz``) in ``directory``."""
    if directory is None:
        return None
    directory = Path(directory)
    found = {}
    for split, names in MNIST_FILES.items():
        pair = []
        for stem in names:
            hits = [directory / stem, directory / (stem + ".gz")]
            hit = next((p for p in hits if p.is_file()), None)
            if hit is None:
                return None
            pair.append(hit)
        found[split] = tuple(pair)
    return found


def default_data_dir() -> str | None:
    return os.environ.get(DATA_ENV_VAR)


def load_mnist(directory) -> tuple[Dataset, Dataset]:
    files = find_mnist(directory)
    if files is None:
        raise FileNotFoundError(f"MNIST-format IDX files not found in {directory}")
    train = load_idx(*files["train"], name="mnist", split="train")
    test = load_idx(*files["test"], name="mnist", split="test")
    return train, test


def synth_blobs(classes: int, per_class: int, dim: int, spread: float, seed: int) -> Dataset:
    """Gaussian blobs with seeded centres, clipped into the unit cube.

    Centres are drawn uniformly from ``[0.1, 0.9]^dim``; every class gets
    exactly ``per_class`` samples and rows are shuffled.
    """
    if classes < 2:
        raise ValueError("synth_blobs needs at least two classes")
    rng = np.random.default_rng(seed)
    centres = rng.uniform(0.1, 0.9, size=(classes, dim))
    labels = np.repeat(np.arange(classes), per_class)
    inputs = centres[labels] + spread * rng.standard_normal((len(labels), dim))
    order = rng.permutation(len(labels))
    return Dataset(
        np.clip(inputs[order], 0.0, 1.0),
        labels[order],
        name=f"blobs{classes}x{dim}",
        classes=classes,
    )


def repeated_vector(count: int, dim: int, seed: int) -> Dataset:
    """``count`` copies of one seeded vector in [0, 1]; a memorisation task."""
    rng = np.random.default_rng(seed)
    vec = rng.uniform(0.0, 1.0, size=dim)
    return Dataset(np.tile(vec, (count, 1)), name=f"repeat{dim}")


def split(data: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(data))
    cut = len(data) - int(round(test_fraction * len(data)))
    parts = []
    for idx, tag in ((order[:cut], "train"), (order[cut:], "test")):
        labels = None if data.labels is None else data.labels[idx]
        parts.append(Dataset(data.inputs[idx], labels, data.name, tag, data.classes))
    return parts[0], parts[1]


def one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    out = np.zeros((len(labels), classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out
