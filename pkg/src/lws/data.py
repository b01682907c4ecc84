"""Task datasets: IDX ingestion and a synthetic teacher-student suite."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ConsistencyError, DataError, FormatError
from .tensor import Tensor

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Task:
    name: str
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    n_classes: int

    def __post_init__(self):
        if len(self.x_train) != len(self.y_train) or len(self.x_test) != len(self.y_test):
            raise ConsistencyError(f"task {self.name!r}: inputs and labels differ in length")


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, expected_magic: int, path) -> np.ndarray:
    if len(raw) < 4:
        raise FormatError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: expected IDX magic 0x{expected_magic:08x}, found 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header != count:
        raise FormatError(f"{path}: header announces {count} bytes of data, file holds {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path) -> tuple[Tensor, np.ndarray]:
    """Read an IDX image/label pair (optionally gzipped).

    Images come back as an ``n x 1 x rows x cols`` tensor scaled to [0, 1].
    """
    images = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, images_path)
    labels = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"{images_path} holds {images.shape[0]} images but {labels_path} holds {labels.shape[0]} labels"
        )
    x = images.astype(np.float64)[:, None, :, :] / 255.0
    return Tensor(x), labels.astype(np.int64)


def write_idx(path, array) -> None:
    """Write an unsigned-byte array in IDX layout (dimension count taken from the array)."""
    a = np.asarray(array)
    if a.dtype != np.uint8:
        if a.size and (a.min() < 0 or a.max() > 255 or not np.all(a == np.round(a))):
            raise DataError("IDX ubyte payload needs integers in [0, 255]")
        a = a.astype(np.uint8)
    header = struct.pack(">I", 0x00000800 | a.ndim) + struct.pack(f">{a.ndim}I", *a.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(a).tobytes())


def subsample(x: np.ndarray, y: np.ndarray, n: int | None, rng: np.random.Generator):
    """Uniform random subset of size ``n`` without replacement (all rows if ``n`` is None)."""
    if n is None or n >= len(y):
        return x, y
    idx = np.sort(rng.choice(len(y), size=n, replace=False))
    return x[idx], y[idx]


def pad_images(x: np.ndarray, size: int) -> np.ndarray:
    """Zero-pad ``n x c x h x w`` images symmetrically to ``size x size``."""
    h, w = x.shape[-2:]
    if h > size or w > size:
        raise DataError(f"cannot pad {h}x{w} images to {size}x{size}")
    top, left = (size - h) // 2, (size - w) // 2
    return np.pad(x, ((0, 0), (0, 0), (top, size - h - top), (left, size - w - left)))


# ---------------------------------------------------------------------------
# synthetic suite


@dataclass
class SyntheticSuiteSpec:
    n_tasks: int = 3
    input_dim: int = 16
    n_classes: int = 4
    n_train: int = 2000
    n_test: int = 1000
    groups: Sequence[int] = (0, 0, 1)
    teacher_hidden: int = 64
    label_noise: float = 0.0

    def __post_init__(self):
        self.groups = tuple(int(g) for g in self.groups)
        if len(self.groups) != self.n_tasks:
            raise ConfigError(f"{len(self.groups)} teacher groups given for {self.n_tasks} tasks")
        if self.n_tasks < 1 or self.n_train < 1 or self.n_test < 1 or self.n_classes < 2:
            raise ConfigError(f"invalid synthetic suite sizes: {self}")
        if not 0.0 <= self.label_noise <= 1.0:
            raise ConfigError(f"label noise must lie in [0, 1], got {self.label_noise}")


@dataclass
class Teacher:
    """Frozen random one-hidden-layer tanh network; labels are the argmax class."""

    w1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def logits(self, x: np.ndarray) -> np.ndarray:
        return np.tanh(x @ self.w1) @ self.w2 + self.b2

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.logits(x).argmax(axis=1)


@dataclass
class SyntheticTask(Task):
    teacher: Teacher | None = None
    permutation: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def teacher_labels(self, x: np.ndarray) -> np.ndarray:
        return self.permutation[self.teacher(x)]


def _make_teacher(spec: SyntheticSuiteSpec, rng: np.random.Generator) -> Teacher:
    d, h, c = spec.input_dim, spec.teacher_hidden, spec.n_classes
    w1 = rng.standard_normal((d, h)) * np.sqrt(1.0 / d)
    w2 = rng.standard_normal((h, c)) * np.sqrt(1.0 / h)
    # centre the logits on a reference sample so classes come out roughly balanced
    ref = np.tanh(rng.standard_normal((4096, d)) @ w1) @ w2
    return Teacher(w1, w2, -ref.mean(axis=0))


def synthetic_suite(spec: SyntheticSuiteSpec, seed: int) -> list[SyntheticTask]:
    """Tasks labelled by frozen random teachers; tasks in one group share a teacher.

    Each task draws its own inputs and its own class permutation, so tasks of
    a group are relabelings of one function.
    """
    rng = np.random.default_rng(seed)
    teachers = {g: _make_teacher(spec, rng) for g in sorted(set(spec.groups))}
    tasks = []
    for t, g in enumerate(spec.groups):
        teacher = teachers[g]
        perm = rng.permutation(spec.n_classes)
        splits = []
        for n in (spec.n_train, spec.n_test):
            x = rng.standard_normal((n, spec.input_dim))
            y = perm[teacher(x)]
            flip = rng.random(n) < spec.label_noise
            y = np.where(flip, rng.integers(0, spec.n_classes, n), y)
            splits += [x, y.astype(np.int64)]
        tasks.append(
            SyntheticTask(f"task{t}", *splits, n_classes=spec.n_classes, teacher=teacher, permutation=perm)
        )
    return tasks
