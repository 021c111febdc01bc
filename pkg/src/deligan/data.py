"""Toy 2-D Gaussian data, MNIST IDX files and balanced low-data subsets."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .nets import ConfigError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataFormatError(ValueError):
    """Malformed or truncated data file."""


class DataError(ValueError):
    """Dataset cannot satisfy the requested operation."""


@dataclass
class Mode:
    mean: tuple
    cov_diag: tuple
    weight: float


@dataclass
class ToySpec:
    modes: list[Mode]

    def __post_init__(self):
        if not self.modes:
            raise ConfigError("toy spec needs at least one mode")
        weights = np.array([m.weight for m in self.modes], dtype=np.float64)
        if (weights <= 0).any() or abs(weights.sum() - 1.0) > 1e-9:
            raise ConfigError(f"mode weights must be positive and sum to 1, got {weights.tolist()}")
        for m in self.modes:
            if len(m.mean) != 2 or len(m.cov_diag) != 2:
                raise ConfigError("toy modes must be 2-D")
            if min(m.cov_diag) <= 0:
                raise ConfigError(f"covariance entries must be positive, got {m.cov_diag}")

    @property
    def means(self) -> np.ndarray:
        return np.array([m.mean for m in self.modes], dtype=np.float64)

    @property
    def stds(self) -> np.ndarray:
        return np.sqrt(np.array([m.cov_diag for m in self.modes], dtype=np.float64))

    @property
    def weights(self) -> np.ndarray:
        return np.array([m.weight for m in self.modes], dtype=np.float64)

    def to_dict(self) -> dict:
        return {"modes": [{"mean": list(m.mean), "cov_diag": list(m.cov_diag), "weight": m.weight}
                          for m in self.modes]}

    @classmethod
    def from_dict(cls, d: dict) -> "ToySpec":
        try:
            modes = [Mode(tuple(float(v) for v in m["mean"]), tuple(float(v) for v in m["cov_diag"]),
                          float(m["weight"])) for m in d["modes"]]
        except (KeyError, TypeError) as e:
            raise ConfigError(f"malformed toy spec: {e}") from None
        return cls(modes)


def unimodal() -> ToySpec:
    return ToySpec([Mode((0.0, 0.0), (0.25, 0.25), 1.0)])


def bimodal() -> ToySpec:
    # 12 std-devs between the modes: the void is wide and easy to measure
    return ToySpec([Mode((-3.0, 0.0), (0.25, 0.25), 0.5), Mode((3.0, 0.0), (0.25, 0.25), 0.5)])


TOY_PRESETS = {"unimodal": unimodal, "bimodal": bimodal}


@dataclass
class Dataset:
    samples: np.ndarray
    labels: Optional[np.ndarray] = None
    source: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise DataError(f"samples must be a matrix, got shape {self.samples.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.samples),):
                raise DataError(f"{len(self.labels)} labels for {len(self.samples)} samples")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


def sample_toy(spec: ToySpec, n: int, rng: np.random.Generator) -> Dataset:
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    labels = rng.choice(len(spec.modes), size=n, p=spec.weights)
    noise = rng.standard_normal((n, 2))
    samples = spec.means[labels] + spec.stds[labels] * noise
    return Dataset(samples, labels, source="toy")


# ---------------------------------------------------------------------------
# IDX


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f"{path}: truncated header")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise DataFormatError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    count = int(np.prod(dims))
    body = raw[header:]
    if len(body) < count:
        raise DataFormatError(f"{path}: expected {count} bytes of data, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8, count=count).reshape(dims)


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """Images flattened to rows and scaled from [0, 255] to [-1, 1]; labels 0-9."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if len(images) != len(labels):
        raise DataFormatError(f"{len(images)} images but {len(labels)} labels")
    flat = images.reshape(len(images), -1).astype(np.float64) / 127.5 - 1.0
    return Dataset(flat, labels.astype(np.int64), source=f"mnist:{images_path}")


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        f.write(images.tobytes())


def write_idx_labels(path, labels: Sequence[int]) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        f.write(labels.tobytes())


def to_pixels(samples: np.ndarray, side: int = 28) -> np.ndarray:
    """Invert the [-1, 1] scaling back to uint8 images."""
    px = np.rint((np.asarray(samples) + 1.0) * 127.5)
    return np.clip(px, 0, 255).astype(np.uint8).reshape(len(samples), side, side)


# ---------------------------------------------------------------------------


def subset_balanced(d: Dataset, per_class: int, rng: np.random.Generator) -> Dataset:
    """Draw ``per_class`` items from every class, without replacement."""
    if d.labels is None:
        raise DataError("balanced subset needs labels")
    classes = np.unique(d.labels)
    picked = []
    for c in classes:
        members = np.flatnonzero(d.labels == c)
        if len(members) < per_class:
            raise DataError(f"class {c} has {len(members)} members, need {per_class}")
        picked.append(np.sort(rng.choice(members, size=per_class, replace=False)))
    idx = np.concatenate(picked) if picked else np.empty(0, dtype=np.int64)
    return Dataset(d.samples[idx].reshape(len(idx), d.dim), d.labels[idx],
                   source=f"{d.source}|balanced{per_class}")


# ---------------------------------------------------------------------------
# CSV


def write_dataset_csv(d: Dataset, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        header = [f"x{j}" for j in range(d.dim)]
        if d.labels is not None:
            header.append("label")
        w.writerow(header)
        for i, row in enumerate(d.samples):
            out = [repr(float(v)) for v in row]
            if d.labels is not None:
                out.append(str(int(d.labels[i])))
            w.writerow(out)


def read_dataset_csv(path) -> Dataset:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise DataFormatError(f"{path}: empty file, expected a header row")
    header, body = rows[0], rows[1:]
    has_label = bool(header) and header[-1] == "label"
    width = len(header) - int(has_label)
    try:
        values = np.array([[float(v) for v in r[:width]] for r in body], dtype=np.float64)
        labels = np.array([int(r[-1]) for r in body], dtype=np.int64) if has_label else None
    except (ValueError, IndexError) as e:
        raise DataFormatError(f"{path}: {e}") from None
    return Dataset(values.reshape(len(body), width), labels, source=str(path))
