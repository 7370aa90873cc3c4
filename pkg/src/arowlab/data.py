"""Desk-scale datasets in the unit box, IDX loading and minibatching."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    provenance: str = ""

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise ValueError(f"inputs {x.shape} and labels {y.shape} do not align")
        if x.shape[0] == 0:
            raise ValueError("dataset is empty")
        if not np.all(np.isfinite(x)):
            raise ValueError("inputs contain non-finite values")
        if np.any((y < 0) | (y >= self.num_classes)):
            raise ValueError(f"labels outside [0, {self.num_classes})")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def dim(self):
        return self.inputs.shape[1]

    def subset(self, idx):
        return Dataset(self.inputs[idx], self.labels[idx], self.num_classes, self.provenance)

    def digest(self):
        """SHA-256 over a canonical little-endian serialization."""
        h = hashlib.sha256()
        h.update(struct.pack("<qqq", len(self), self.dim, self.num_classes))
        h.update(np.ascontiguousarray(self.inputs, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        return h.hexdigest()


def _to_unit_box(x):
    lo, hi = x.min(axis=0), x.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return np.clip((x - lo) / span, 0.0, 1.0)


def _moons(n, noise_sd, rng):
    ta = np.linspace(0.0, np.pi, (n + 1) // 2)
    tb = np.linspace(0.0, np.pi, n // 2)
    x = np.vstack([np.column_stack([np.cos(ta), np.sin(ta)]),
                   np.column_stack([1.0 - np.cos(tb), 0.5 - np.sin(tb)])])
    if noise_sd > 0:
        x = x + rng.normal(0.0, noise_sd, size=x.shape)
    return x


def moons_raw(n, noise_sd=0.0, seed=0):
    """Moon coordinates before shuffling and rescaling."""
    return _moons(n, noise_sd, np.random.default_rng(seed))


def two_moons(n, noise_sd=0.0, seed=0):
    """Two interleaved half circles, min-max rescaled into [0, 1]^2 per axis."""
    if n < 2 or noise_sd < 0:
        raise ValueError("two_moons needs n >= 2 and noise_sd >= 0")
    rng = np.random.default_rng(seed)
    x = _moons(n, noise_sd, rng)
    y = np.concatenate([np.zeros((n + 1) // 2, dtype=np.int64), np.ones(n // 2, dtype=np.int64)])
    order = rng.permutation(n)
    return Dataset(_to_unit_box(x[order]), y[order], 2, f"two_moons(n={n},noise_sd={noise_sd},seed={seed})")


def gaussian_blobs(num_classes, dim, n_per_class, center_spread=1.0, noise_sd=0.1, seed=0):
    """Isotropic clusters around seeded centers, affinely mapped into [0, 1]^d.

    The map uses the centers' bounding box padded by 4 noise SDs, so clean
    draws land inside the box and a zero noise level puts every sample exactly
    on its (rescaled) center.
    """
    if num_classes < 2 or dim < 1 or n_per_class < 1:
        raise ValueError("gaussian_blobs needs num_classes >= 2, dim >= 1, n_per_class >= 1")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-center_spread, center_spread, size=(num_classes, dim))
    y = np.repeat(np.arange(num_classes, dtype=np.int64), n_per_class)
    x = centers[y] + rng.normal(0.0, 1.0, size=(len(y), dim)) * noise_sd
    pad = 4.0 * noise_sd
    lo = centers.min(axis=0) - pad
    span = np.maximum(centers.max(axis=0) + pad - lo, 1e-12)
    x = np.clip((x - lo) / span, 0.0, 1.0)
    order = rng.permutation(len(y))
    tag = (f"gaussian_blobs(C={num_classes},d={dim},n={n_per_class},"
           f"spread={center_spread},noise_sd={noise_sd},seed={seed})")
    return Dataset(x[order], y[order], num_classes, tag)


def _read_header(buf, magic, name, ndims):
    if len(buf) < 4 + 4 * ndims:
        raise IdxFormatError(f"{name}: truncated header at offset {len(buf)}")
    found = struct.unpack_from(">I", buf, 0)[0]
    if found != magic:
        raise IdxFormatError(f"{name}: bad magic 0x{found:08x} at offset 0, expected 0x{magic:08x}")
    return struct.unpack_from(">" + "I" * ndims, buf, 4)


def load_idx(images_path, labels_path, limit=None, num_classes=None):
    """Read an IDX image/label pair; pixels are scaled by 1/255."""
    if limit is not None and limit < 1:
        raise ValueError(f"limit must be >= 1, got {limit}")
    with open(images_path, "rb") as f:
        ibuf = f.read()
    with open(labels_path, "rb") as f:
        lbuf = f.read()
    count, rows, cols = _read_header(ibuf, IDX_IMAGES_MAGIC, "images", 3)
    (lcount,) = _read_header(lbuf, IDX_LABELS_MAGIC, "labels", 1)
    if count != lcount:
        raise IdxFormatError(f"image count {count} (offset 4) does not match label count {lcount} (offset 4)")
    need = 16 + count * rows * cols
    if len(ibuf) < need:
        raise IdxFormatError(f"images: truncated pixel data, expected {need} bytes, file ends at offset {len(ibuf)}")
    if len(lbuf) < 8 + count:
        raise IdxFormatError(f"labels: truncated label data, expected {8 + count} bytes, file ends at offset {len(lbuf)}")
    n = count if limit is None else min(limit, count)
    pixels = np.frombuffer(ibuf, dtype=np.uint8, count=n * rows * cols, offset=16)
    labels = np.frombuffer(lbuf, dtype=np.uint8, count=n, offset=8).astype(np.int64)
    x = pixels.reshape(n, rows * cols).astype(np.float64) / 255.0
    c = int(labels.max()) + 1 if num_classes is None else num_classes
    digest = hashlib.sha256(ibuf + lbuf).hexdigest()[:16]
    return Dataset(x, labels, max(c, 2), f"idx(sha256={digest},limit={limit})")


def write_idx(images_path, labels_path, images, labels):
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        f.write(labels.tobytes())


def batches(dataset, batch_size, seed=0, shuffle=True):
    """List of index arrays covering the dataset once; the last may be short."""
    n = len(dataset)
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch size must lie in [1, {n}], got {batch_size}")
    order = np.random.default_rng(seed).permutation(n) if shuffle else np.arange(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def split(dataset, fractions, seed=0):
    """Seeded split into parts with the given fractions (summing to 1)."""
    fractions = list(fractions)
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f < 0 for f in fractions):
        raise ValueError(f"split fractions must be non-negative and sum to 1, got {fractions}")
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    cuts = np.round(np.cumsum(fractions) * n).astype(int)
    parts, start = [], 0
    for end in cuts:
        parts.append(dataset.subset(np.sort(order[start:end])) if end > start else None)
        start = end
    return parts
