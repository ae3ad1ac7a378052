"""Dataset loading (IDX images/labels, CIFAR-10 binary batches), pixel
normalization, class-stratified subsets, and the random affine augmentation.

Pixels are scaled to [0, 1] and the mean pixel of the training split is
subtracted; the same mean is reused for the test split. Augmentation draws a
fresh transform per access: scale, then rotate, then shift, all about the
image center, resampled bilinearly with zero fill outside the source.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError
from .tensor import rng_stream

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
CIFAR_RECORD = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes


@dataclass
class Dataset:
    """Images in normalized units (mean already subtracted), one-hot labels."""

    images: np.ndarray  # (N, C, H, W) float64
    labels: np.ndarray  # (N, K) one-hot float64
    mean_pixel: float

    def __len__(self):
        return self.images.shape[0]

    @property
    def class_ids(self) -> np.ndarray:
        return self.labels.argmax(axis=1)


def one_hot(y: np.ndarray, num_classes: int) -> np.ndarray:
    y = np.asarray(y)
    out = np.zeros((y.shape[0], num_classes))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def normalize(raw: np.ndarray, mean_pixel: float) -> np.ndarray:
    """[0,1]-scaled pixels minus the training-split mean."""
    return np.asarray(raw, dtype=np.float64) - mean_pixel


def denormalize(images: np.ndarray, mean_pixel: float) -> np.ndarray:
    return images + mean_pixel


# ---------------------------------------------------------------------------
# IDX (big-endian) image/label files
# ---------------------------------------------------------------------------

def read_idx_images(path) -> np.ndarray:
    """(N, H, W) uint8 array from an IDX image file."""
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) < 16:
            raise FormatError(f"{path}: truncated IDX image header")
        magic, n, rows, cols = struct.unpack(">iiii", head)
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(
                f"{path}: bad magic {magic} at offset 0 (expected {IDX_IMAGES_MAGIC})"
            )
        body = fh.read()
    if len(body) != n * rows * cols:
        raise FormatError(f"{path}: expected {n * rows * cols} pixel bytes, got {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    """(N,) uint8 label array from an IDX label file."""
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) < 8:
            raise FormatError(f"{path}: truncated IDX label header")
        magic, n = struct.unpack(">ii", head)
        if magic != IDX_LABELS_MAGIC:
            raise FormatError(
                f"{path}: bad magic {magic} at offset 0 (expected {IDX_LABELS_MAGIC})"
            )
        body = fh.read()
    if len(body) != n:
        raise FormatError(f"{path}: expected {n} label bytes, got {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).copy()


def write_idx_images(path, images: np.ndarray):
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">iiii", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">ii", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def load_mnist(images_path, labels_path, mean_pixel: float | None = None,
               num_classes: int = 10) -> Dataset:
    """One split of an IDX image/label pair as a normalized Dataset.

    mean_pixel, when given, reuses a training-split mean for this split;
    otherwise the split's own mean is used.
    """
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels"
        )
    raw = images.astype(np.float64)[:, None, :, :] / 255.0
    if mean_pixel is None:
        mean_pixel = float(raw.mean())
    return Dataset(normalize(raw, mean_pixel), one_hot(labels, num_classes), mean_pixel)


def load_cifar10(batch_paths, mean_pixel: float | None = None) -> Dataset:
    """CIFAR-10 binary batches: per record one label byte then 3072 pixel
    bytes in channel-planar (R, G, B) order."""
    if isinstance(batch_paths, (str, os.PathLike)):
        batch_paths = [batch_paths]
    images, labels = [], []
    for path in batch_paths:
        with open(path, "rb") as fh:
            blob = fh.read()
        if len(blob) == 0 or len(blob) % CIFAR_RECORD:
            raise FormatError(
                f"{path}: length {len(blob)} is not a multiple of {CIFAR_RECORD}"
            )
        rec = np.frombuffer(blob, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        labels.append(rec[:, 0].copy())
        images.append(rec[:, 1:].reshape(-1, 3, 32, 32).copy())
    raw = np.concatenate(images).astype(np.float64) / 255.0
    y = np.concatenate(labels)
    if y.max() > 9:
        raise FormatError(f"label byte {y.max()} out of range for 10 classes")
    if mean_pixel is None:
        mean_pixel = float(raw.mean())
    return Dataset(normalize(raw, mean_pixel), one_hot(y, 10), mean_pixel)


# ---------------------------------------------------------------------------
# Subsets
# ---------------------------------------------------------------------------

def subset(ds: Dataset, n: int, seed: int) -> Dataset:
    """Class-stratified subset: equal per-class counts (remainder spread over
    the lowest class ids), drawn without replacement."""
    if n > len(ds):
        raise ConfigError(f"subset size {n} exceeds dataset size {len(ds)}")
    rng = rng_stream(seed, "subset")
    ids = ds.class_ids
    classes = np.unique(ids)
    base, extra = divmod(n, len(classes))
    picks = []
    for j, c in enumerate(classes):
        want = base + (1 if j < extra else 0)
        pool = np.flatnonzero(ids == c)
        if want > pool.size:
            raise ConfigError(f"class {c} has {pool.size} samples, need {want}")
        picks.append(rng.choice(pool, size=want, replace=False))
    order = np.sort(np.concatenate(picks))
    return Dataset(ds.images[order], ds.labels[order], ds.mean_pixel)


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------

@dataclass
class AugmentSpec:
    """Uniform sampling ranges for the per-access random transform."""

    shift: tuple = (-2.0, 2.0)      # pixels, per axis
    scale: tuple = (0.7, 1.4)       # factor, per axis
    rotation: tuple = (-18.0, 18.0)  # degrees
    fill: float = 0.0

    def __post_init__(self):
        for name in ("shift", "scale", "rotation"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"augment {name} range inverted: ({lo}, {hi})")


def bilinear_sample(img: np.ndarray, rows: np.ndarray, cols: np.ndarray,
                    fill: float = 0.0) -> np.ndarray:
    """Sample img (C, H, W) at fractional (rows, cols); out-of-bounds reads
    use the fill value."""
    c, h, w = img.shape
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    fr = rows - r0
    fc = cols - c0
    out = np.full((c,) + rows.shape, fill)
    acc = np.zeros_like(out)
    for dr, dc, weight in (
        (0, 0, (1 - fr) * (1 - fc)),
        (0, 1, (1 - fr) * fc),
        (1, 0, fr * (1 - fc)),
        (1, 1, fr * fc),
    ):
        rr = r0 + dr
        cc = c0 + dc
        ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        vals = img[:, np.clip(rr, 0, h - 1), np.clip(cc, 0, w - 1)]
        acc += weight * np.where(ok, vals, fill)
    out[...] = acc
    return out


def affine_sample(img: np.ndarray, matrix: np.ndarray, offset,
                  fill: float = 0.0) -> np.ndarray:
    """Resample img under the forward map p' = matrix @ p + offset about the
    image center, where p = (x, y) in centered pixel coordinates."""
    img = np.asarray(img, dtype=np.float64)
    c, h, w = img.shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    xs = np.arange(w, dtype=np.float64) - cx
    ys = np.arange(h, dtype=np.float64) - cy
    gx, gy = np.meshgrid(xs, ys)
    inv = np.linalg.inv(matrix)
    sx = inv[0, 0] * (gx - offset[0]) + inv[0, 1] * (gy - offset[1])
    sy = inv[1, 0] * (gx - offset[0]) + inv[1, 1] * (gy - offset[1])
    return bilinear_sample(img, sy + cy, sx + cx, fill)


def augment(img: np.ndarray, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    """One fresh scale -> rotate -> shift draw applied to img (C, H, W)."""
    sx = rng.uniform(*spec.scale)
    sy = rng.uniform(*spec.scale)
    theta = math.radians(rng.uniform(*spec.rotation))
    dx = rng.uniform(*spec.shift)
    dy = rng.uniform(*spec.shift)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    rot = np.array([[cos_t, -sin_t], [sin_t, cos_t]])
    matrix = rot @ np.diag([sx, sy])
    return affine_sample(img, matrix, (dx, dy), spec.fill)


def augment_batch(x: np.ndarray, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    """Independent augment draws for each image of a batch."""
    return np.stack([augment(img, spec, rng) for img in x])


# ---------------------------------------------------------------------------
# Built-in small digit set (MNIST stand-in when no IDX files are available)
# ---------------------------------------------------------------------------

DIGITS_FILES = (
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
)


def _upsample(img8: np.ndarray, size: int = 28) -> np.ndarray:
    """Bilinear upsample of one (8, 8) image to (size, size)."""
    src = img8[None].astype(np.float64)
    pos = np.linspace(0.0, img8.shape[0] - 1.0, size)
    rows, cols = np.meshgrid(pos, pos, indexing="ij")
    return bilinear_sample(src, rows, cols)[0]


def ensure_builtin_digits(root: str, train_count: int = 1500) -> dict:
    """Write the built-in 1797-image digit set (upsampled to 28x28) as IDX
    files under root, if not already present. Returns the four file paths
    keyed like MNIST_FILES entries.

    The images come from scikit-learn's bundled digits; install the
    'digits' extra to use this path.
    """
    paths = {name: os.path.join(root, name) for name in DIGITS_FILES}
    if all(os.path.exists(p) for p in paths.values()):
        return paths
    try:
        from sklearn.datasets import load_digits
    except ImportError as exc:
        raise ConfigError(
            "built-in digits need scikit-learn (pip install 'ibpnet[digits]')"
        ) from exc
    bunch = load_digits()
    imgs = bunch.images / 16.0  # source values are 0..16
    labels = bunch.target.astype(np.uint8)
    # deterministic class-balanced split: per class, the first per_class
    # samples in file order go to the training split
    ranks = np.empty(labels.shape[0], dtype=np.int64)
    for c in range(10):
        pool = np.flatnonzero(labels == c)
        ranks[pool] = np.arange(pool.size)
    per_class = train_count // 10
    train_mask = ranks < per_class
    big = np.stack([_upsample(im) for im in imgs])
    big = np.clip(np.rint(big * 255.0), 0, 255).astype(np.uint8)
    os.makedirs(root, exist_ok=True)
    write_idx_images(paths[DIGITS_FILES[0]], big[train_mask])
    write_idx_labels(paths[DIGITS_FILES[1]], labels[train_mask])
    write_idx_images(paths[DIGITS_FILES[2]], big[~train_mask])
    write_idx_labels(paths[DIGITS_FILES[3]], labels[~train_mask])
    return paths


MNIST_FILES = DIGITS_FILES  # standard IDX file names shared by both sources

CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"

DATASETS = ("mnist", "digits", "cifar10")


def _require(paths, root):
    missing = [p for p in paths if not os.path.exists(p)]
    if missing:
        raise ConfigError(
            f"missing dataset files under {root}: "
            + ", ".join(os.path.basename(m) for m in missing)
        )


def load_split_pair(root: str, dataset: str = "mnist") -> tuple:
    """(train, test) Datasets under root; 'digits' builds its stand-in IDX
    files first. The training mean normalizes both splits."""
    if dataset == "cifar10":
        train_paths = [os.path.join(root, n) for n in CIFAR_TRAIN_FILES]
        test_path = os.path.join(root, CIFAR_TEST_FILE)
        _require(train_paths + [test_path], root)
        train = load_cifar10(train_paths)
        return train, load_cifar10(test_path, mean_pixel=train.mean_pixel)
    if dataset == "digits":
        ensure_builtin_digits(root)
    elif dataset != "mnist":
        raise ConfigError(f"unknown dataset {dataset!r} (expected one of {DATASETS})")
    paths = [os.path.join(root, name) for name in MNIST_FILES]
    _require(paths, root)
    train = load_mnist(paths[0], paths[1])
    test = load_mnist(paths[2], paths[3], mean_pixel=train.mean_pixel)
    return train, test
