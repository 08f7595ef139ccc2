"""Datasets: the simulated hierarchical 2D distribution and MNIST IDX files.

The simulated data places ``n_global`` cluster centers equally spaced on a
circle; each center splits into two local clusters rotated by
``±local_offset`` radians, and points are the local means plus isotropic
Gaussian noise.  Coordinates here are always unscaled (radius units); the
trainer multiplies by ``input_scale`` before the discriminator sees them.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass

import numpy as np

CLOCKWISE = 0
ANTICLOCKWISE = 1


@dataclass(frozen=True)
class Sim2DSpec:
    n_global: int = 10
    radius: float = 2.0
    local_offset: float = 0.05
    noise_std: float = 0.1
    input_scale: float = 0.25

    def __post_init__(self):
        if self.n_global < 1:
            raise ValueError(f"n_global must be >= 1, got {self.n_global}")
        if self.radius <= 0 or self.input_scale <= 0:
            raise ValueError("radius and input_scale must be positive")
        if self.local_offset < 0 or self.noise_std < 0:
            raise ValueError("local_offset and noise_std must be nonnegative")


@dataclass(frozen=True)
class LabeledPoint:
    x: float
    y: float
    global_id: int
    local_id: int  # CLOCKWISE or ANTICLOCKWISE


def global_angles(spec: Sim2DSpec) -> np.ndarray:
    """Center angles, counter-clockwise from the +x axis."""
    return 2.0 * np.pi * np.arange(spec.n_global) / spec.n_global


def global_means(spec: Sim2DSpec) -> np.ndarray:
    """(n_global, 2) cluster centers on the circle."""
    theta = global_angles(spec)
    return spec.radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)


def cell_means(spec: Sim2DSpec) -> np.ndarray:
    """(n_global, 2, 2): [global, local, xy]; the anticlockwise local mean
    sits at angle theta + local_offset, the clockwise one at theta - offset."""
    theta = global_angles(spec)
    out = np.empty((spec.n_global, 2, 2))
    for local, sign in ((CLOCKWISE, -1.0), (ANTICLOCKWISE, +1.0)):
        t = theta + sign * spec.local_offset
        out[:, local, 0] = spec.radius * np.cos(t)
        out[:, local, 1] = spec.radius * np.sin(t)
    return out


def sample_sim2d(spec: Sim2DSpec, n: int, rng) -> tuple:
    """Vectorized draw: (points (n, 2), global_id (n,), local_id (n,))."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    g = rng.integers(0, spec.n_global, size=n)
    l = rng.integers(0, 2, size=n)
    means = cell_means(spec)[g, l]
    return means + rng.normal(0.0, spec.noise_std, size=(n, 2)), g, l


def gen_sim2d(spec: Sim2DSpec, n: int, rng) -> list:
    """Spec-level sampler returning LabeledPoint records."""
    points, g, l = sample_sim2d(spec, n, rng)
    return [
        LabeledPoint(x=float(p[0]), y=float(p[1]), global_id=int(gi), local_id=int(li))
        for p, gi, li in zip(points, g, l)
    ]


# -- CSV persistence ---------------------------------------------------------

POINTS_HEADER = "x,y,global_id,local_id"


def save_points_csv(path, points: np.ndarray, global_ids, local_ids):
    with open(path, "w") as fh:
        fh.write(POINTS_HEADER + "\n")
        for (x, y), g, l in zip(points, global_ids, local_ids):
            fh.write(f"{x:.8f},{y:.8f},{int(g)},{int(l)}\n")


def load_points_csv(path) -> tuple:
    xs, gs, ls = [], [], []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != POINTS_HEADER:
            raise ValueError(f"unexpected header {header!r} in {path}")
        for line in fh:
            x, y, g, l = line.strip().split(",")
            xs.append((float(x), float(y)))
            gs.append(int(g))
            ls.append(int(l))
    return np.array(xs).reshape(-1, 2), np.array(gs, dtype=int), np.array(ls, dtype=int)


# -- MNIST IDX ---------------------------------------------------------------

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX file; message carries the byte offset of the problem."""


def _open_maybe_gzip(path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(fh, n, offset, what):
    data = fh.read(n)
    if len(data) != n:
        raise IdxFormatError(
            f"truncated IDX file: expected {n} bytes for {what} at offset {offset}, got {len(data)}"
        )
    return data


def read_idx_images(path) -> np.ndarray:
    """(n, rows, cols) uint8 pixel array from an IDX image file."""
    with _open_maybe_gzip(path) as fh:
        header = _read_exact(fh, 16, 0, "image header")
        magic, n, rows, cols = struct.unpack(">IIII", header)
        if magic != IMAGES_MAGIC:
            raise IdxFormatError(
                f"bad image magic 0x{magic:08x} at offset 0 (expected 0x{IMAGES_MAGIC:08x})"
            )
        payload = _read_exact(fh, n * rows * cols, 16, f"{n} images of {rows}x{cols}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    with _open_maybe_gzip(path) as fh:
        header = _read_exact(fh, 8, 0, "label header")
        magic, n = struct.unpack(">II", header)
        if magic != LABELS_MAGIC:
            raise IdxFormatError(
                f"bad label magic 0x{magic:08x} at offset 0 (expected 0x{LABELS_MAGIC:08x})"
            )
        payload = _read_exact(fh, n, 8, f"{n} labels")
    return np.frombuffer(payload, dtype=np.uint8)


def write_idx_images(path, images: np.ndarray):
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def load_mnist(images_path, labels_path, keep_digits=None) -> tuple:
    """Images as float32 (n, 1, rows, cols) scaled to [0, 1], plus labels.

    ``keep_digits`` filters to a subset of classes and renumbers the labels
    to positions in the sorted kept list, so they can drive a k-way
    supervised root directly.  Image and label counts must agree.
    """
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise IdxFormatError(
            f"count mismatch: {len(images)} images vs {len(labels)} labels"
        )
    if keep_digits is not None:
        kept = sorted(set(int(d) for d in keep_digits))
        keep = np.isin(labels, kept)
        images, labels = images[keep], labels[keep]
        remap = {digit: i for i, digit in enumerate(kept)}
        labels = np.array([remap[int(v)] for v in labels])
    scaled = (images.astype(np.float32) / 255.0)[:, None, :, :]
    return scaled, labels.astype(np.int64)


def mnist_to_bytes(images_float: np.ndarray) -> np.ndarray:
    """Invert the [0, 1] scaling back to exact uint8 pixels."""
    return np.rint(np.asarray(images_float) * 255.0).astype(np.uint8)


def write_pgm(path, image: np.ndarray):
    """Write one grayscale image as a binary (P5) PGM file.

    Accepts a (h, w) array: uint8 passes through, floats are treated as
    [0, 1] intensities.
    """
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"expected a (h, w) image, got shape {img.shape}")
    if img.dtype != np.uint8:
        img = mnist_to_bytes(np.clip(img, 0.0, 1.0))
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
