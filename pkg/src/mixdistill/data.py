"""Dataset ingestion and synthesis.

Images are float64 NHWC arrays in [0, 1].  Supported sources: the big-endian
IDX format used by the MNIST-family distributions, and a synthetic
Gaussian-blob task used for fast self-contained experiments.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InputError

IDX_MAGIC_IMAGES = 0x00000803
IDX_MAGIC_LABELS = 0x00000801


@dataclass
class Dataset:
    """Stack of same-shape images with optional hard labels (test sets)."""

    images: np.ndarray  # (N, H, W, C) in [0, 1]
    labels: np.ndarray | None
    name: str
    num_classes: int

    def __post_init__(self):
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if len(self.labels) != len(self.images):
                raise InputError("labels length does not match images")
            if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
                raise InputError("labels out of range")

    def __len__(self):
        return len(self.images)

    @property
    def image_shape(self):
        return tuple(self.images.shape[1:])


def load_idx(images_path, labels_path=None, name=None, num_classes=10):
    """Load an IDX image file (and optional IDX label file) into a Dataset."""
    with open(images_path, "rb") as f:
        header = f.read(16)
        if len(header) < 16:
            raise FormatError(f"{images_path}: truncated IDX header")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_MAGIC_IMAGES:
            raise FormatError(
                f"{images_path}: bad magic 0x{magic:08x}, expected 0x{IDX_MAGIC_IMAGES:08x}")
        raw = f.read()
    if len(raw) != count * rows * cols:
        raise FormatError(
            f"{images_path}: expected {count * rows * cols} pixel bytes, found {len(raw)}")
    images = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols, 1)
    images = images.astype(np.float64) / 255.0

    labels = None
    if labels_path is not None:
        with open(labels_path, "rb") as f:
            header = f.read(8)
            if len(header) < 8:
                raise FormatError(f"{labels_path}: truncated IDX header")
            magic, lcount = struct.unpack(">II", header)
            if magic != IDX_MAGIC_LABELS:
                raise FormatError(
                    f"{labels_path}: bad magic 0x{magic:08x}, expected 0x{IDX_MAGIC_LABELS:08x}")
            raw = f.read()
        if len(raw) != lcount:
            raise FormatError(f"{labels_path}: expected {lcount} label bytes, found {len(raw)}")
        if lcount != count:
            raise FormatError(
                f"{labels_path}: label count {lcount} does not match image count {count}")
        labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)

    return Dataset(images=images, labels=labels,
                   name=name or str(images_path), num_classes=num_classes)


def sample_unlabeled(ds, n, seed):
    """n distinct images chosen uniformly without replacement; labels dropped."""
    if n > len(ds):
        raise InputError(f"cannot sample {n} images from a dataset of {len(ds)}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(ds), size=n, replace=False)
    return Dataset(images=ds.images[idx], labels=None,
                   name=f"{ds.name}[sample{n}]", num_classes=ds.num_classes)


def synth_blobs(num_classes, per_class, image_side, seed, noise=0.05):
    """Synthetic task: each class is a Gaussian intensity blob at a fixed
    class-dependent center; low noise keeps the classes linearly separable."""
    if num_classes < 2 or per_class < 0 or image_side < 2:
        raise InputError("synth_blobs parameters out of range")
    rng = np.random.default_rng(seed)
    # class centers on a circle inside the image
    angles = 2 * np.pi * np.arange(num_classes) / num_classes
    r = image_side * 0.28
    cy = image_side / 2 - 0.5 + r * np.sin(angles)
    cx = image_side / 2 - 0.5 + r * np.cos(angles)
    sigma = image_side * 0.18

    yy, xx = np.mgrid[0:image_side, 0:image_side]
    images, labels = [], []
    for k in range(num_classes):
        for _ in range(per_class):
            jitter_y = rng.normal(0, image_side * 0.03)
            jitter_x = rng.normal(0, image_side * 0.03)
            img = np.exp(-((yy - cy[k] - jitter_y) ** 2 + (xx - cx[k] - jitter_x) ** 2)
                         / (2 * sigma ** 2))
            img = img + rng.normal(0, noise, size=img.shape)
            images.append(np.clip(img, 0.0, 1.0))
            labels.append(k)
    if not images:
        images = np.zeros((0, image_side, image_side, 1))
        labels = np.zeros(0, dtype=np.int64)
    else:
        images = np.stack(images)[:, :, :, None]
        labels = np.array(labels, dtype=np.int64)
    return Dataset(images=images, labels=labels,
                   name=f"blobs{num_classes}x{per_class}", num_classes=num_classes)


def dump_pgm(image, path):
    """Write one [0,1] image as binary PGM (1 channel) or PPM (3 channels)."""
    image = np.asarray(image)
    if image.min() < 0 or image.max() > 1:
        raise InputError("image values must lie in [0, 1]")
    pixels = np.round(image * 255).astype(np.uint8)
    h, w, c = pixels.shape
    if c == 1:
        header = f"P5\n{w} {h}\n255\n".encode()
    elif c == 3:
        header = f"P6\n{w} {h}\n255\n".encode()
    else:
        raise InputError(f"cannot dump an image with {c} channels")
    with open(path, "wb") as f:
        f.write(header + pixels.tobytes())


def load_pgm(path):
    """Round-trip reader for dump_pgm output (used for self-checks)."""
    with open(path, "rb") as f:
        data = f.read()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] not in (b"P5", b"P6"):
        raise FormatError(f"{path}: not a binary PGM/PPM file")
    w, h = (int(v) for v in parts[1].split())
    c = 1 if parts[0] == b"P5" else 3
    pixels = np.frombuffer(parts[3], dtype=np.uint8, count=h * w * c)
    return pixels.reshape(h, w, c).astype(np.float64) / 255.0


def dump_grid(images, annotations, path):
    """Write images as numbered PGM/PPM files next to a text sidecar.

    ``path`` is a prefix: image k goes to ``{path}_{k:03d}.pgm`` (or .ppm)
    and ``{path}.txt`` gets one annotation line per image.
    """
    ext = "pgm" if images[0].shape[-1] == 1 else "ppm"
    lines = []
    for k, (img, note) in enumerate(zip(images, annotations)):
        fname = f"{path}_{k:03d}.{ext}"
        dump_pgm(img, fname)
        lines.append(f"{fname}\t{note}")
    with open(f"{path}.txt", "w") as f:
        f.write("\n".join(lines) + ("\n" if lines else ""))
