import struct

import numpy as np
import pytest

from mixdistill import data
from mixdistill.errors import FormatError, InputError


def write_idx_images(path, pixels):
    """pixels: uint8 array (N, H, W)."""
    n, h, w = pixels.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", data.IDX_MAGIC_IMAGES, n, h, w))
        f.write(pixels.tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", data.IDX_MAGIC_LABELS, len(labels)))
        f.write(bytes(int(v) for v in labels))


def test_load_idx_fixture_bytes(tmp_path):
    # 3-image fixture authored byte by byte
    pixels = np.array([
        [[0, 51], [102, 153]],
        [[255, 0], [204, 10]],
        [[1, 2], [3, 4]],
    ], dtype=np.uint8)
    labels = [2, 0, 1]
    write_idx_images(tmp_path / "imgs", pixels)
    write_idx_labels(tmp_path / "labs", labels)

    ds = data.load_idx(tmp_path / "imgs", tmp_path / "labs", num_classes=3)
    assert len(ds) == 3
    assert ds.image_shape == (2, 2, 1)
    np.testing.assert_allclose(ds.images[:, :, :, 0], pixels / 255.0)
    np.testing.assert_array_equal(ds.labels, labels)


def test_load_idx_rejects_wrong_magic(tmp_path):
    # an images file offered as labels must be refused
    pixels = np.zeros((2, 2, 2), dtype=np.uint8)
    write_idx_images(tmp_path / "imgs", pixels)
    write_idx_images(tmp_path / "fake_labels", pixels)
    with pytest.raises(FormatError, match="magic"):
        data.load_idx(tmp_path / "imgs", tmp_path / "fake_labels")


def test_load_idx_rejects_truncation(tmp_path):
    write_idx_images(tmp_path / "imgs", np.zeros((2, 3, 3), dtype=np.uint8))
    raw = (tmp_path / "imgs").read_bytes()
    (tmp_path / "short").write_bytes(raw[:-4])
    with pytest.raises(FormatError, match="pixel bytes"):
        data.load_idx(tmp_path / "short")


def test_load_idx_rejects_count_mismatch(tmp_path):
    write_idx_images(tmp_path / "imgs", np.zeros((3, 2, 2), dtype=np.uint8))
    write_idx_labels(tmp_path / "labs", [0, 1])
    with pytest.raises(FormatError, match="count"):
        data.load_idx(tmp_path / "imgs", tmp_path / "labs")


def test_loaded_values_in_unit_interval(tmp_path):
    rng = np.random.default_rng(0)
    write_idx_images(tmp_path / "imgs", rng.integers(0, 256, size=(5, 4, 4), dtype=np.uint8))
    ds = data.load_idx(tmp_path / "imgs")
    assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0


def test_sample_unlabeled_full_size_is_permutation():
    ds = data.synth_blobs(3, 10, 6, seed=0)
    sub = data.sample_unlabeled(ds, len(ds), seed=1)
    assert sub.labels is None
    # same multiset of images
    key = lambda imgs: np.sort(imgs.reshape(len(imgs), -1).sum(axis=1))
    np.testing.assert_allclose(key(sub.images), key(ds.images))


def test_sample_unlabeled_deterministic():
    ds = data.synth_blobs(3, 20, 6, seed=0)
    a = data.sample_unlabeled(ds, 10, seed=4)
    b = data.sample_unlabeled(ds, 10, seed=4)
    np.testing.assert_array_equal(a.images, b.images)


def test_sample_unlabeled_rejects_oversample():
    ds = data.synth_blobs(2, 3, 6, seed=0)
    with pytest.raises(InputError):
        data.sample_unlabeled(ds, 100, seed=0)


def test_synth_blobs_empty():
    ds = data.synth_blobs(3, 0, 6, seed=0)
    assert len(ds) == 0


def test_synth_blobs_deterministic():
    a = data.synth_blobs(4, 5, 8, seed=3)
    b = data.synth_blobs(4, 5, 8, seed=3)
    np.testing.assert_array_equal(a.images, b.images)
    np.testing.assert_array_equal(a.labels, b.labels)


def test_synth_blobs_nearest_centroid_oracle():
    ds = data.synth_blobs(3, 100, 8, seed=0, noise=0.02)
    flat = ds.images.reshape(len(ds), -1)
    centroids = np.stack([flat[ds.labels == k].mean(axis=0) for k in range(3)])
    dists = ((flat[:, None, :] - centroids[None]) ** 2).sum(axis=2)
    pred = dists.argmin(axis=1)
    assert np.mean(pred == ds.labels) >= 0.99


def test_dump_pgm_extremes(tmp_path):
    data.dump_pgm(np.zeros((3, 4, 1)), tmp_path / "zero.pgm")
    raw = (tmp_path / "zero.pgm").read_bytes()
    assert raw.startswith(b"P5\n4 3\n255\n")
    assert raw.endswith(b"\x00" * 12)

    data.dump_pgm(np.ones((2, 2, 1)), tmp_path / "one.pgm")
    assert (tmp_path / "one.pgm").read_bytes().endswith(b"\xff" * 4)


def test_dump_pgm_roundtrip(tmp_path):
    rng = np.random.default_rng(7)
    img = rng.uniform(size=(5, 6, 1))
    data.dump_pgm(img, tmp_path / "r.pgm")
    back = data.load_pgm(tmp_path / "r.pgm")
    assert np.abs(back - img).max() <= 1 / 255 + 1e-12


def test_dump_ppm_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    img = rng.uniform(size=(4, 4, 3))
    data.dump_pgm(img, tmp_path / "r.ppm")
    back = data.load_pgm(tmp_path / "r.ppm")
    assert back.shape == (4, 4, 3)
    assert np.abs(back - img).max() <= 1 / 255 + 1e-12


def test_dump_grid_sidecar(tmp_path):
    imgs = [np.zeros((2, 2, 1)), np.ones((2, 2, 1))]
    data.dump_grid(imgs, ["first", "second"], str(tmp_path / "grid"))
    lines = (tmp_path / "grid.txt").read_text().strip().split("\n")
    assert len(lines) == 2
    assert lines[0].endswith("first")
    assert (tmp_path / "grid_000.pgm").exists()
