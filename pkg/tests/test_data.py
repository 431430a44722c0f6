import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fixupbench.data import (
    CIFAR_RECORD, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, Dataset, load_cifar10_bin, load_idx, read_idx,
    synth_gaussian, write_idx,
)
from fixupbench.errors import ConfigError, FormatError


def test_idx_header_example(tmp_path):
    path = tmp_path / "img.idx"
    path.write_bytes(bytes.fromhex("00000803 00000002 00000003 00000004".replace(" ", "")) + bytes(range(24)))
    a = read_idx(path, IDX_IMAGES_MAGIC)
    assert a.shape == (2, 3, 4) and a.dtype == np.uint8
    assert a[1, 2, 3] == 23


def test_idx_labels(tmp_path):
    path = tmp_path / "lab.idx"
    path.write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, 3) + bytes([7, 0, 9]))
    labels = read_idx(path, IDX_LABELS_MAGIC)
    assert labels.tolist() == [7, 0, 9]
    assert path.read_bytes()[8] == 7


@settings(max_examples=20, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=1, max_size=3), st.integers(0, 2**31))
def test_idx_round_trip(tmp_path_factory, shape, seed):
    a = np.random.default_rng(seed).integers(0, 256, shape).astype(np.uint8)
    path = tmp_path_factory.mktemp("idx") / "a.idx"
    write_idx(path, a)
    b = read_idx(path, 0x800 | a.ndim)
    assert b.shape == a.shape and b.tobytes() == a.tobytes()


def test_idx_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "x.idx"
    write_idx(path, np.zeros((2, 2, 2), np.uint8))
    with pytest.raises(FormatError, match="magic"):
        read_idx(path, IDX_LABELS_MAGIC)
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(FormatError, match="payload"):
        read_idx(path, IDX_IMAGES_MAGIC)
    path.write_bytes(struct.pack(">I", IDX_IMAGES_MAGIC) + b"\0\0")
    with pytest.raises(FormatError, match="header"):
        read_idx(path, IDX_IMAGES_MAGIC)


def test_load_idx_standardizes(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, (6, 4, 4)).astype(np.uint8)
    write_idx(tmp_path / "i", images)
    write_idx(tmp_path / "l", np.arange(6) % 3)
    ds = load_idx(tmp_path / "i", tmp_path / "l", num_classes=3)
    assert ds.inputs.shape == (6, 1, 4, 4)
    assert abs(ds.inputs.mean()) < 1e-12 and abs(ds.inputs.std() - 1) < 1e-12
    raw = ds.inputs * ds.std + ds.mean
    np.testing.assert_allclose(raw, images[:, None] / 255.0, atol=1e-12)


def test_cifar_record(tmp_path):
    plane = np.arange(3 * 32 * 32) % 256
    record = bytes([3]) + plane.astype(np.uint8).tobytes()
    assert len(record) == CIFAR_RECORD == 3073
    other = bytes([9]) + bytes(3 * 32 * 32)
    path = tmp_path / "batch.bin"
    path.write_bytes(record + other)
    ds = load_cifar10_bin(path)
    assert ds.labels.tolist() == [3, 9]
    assert ds.inputs.shape == (2, 3, 32, 32)
    raw = ds.inputs * ds.std + ds.mean
    np.testing.assert_allclose(raw[0].ravel(), plane / 255.0, atol=1e-12)
    assert np.all(raw[1] == pytest.approx(0.0, abs=1e-12))
    # channel statistics are per plane
    assert ds.mean.shape == (3, 1, 1)


def test_cifar_bad_length(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(bytes(CIFAR_RECORD + 1))
    with pytest.raises(FormatError, match="multiple"):
        load_cifar10_bin(path)


def linear_probe_accuracy(splits):
    c = splits.num_classes
    add_bias = lambda x: np.hstack([x, np.ones((len(x), 1))])
    targets = np.eye(c)[splits.train.labels]
    w, *_ = np.linalg.lstsq(add_bias(splits.train.inputs), targets, rcond=None)
    pred = np.argmax(add_bias(splits.test.inputs) @ w, axis=1)
    return np.mean(pred == splits.test.labels), len(splits.test)


def test_synth_no_separation_is_chance():
    acc, n = linear_probe_accuracy(synth_gaussian(10, 16, 500, 0.0, 0))
    assert acc <= 0.1 + 3 * math.sqrt(0.1 * 0.9 / n)


def test_synth_wide_separation_is_easy():
    acc, _ = linear_probe_accuracy(synth_gaussian(2, 2, 500, 10.0, 0))
    assert acc >= 0.99


def test_synth_deterministic_and_split():
    a, b = synth_gaussian(3, 5, 40, 2.0, 7), synth_gaussian(3, 5, 40, 2.0, 7)
    assert a.train.inputs.tobytes() == b.train.inputs.tobytes()
    assert a.test.labels.tobytes() == b.test.labels.tobytes()
    assert len(a.train) == 96 and len(a.test) == 24
    assert synth_gaussian(3, 5, 40, 2.0, 8).train.inputs.tobytes() != a.train.inputs.tobytes()


def test_synth_uses_training_statistics():
    s = synth_gaussian(4, 6, 100, 1.0, 0)
    np.testing.assert_allclose(s.train.inputs.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(s.train.inputs.std(axis=0), 1, atol=1e-12)
    assert s.test.mean is s.train.mean
    assert np.abs(s.test.inputs.mean(axis=0)).max() > 1e-6


def test_synth_rejects_bad_config():
    with pytest.raises(ConfigError):
        synth_gaussian(1, 4, 10, 1.0, 0)
    with pytest.raises(ConfigError):
        synth_gaussian(2, 4, 10, -1.0, 0)


def test_dataset_label_checks():
    with pytest.raises(FormatError):
        Dataset(np.zeros((2, 1)), np.array([0, 3]), 3, 0.0, 1.0)
    with pytest.raises(FormatError):
        Dataset(np.zeros((2, 1)), np.array([0]), 3, 0.0, 1.0)
