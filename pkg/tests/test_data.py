import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arowlab import data
from arowlab.data import Dataset, IdxFormatError


def test_moons_without_noise_lie_on_half_circles():
    raw = data.moons_raw(4, 0.0)
    upper, lower = raw[:2], raw[2:]
    np.testing.assert_allclose(np.hypot(upper[:, 0], upper[:, 1]), 1.0, atol=1e-15)
    np.testing.assert_allclose(np.hypot(lower[:, 0] - 1.0, lower[:, 1] - 0.5), 1.0, atol=1e-15)
    assert np.all(upper[:, 1] >= 0) and np.all(lower[:, 1] <= 0.5)
    assert data.moons_raw(4, 0.0, seed=1).tobytes() == raw.tobytes()


def test_two_moons_shape_balance_and_box():
    ds = data.two_moons(301, 0.15, seed=3)
    assert ds.inputs.shape == (301, 2) and ds.num_classes == 2
    assert np.bincount(ds.labels).tolist() == [151, 150]
    assert ds.inputs.min() == 0.0 and ds.inputs.max() == 1.0


def test_generators_are_seeded():
    a, b = data.two_moons(200, 0.1, seed=5), data.two_moons(200, 0.1, seed=5)
    assert a.digest() == b.digest()
    assert a.digest() != data.two_moons(200, 0.1, seed=6).digest()
    c, d = data.gaussian_blobs(3, 2, 10, seed=1), data.gaussian_blobs(3, 2, 10, seed=1)
    assert c.digest() == d.digest()


def test_blobs_without_noise_collapse_to_centers():
    ds = data.gaussian_blobs(4, 3, 6, center_spread=2.0, noise_sd=0.0, seed=2)
    for c in range(4):
        rows = ds.inputs[ds.labels == c]
        assert np.all(rows == rows[0])
    assert len({tuple(ds.inputs[ds.labels == c][0]) for c in range(4)}) == 4


def test_dataset_invariants():
    with pytest.raises(ValueError):
        Dataset(np.zeros((0, 2)), np.zeros(0, dtype=int), 2)
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), np.array([0, 2]), 2)
    with pytest.raises(ValueError):
        Dataset(np.array([[np.nan, 0.0]]), np.array([0]), 2)


def test_batches_examples():
    ds = data.two_moons(10, seed=0)
    assert [len(b) for b in data.batches(ds, 3, seed=1)] == [3, 3, 3, 1]
    (only,) = data.batches(ds, 10, seed=1)
    assert sorted(only.tolist()) == list(range(10))
    a = [b.tolist() for b in data.batches(ds, 4, seed=7)]
    assert a == [b.tolist() for b in data.batches(ds, 4, seed=7)]
    with pytest.raises(ValueError):
        data.batches(ds, 11)


def test_split_is_a_seeded_partition():
    ds = data.two_moons(101, 0.1, seed=0)
    parts = data.split(ds, [0.6, 0.2, 0.2], seed=4)
    assert sum(len(p) for p in parts) == 101
    rows = np.vstack([p.inputs for p in parts])
    assert sorted(map(tuple, rows)) == sorted(map(tuple, ds.inputs))
    again = data.split(ds, [0.6, 0.2, 0.2], seed=4)
    assert all(p.digest() == q.digest() for p, q in zip(parts, again))
    assert data.split(ds, [1.0, 0.0], seed=0)[1] is None
    with pytest.raises(ValueError):
        data.split(ds, [0.5, 0.4])


# ---------------------------------------------------------------- IDX

def _write(tmp_path, images, labels):
    ip, lp = tmp_path / "img.idx", tmp_path / "lbl.idx"
    data.write_idx(ip, lp, images, labels)
    return ip, lp


def test_idx_round_trip(tmp_path):
    images = np.array([[[0, 255], [17, 128]], [[1, 2], [3, 4]]], dtype=np.uint8)
    ip, lp = _write(tmp_path, images, [3, 1])
    ds = data.load_idx(ip, lp)
    np.testing.assert_array_equal(ds.inputs, images.reshape(2, 4) / 255.0)
    assert ds.inputs[0, 1] == 1.0
    assert ds.labels.tolist() == [3, 1] and ds.num_classes == 4
    raw = ip.read_bytes()
    assert struct.unpack(">IIII", raw[:16]) == (0x803, 2, 2, 2)
    assert raw[16:] == images.tobytes()


def test_idx_limit(tmp_path):
    images = np.arange(3 * 4, dtype=np.uint8).reshape(3, 2, 2)
    ip, lp = _write(tmp_path, images, [0, 1, 0])
    assert len(data.load_idx(ip, lp, limit=2)) == 2
    with pytest.raises(ValueError):
        data.load_idx(ip, lp, limit=0)


def test_idx_errors_name_offsets(tmp_path):
    images = np.zeros((2, 2, 2), dtype=np.uint8)
    ip, lp = _write(tmp_path, images, [0, 1])
    bad = tmp_path / "bad.idx"
    bad.write_bytes(struct.pack(">I", 0x801) + ip.read_bytes()[4:])
    with pytest.raises(IdxFormatError, match="offset 0"):
        data.load_idx(bad, lp)
    bad.write_bytes(ip.read_bytes()[:-3])
    with pytest.raises(IdxFormatError, match="offset 21"):
        data.load_idx(bad, lp)
    bad.write_bytes(ip.read_bytes()[:10])
    with pytest.raises(IdxFormatError, match="truncated header"):
        data.load_idx(bad, lp)
    lp3 = tmp_path / "l3.idx"
    lp3.write_bytes(struct.pack(">II", 0x801, 3) + bytes([0, 1, 1]))
    with pytest.raises(IdxFormatError, match="does not match"):
        data.load_idx(ip, lp3)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 300), st.floats(0.0, 0.5), st.integers(0, 2 ** 31))
def test_two_moons_properties(n, noise, seed):
    ds = data.two_moons(n, noise, seed)
    assert len(ds) == n
    assert np.all((ds.inputs >= 0) & (ds.inputs <= 1))
    assert abs(int(np.sum(ds.labels == 0)) - int(np.sum(ds.labels == 1))) <= 1
