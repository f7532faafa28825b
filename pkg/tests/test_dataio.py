import hashlib
import json

import numpy as np
import pytest

from swinrecon.dataio import (
    HEADER,
    MAGIC,
    DatasetManifest,
    SliceFormatError,
    SliceRecord,
    SliceVersionError,
    build_dataset,
    in_memory_dataset,
    load_slice,
    phantom,
    save_slice,
    split_cases,
)


def test_phantom_deterministic():
    a, b = phantom(5, 64), phantom(5, 64)
    assert np.array_equal(a.image, b.image)
    assert a.image.dtype == np.float32


def test_phantom_seed0_regression():
    im = phantom(0, 64).image
    assert im.min() >= 0 and im.max() <= 1
    # frozen from a single generation run
    assert (im > 0.5).mean() == pytest.approx(0.46875, abs=0)
    assert float(im.min()) == pytest.approx(0.009179062, rel=1e-6)
    assert float(im.max()) == 1.0
    assert float(im.sum(dtype=np.float64)) == pytest.approx(1585.49866, rel=1e-6)
    assert (im > 0.5).mean() >= 0.10


def test_phantom_seeds_differ():
    for s in range(10):
        a, b = phantom(s, 64).image, phantom(s + 100, 64).image
        assert np.mean(a != b) >= 0.01


@pytest.mark.parametrize("size", [32, 64, 96])
def test_phantom_range(size):
    for s in range(3):
        im = phantom(s, size).image
        assert im.shape == (size, size)
        assert np.isfinite(im).all() and im.min() >= 0 and im.max() <= 1


def test_slice_record_validation():
    with pytest.raises(ValueError):
        SliceRecord("x", np.full((8, 8), 1.5, dtype=np.float32), 0, 0)
    with pytest.raises(ValueError):
        SliceRecord("x", np.full((8, 8), np.nan, dtype=np.float32), 0, 0)


def test_split_67_cases():
    s = split_cases(range(67), seed=3)
    assert [len(s[k]) for k in ("train", "val", "test")] == [40, 7, 20]


def test_split_10_cases_partition():
    s = split_cases(range(10), seed=0)
    assert [len(s[k]) for k in ("train", "val", "test")] == [6, 1, 3]
    assert sorted(s["train"] + s["val"] + s["test"]) == list(range(10))
    assert split_cases(range(10), seed=0) == s
    assert split_cases(range(10), seed=1) != s


def test_split_rejects_duplicates():
    with pytest.raises(ValueError):
        split_cases([1, 1, 2])


def test_slice_roundtrip(tmp_path):
    rec = phantom(3, 32, case_id=4, slice_id="c4s0")
    save_slice(tmp_path / "a.slice", rec)
    back = load_slice(tmp_path / "a.slice")
    assert np.array_equal(back.image, rec.image)
    assert (back.id, back.seed, back.case_id) == ("c4s0", 3, 4)
    raw = (tmp_path / "a.slice").read_bytes()
    assert raw[:8] == MAGIC and HEADER.size == 16


def test_slice_corrupt_header(tmp_path):
    rec = phantom(3, 16)
    path = tmp_path / "a.slice"
    save_slice(path, rec)
    raw = bytearray(path.read_bytes())
    raw[0:8] = b"NOTSLICE"
    path.write_bytes(bytes(raw))
    with pytest.raises(SliceFormatError, match="magic"):
        load_slice(path)
    path.write_bytes(b"SWR")
    with pytest.raises(SliceFormatError, match="truncated"):
        load_slice(path)


def test_slice_truncated_data(tmp_path):
    path = tmp_path / "a.slice"
    save_slice(path, phantom(1, 16))
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(SliceFormatError, match="data bytes"):
        load_slice(path)


def test_slice_version_mismatch(tmp_path):
    path = tmp_path / "a.slice"
    save_slice(path, phantom(1, 16))
    raw = path.read_bytes()
    _, _, n = HEADER.unpack_from(raw)
    path.write_bytes(HEADER.pack(MAGIC, 99, n) + raw[HEADER.size :])
    with pytest.raises(SliceVersionError, match="version 99"):
        load_slice(path)


def _digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_build_dataset_reproducible(tmp_path):
    m1 = build_dataset(tmp_path / "a", n_cases=10, slices_per_case=2, size=16, seed=4)
    build_dataset(tmp_path / "b", n_cases=10, slices_per_case=2, size=16, seed=4)
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
    assert len(m1.records) == 20

    loaded = DatasetManifest.load_from(tmp_path / "a")
    assert loaded.splits == m1.splits
    test_cases = {r.case_id for r in loaded.load("test")}
    assert test_cases == set(m1.splits["test"])
    assert not test_cases & set(m1.splits["train"])
    assert json.loads((tmp_path / "a" / "manifest.json").read_text())["ratio"] == [6, 1, 3]


def test_in_memory_matches_disk(tmp_path):
    m = build_dataset(tmp_path, n_cases=4, slices_per_case=2, size=16, seed=1)
    splits, records = in_memory_dataset(n_cases=4, slices_per_case=2, size=16, seed=1)
    assert splits == m.splits
    disk = {r.id: r for s in ("train", "val", "test") for r in m.load(s)}
    for r in records:
        assert np.array_equal(disk[r.id].image, r.image)
