"""Tests for dataset directories and the positional split."""
import numpy as np
import pytest

from app.core.exceptions import DatasetValidationError, InputError, ParseError
from app.core.validators import DatasetValidator
from app.models.training import Split
from app.services.dataset_io import (
    ANNOTATIONS_NAME,
    frame_path,
    iter_dataset,
    read_dataset,
    read_meta,
    split_frame_indices,
    split_indices,
    write_dataset,
)


@pytest.fixture
def dataset_dir(tmp_path, small_sequence):
    directory = tmp_path / "data"
    write_dataset(small_sequence, directory, meta={"seed": 3})
    return directory


def test_round_trip_is_lossless(dataset_dir, small_sequence):
    loaded = read_dataset(dataset_dir)
    assert len(loaded) == len(small_sequence)
    for a, b in zip(small_sequence, loaded):
        assert np.array_equal(a.rgb, b.rgb)
        assert np.array_equal(a.depth, b.depth)
        assert np.array_equal(a.motion, b.motion)
        assert a.annotations == b.annotations
        assert a.regime == b.regime
        assert a.frame_index == b.frame_index


def test_meta_records_size_and_extras(dataset_dir):
    meta = read_meta(dataset_dir)
    assert meta["frames"] == "10"
    assert meta["size"] == "64x64"
    assert meta["seed"] == "3"


def test_iter_dataset_subset(dataset_dir):
    frames = list(iter_dataset(dataset_dir, [7, 2]))
    assert [f.frame_index for f in frames] == [7, 2]


def test_absent_frame_is_rejected_before_reading(dataset_dir):
    frames = iter_dataset(dataset_dir, [0, 42])
    with pytest.raises(InputError):
        next(frames)


def test_split_is_positional():
    splits = split_indices(10)
    assert splits[Split.TRAIN] == list(range(6))
    assert splits[Split.GATE_VAL] == [6, 7]
    assert splits[Split.TEST] == [8, 9]
    big = split_indices(2000)
    assert [len(big[s]) for s in (Split.TRAIN, Split.GATE_VAL, Split.TEST)] == [1200, 400, 400]


@pytest.mark.parametrize("count", [0, 1, 3, 7, 10, 101, 2000])
def test_split_parts_are_disjoint_and_cover_all(count):
    splits = split_indices(count)
    parts = [splits[s] for s in (Split.TRAIN, Split.GATE_VAL, Split.TEST)]
    assert sorted(i for part in parts for i in part) == splits[Split.ALL]


def test_overlapping_parts_are_rejected():
    with pytest.raises(DatasetValidationError, match="3"):
        DatasetValidator.validate_disjoint([0, 1, 2, 3], [3, 4], [5])
    DatasetValidator.validate_disjoint([0, 1], [2], [3])


def test_split_frame_indices(dataset_dir):
    assert split_frame_indices(dataset_dir, "test") == [8, 9]
    assert split_frame_indices(dataset_dir, Split.ALL) == list(range(10))


def test_bad_annotation_row_reports_offset(dataset_dir):
    path = dataset_dir / ANNOTATIONS_NAME
    lines = path.read_text().splitlines(keepends=True)
    lines[2] = "1\t0\tabc\t0\t5\t5\t0\n"
    path.write_text("".join(lines))
    with pytest.raises(ParseError) as info:
        read_dataset(dataset_dir)
    assert info.value.offset == len("".join(lines[:2]).encode())


def test_invalid_utf8_annotation_reports_offset(dataset_dir):
    path = dataset_dir / ANNOTATIONS_NAME
    payload = path.read_bytes()
    first = payload.index(b"\n") + 1
    path.write_bytes(payload[:first] + b"\xff" + payload[first:])
    with pytest.raises(ParseError, match="invalid UTF-8") as info:
        read_dataset(dataset_dir)
    assert info.value.offset == first


def test_box_outside_image(dataset_dir):
    path = dataset_dir / ANNOTATIONS_NAME
    with path.open("a") as handle:
        handle.write("0\t9\t50.0\t50.0\t80.0\t90.0\t0\n")
    with pytest.raises(DatasetValidationError):
        read_dataset(dataset_dir)


def test_corrupted_tensor_file(dataset_dir):
    frame_path(dataset_dir, 3, "depth").write_bytes(b"garbage!")
    with pytest.raises(ParseError, match="000003.depth.mdtf"):
        read_dataset(dataset_dir)


def test_not_a_dataset(tmp_path):
    with pytest.raises(InputError):
        read_dataset(tmp_path)
