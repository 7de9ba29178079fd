"""Tests for proposals, window scoring, NMS and detection files."""
import numpy as np
import pytest

from app.core.exceptions import InputError, ParameterError, ParseError
from app.models.detection import Detection
from app.services.detection import (
    DetectionRun,
    detect_frames,
    gates_path,
    generate_proposals,
    nms,
    read_detections,
    score_windows,
    write_detections,
)
from app.services.experts import build_expert
from app.services.fusion import FusedModel, FusionScheme, build_gate
from conftest import make_box, make_frame


@pytest.fixture
def mode_model(rng):
    experts = [build_expert("rgb", (3, 16, 16), 2, rng), build_expert("depth", (3, 16, 16), 2, rng)]
    gate = build_gate(sum(e.feature_length for e in experts), 2, rng, zero_output=False)
    return FusedModel(experts=experts, scheme=FusionScheme.MODE, gate=gate)


def test_full_frame_proposal():
    proposals = generate_proposals((96, 96), [96], aspect=1.0, stride_fraction=1.0)
    assert [p.as_tuple() for p in proposals] == [(0, 0, 96, 96)]


def test_proposal_count_and_stride():
    proposals = generate_proposals((96, 96), [32], aspect=0.5, stride_fraction=0.25)
    assert len(proposals) == 99
    assert proposals[1].x_min - proposals[0].x_min == 8
    assert all(p.inside(96, 96) for p in proposals)


def test_proposal_counts_add_over_scales():
    both = generate_proposals((96, 96), [32, 96], aspect=0.5, stride_fraction=0.25)
    assert len(both) == 99 + len(generate_proposals((96, 96), [96], aspect=0.5, stride_fraction=0.25))


def test_oversized_scale_is_skipped():
    assert generate_proposals((64, 64), [128], aspect=0.5, stride_fraction=0.25) == []
    with pytest.raises(ParameterError):
        generate_proposals((64, 64), [], aspect=0.5, stride_fraction=0.25)


def test_nms_examples():
    a = make_box(0, 0, 10, 10)
    duplicates = [Detection(box=a, score=0.8), Detection(box=a, score=0.9)]
    assert [d.score for d in nms(duplicates, 0.5)] == [0.9]

    disjoint = [Detection(box=a, score=0.9), Detection(box=make_box(20, 20, 30, 30), score=0.8)]
    assert len(nms(disjoint, 0.5)) == 2

    overlapping = [Detection(box=a, score=0.9), Detection(box=make_box(5, 0, 15, 10), score=0.8)]
    assert [d.score for d in nms(overlapping, 0.3)] == [0.9]
    assert len(nms(overlapping, 0.4)) == 2

    with pytest.raises(ParameterError):
        nms(overlapping, 1.0)


def test_score_windows_is_deterministic_and_records_gate(mode_model):
    frame = make_frame(seed=4)
    proposals = generate_proposals(frame.size, [32], aspect=0.5, stride_fraction=0.5)
    first = score_windows(mode_model, frame, proposals, window=16)
    second = score_windows(mode_model, frame, proposals, window=16)
    assert first == second
    assert len(first) == 12
    for d in first:
        assert 0.0 <= d.score <= 1.0
        assert abs(sum(d.gate) - 1.0) < 1e-9


def test_score_windows_requires_model_modalities(rng, mode_model):
    frame = make_frame()
    frame.depth = None
    with pytest.raises(InputError):
        score_windows(mode_model, frame, [make_box(0, 0, 16, 32)], window=16)


def test_detect_frames_collects_gates(mode_model, small_sequence):
    frames = small_sequence[:3]
    run = detect_frames(mode_model, frames, scales=[32], aspect=0.5, stride_fraction=0.5,
                        nms_iou=0.3, window=16, threads=2)
    assert sorted(run.detections) == [0, 1, 2]
    assert run.has_gate
    assert run.regimes[0] == "dark-indoor"
    assert all(abs(sum(g) - 1.0) < 1e-9 for g in run.mean_gates.values())

    single = detect_frames(mode_model, frames, scales=[32], aspect=0.5, stride_fraction=0.5,
                           nms_iou=0.3, window=16, threads=1)
    assert single.detections == run.detections


def test_average_model_writes_no_gate_columns(tmp_path, rng):
    experts = [build_expert("rgb", (3, 16, 16), 2, rng), build_expert("depth", (3, 16, 16), 2, rng)]
    model = FusedModel(experts=experts, scheme=FusionScheme.AVERAGE)
    run = detect_frames(model, [make_frame()], scales=[32], aspect=0.5, stride_fraction=0.5,
                        nms_iou=0.3, window=16)
    path = tmp_path / "avg.tsv"
    write_detections(path, run)
    lines = path.read_text().splitlines()
    assert lines[0] == "# scheme=average experts=rgb,depth"
    assert lines[1] == "frame_index\tx_min\ty_min\tx_max\ty_max\tscore"
    assert not gates_path(path).exists()


def test_detection_file_with_gates(tmp_path):
    run = DetectionRun(scheme="mode", experts=["rgb", "depth"])
    run.detections = {
        0: [Detection(box=make_box(0, 0, 8, 16), score=0.75, gate=[0.25, 0.75], frame_index=0)],
        2: [Detection(box=make_box(4, 4, 12, 20), score=0.5, gate=[0.5, 0.5], frame_index=2)],
    }
    run.mean_gates = {0: [0.3, 0.7], 2: [0.6, 0.4]}
    run.regimes = {0: "dark-indoor", 2: "bright-outdoor"}
    path = tmp_path / "dets.tsv"
    write_detections(path, run)

    assert path.read_text().splitlines()[1].endswith("score\tg_rgb\tg_depth")
    loaded = read_detections(path)
    assert loaded.scheme == "mode" and loaded.experts == ["rgb", "depth"]
    assert loaded.detections == run.detections
    assert loaded.mean_gates == run.mean_gates
    assert loaded.regimes == run.regimes


def test_read_detections_reports_offset(tmp_path):
    path = tmp_path / "bad.tsv"
    header = "# scheme=average experts=rgb\nframe_index\tx_min\ty_min\tx_max\ty_max\tscore\n"
    path.write_text(header + "0\t1\t2\t3\n")
    with pytest.raises(ParseError) as info:
        read_detections(path)
    assert info.value.offset == len(header.encode())


def test_read_detections_rejects_missing_header(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("frame_index\tx_min\ty_min\tx_max\ty_max\tscore\n0\t0\t0\t4\t4\t0.5\n")
    with pytest.raises(ParseError) as info:
        read_detections(path)
    assert info.value.offset == 0


def test_read_detections_rejects_bad_score(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("# scheme=single experts=rgb\nframe_index\tx_min\ty_min\tx_max\ty_max\tscore\n"
                    "0\t0\t0\t4\t4\t1.5\n")
    with pytest.raises(ParseError):
        read_detections(path)


def test_empty_detections_file_is_an_empty_run(tmp_path):
    path = tmp_path / "empty.tsv"
    path.write_bytes(b"")
    run = read_detections(path)
    assert run.detections == {}
    assert run.scheme == ""
    assert not run.has_gate


def test_invalid_utf8_reports_byte_offset(tmp_path):
    path = tmp_path / "bad.tsv"
    head = b"# scheme=average experts=rgb\nframe_index\tx_min\ty_min\tx_max\ty_max\tscore\n0\t0\t"
    path.write_bytes(head + b"\xff\xff\t4\t4\t0.5\n")
    with pytest.raises(ParseError, match="invalid UTF-8") as info:
        read_detections(path)
    assert info.value.offset == len(head)


def test_invalid_utf8_in_header_line(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_bytes(b"# scheme=\xffmode\nframe_index\tx_min\ty_min\tx_max\ty_max\tscore\n")
    with pytest.raises(ParseError) as info:
        read_detections(path)
    assert info.value.offset == len(b"# scheme=")


def test_read_detections_missing_file(tmp_path):
    with pytest.raises(InputError):
        read_detections(tmp_path / "absent.tsv")


def test_mean_gate_matches_scored_windows(mode_model):
    frame = make_frame(seed=9)
    proposals = generate_proposals(frame.size, [32], aspect=0.5, stride_fraction=0.5)
    scored = score_windows(mode_model, frame, proposals, window=16)
    run = detect_frames(mode_model, [frame], scales=[32], aspect=0.5, stride_fraction=0.5,
                        nms_iou=0.3, window=16)
    expected = np.mean([d.gate for d in scored], axis=0)
    assert np.allclose(run.mean_gates[frame.frame_index], expected)
