"""Tests for the comparison report and gate timeline."""
import numpy as np
import pytest

from app.core.exceptions import InputError
from app.models.detection import MatchLabel, MetricsReport
from app.services.evaluation import curve_to_tsv, pr_curve
from app.services.reporting import (
    GATES_NAME,
    METRICS_NAME,
    PR_CURVE_NAME,
    gate_by_regime,
    load_evaluation,
    timeline_source,
    write_report,
)


def make_eval_dir(root, name, scheme, experts, ap, gates=None):
    directory = root / name
    directory.mkdir()
    report = MetricsReport(ap=ap, eer=0.5, recall_at_eer=0.5, iou_threshold=0.6, n_frames=4,
                           n_annotations=8, scheme=scheme, experts=experts, split="test")
    (directory / METRICS_NAME).write_text(report.to_text())
    curve = pr_curve([(0.9, MatchLabel.TRUE_POSITIVE), (0.4, MatchLabel.FALSE_POSITIVE)], total_positives=2)
    (directory / PR_CURVE_NAME).write_text(curve_to_tsv(curve))
    if gates:
        lines = ["frame_index\tregime\tg_rgb\tg_depth"]
        lines += [f"{i}\t{regime}\t{g[0]!r}\t{g[1]!r}" for i, (regime, g) in gates.items()]
        (directory / GATES_NAME).write_text("\n".join(lines) + "\n")
    return directory


GATES = {
    0: ("dark-indoor", [0.2, 0.8]),
    1: ("dark-indoor", [0.4, 0.6]),
    2: ("bright-outdoor", [0.9, 0.1]),
}


def test_load_evaluation(tmp_path):
    directory = make_eval_dir(tmp_path, "mode", "mode", "rgb,depth", 0.75, GATES)
    run = load_evaluation(directory)
    assert run.metrics.ap == 0.75
    assert run.label == "mode (rgb+depth)"
    assert run.recalls == [0.0, 0.5, 0.5]
    assert run.gate_names == ["g_rgb", "g_depth"]
    assert run.regimes[2] == "bright-outdoor"


def test_gate_by_regime_means(tmp_path):
    run = load_evaluation(make_eval_dir(tmp_path, "mode", "mode", "rgb,depth", 0.75, GATES))
    means = gate_by_regime(run)
    assert np.allclose(means["dark-indoor"], [0.3, 0.7])
    assert np.allclose(means["bright-outdoor"], [0.9, 0.1])


def test_timeline_prefers_mode(tmp_path):
    switch = load_evaluation(make_eval_dir(tmp_path, "switch", "switch", "rgb,depth", 0.6, GATES))
    mode = load_evaluation(make_eval_dir(tmp_path, "mode", "mode", "rgb,depth", 0.7, GATES))
    average = load_evaluation(make_eval_dir(tmp_path, "avg", "average", "rgb,depth", 0.5))
    assert timeline_source([switch, average, mode]) is mode
    assert timeline_source([average, switch]) is switch
    assert timeline_source([average]) is None


def test_write_report(tmp_path):
    dirs = [
        make_eval_dir(tmp_path, "rgb", "single", "rgb", 0.5),
        make_eval_dir(tmp_path, "mode", "mode", "rgb,depth", 0.75, GATES),
    ]
    out = tmp_path / "report"
    write_report(dirs, out)
    assert (out / "table.tsv").read_text().splitlines() == [
        "input\tmethod\tAP\trecall_at_eer\tEER",
        "rgb\tsingle\t0.5000\t0.5000\t0.5000",
        "rgb+depth\tmode\t0.7500\t0.5000\t0.5000",
    ]
    assert (out / "gate_timeline.tsv").read_text().splitlines()[1] == "0\t0.200000\t0.800000"
    by_regime = (out / "gate_by_regime.tsv").read_text().splitlines()
    assert by_regime[0] == "regime\tframes\tg_rgb\tg_depth"
    assert "dark-indoor\t2\t0.300000\t0.700000" in by_regime
    assert (out / "pr_curves.svg").read_text().lstrip().startswith("<?xml")
    assert (out / "gate_timeline.svg").exists()


def test_report_without_gates(tmp_path):
    out = tmp_path / "report"
    write_report([make_eval_dir(tmp_path, "avg", "average", "rgb,depth", 0.5)], out)
    assert (out / "table.tsv").exists()
    assert not (out / "gate_timeline.tsv").exists()


def test_report_errors(tmp_path):
    with pytest.raises(InputError):
        write_report([], tmp_path / "report")
    (tmp_path / "empty").mkdir()
    with pytest.raises(InputError):
        write_report([tmp_path / "empty"], tmp_path / "report")
