"""Tests for the gating network and fusion schemes."""
import numpy as np
import pytest

from app.core.exceptions import ConfigurationError, DimensionError, InputError
from app.nn import Tensor, softmax
from app.services.experts import build_expert, extract_features
from app.services.fusion import (
    FusedModel,
    FusionScheme,
    average_fusion,
    build_gate,
    build_late_head,
    concat_features,
    fuse_features,
    fused_forward,
    gate_forward,
    mode_combine,
    switch_fusion,
)

TRIALS = 10_000


def random_posteriors(rng, count, batch, classes):
    return [softmax(Tensor(rng.normal(size=(batch, classes)) * 3)) for _ in range(count)]


@pytest.fixture
def experts(rng):
    return [
        build_expert("rgb", (3, 16, 16), 2, rng),
        build_expert("depth", (3, 16, 16), 2, rng),
    ]


@pytest.fixture
def window(rng):
    return {
        "rgb": rng.uniform(0, 1, size=(4, 3, 16, 16)),
        "depth": rng.uniform(0, 1, size=(4, 3, 16, 16)),
    }


@pytest.mark.parametrize("count", [2, 3])
def test_gate_outputs_lie_on_simplex(rng, count):
    gate = build_gate(12, count, rng, zero_output=False)
    g = gate_forward(gate, Tensor(rng.normal(size=(TRIALS, 12)) * 5)).data
    assert (g >= 0).all()
    assert np.abs(g.sum(axis=1) - 1.0).max() < 1e-12


@pytest.mark.parametrize("count", [2, 3])
def test_mode_combine_is_convex(rng, count):
    posteriors = random_posteriors(rng, count, TRIALS, 3)
    g = softmax(Tensor(rng.normal(size=(TRIALS, count)) * 4))
    F = mode_combine(g, posteriors).data
    stacked = np.stack([p.data for p in posteriors], axis=1)
    assert (F >= stacked.min(axis=1) - 1e-12).all()
    assert (F <= stacked.max(axis=1) + 1e-12).all()
    assert np.abs(F.sum(axis=1) - 1.0).max() < 1e-12


@pytest.mark.parametrize("count", [2, 3])
def test_uniform_gate_equals_averaging(rng, count):
    posteriors = random_posteriors(rng, count, TRIALS, 2)
    uniform = Tensor(np.full((TRIALS, count), 1.0 / count))
    F = mode_combine(uniform, posteriors).data
    mean = np.mean([p.data for p in posteriors], axis=0)
    assert np.abs(F - mean).max() <= 1e-12
    assert np.abs(average_fusion(posteriors).data - mean).max() <= 1e-12


@pytest.mark.parametrize("count", [2, 3])
def test_one_hot_gate_equals_switching(rng, count):
    posteriors = random_posteriors(rng, count, TRIALS, 2)
    picks = rng.integers(0, count, size=TRIALS)
    one_hot = Tensor(np.eye(count)[picks])
    F = mode_combine(one_hot, posteriors).data
    switched = switch_fusion(one_hot, posteriors).data
    chosen = np.stack([p.data for p in posteriors], axis=1)[np.arange(TRIALS), picks]
    assert np.array_equal(F, chosen)
    assert np.array_equal(switched, chosen)


def test_switch_tie_picks_lower_index():
    f1, f2 = Tensor([0.2, 0.8]), Tensor([0.9, 0.1])
    assert switch_fusion(Tensor([0.5, 0.5]), [f1, f2]).data.tolist() == [0.2, 0.8]


def test_mode_combine_rejects_bad_gate():
    f = [Tensor([0.5, 0.5]), Tensor([0.5, 0.5])]
    with pytest.raises(InputError):
        mode_combine(Tensor([0.7, 0.7]), f)
    with pytest.raises(DimensionError):
        mode_combine(Tensor([0.2, 0.3, 0.5]), f)


def test_zero_output_gate_starts_uniform(rng):
    gate = build_gate(10, 3, rng)
    g = gate_forward(gate, Tensor(rng.normal(size=(5, 10)))).data
    assert np.allclose(g, 1.0 / 3.0)


def test_gate_input_length_mismatch(rng):
    gate = build_gate(10, 2, rng)
    with pytest.raises(DimensionError):
        gate_forward(gate, Tensor(np.zeros(9)))


def test_concat_features_layout(experts, window):
    features = [extract_features(e, Tensor(window[e.modality])) for e in experts]
    r = concat_features(features)
    assert r.shape == (4, sum(e.feature_length for e in experts))
    # первым идет блок фильтров первого эксперта
    assert np.array_equal(r.data[:, :experts[0].feature_length], features[0].data.reshape(4, -1))


def test_fused_model_validation(rng, experts):
    gate = build_gate(sum(e.feature_length for e in experts), 2, rng)
    with pytest.raises(ConfigurationError):
        FusedModel(experts=experts, scheme=FusionScheme.MODE)
    with pytest.raises(ConfigurationError):
        FusedModel(experts=experts, scheme=FusionScheme.AVERAGE, gate=gate)
    with pytest.raises(ConfigurationError):
        FusedModel(experts=experts, scheme=FusionScheme.SINGLE)
    with pytest.raises(ConfigurationError):
        FusedModel(experts=[], scheme=FusionScheme.AVERAGE)
    wrong_gate = build_gate(10, 2, rng)
    with pytest.raises(ConfigurationError):
        FusedModel(experts=experts, scheme=FusionScheme.MODE, gate=wrong_gate)


def test_fused_forward_schemes(rng, experts, window):
    length = sum(e.feature_length for e in experts)
    gate = build_gate(length, 2, rng, zero_output=False)
    mode = FusedModel(experts=experts, scheme=FusionScheme.MODE, gate=gate)
    average = FusedModel(experts=experts, scheme=FusionScheme.AVERAGE)
    late = FusedModel(experts=experts, scheme=FusionScheme.LATE, head=build_late_head(length, 2, rng))

    F, g = fused_forward(mode, window)
    assert F.shape == (4, 2) and g.shape == (4, 2)
    assert np.allclose(F.data.sum(axis=1), 1.0)

    F_avg, g_avg = fused_forward(average, window)
    assert g_avg is None
    assert mode.provides_gate
    assert average.provides_gate is False

    F_late, _ = fused_forward(late, window)
    assert np.allclose(F_late.data, 0.5)


def test_fuse_features_matches_fused_forward(rng, experts, window):
    gate = build_gate(sum(e.feature_length for e in experts), 2, rng, zero_output=False)
    model = FusedModel(experts=experts, scheme=FusionScheme.MODE, gate=gate)
    features = [extract_features(e, Tensor(window[e.modality])) for e in experts]
    F1, g1 = fuse_features(model, features)
    F2, g2 = fused_forward(model, window)
    assert np.array_equal(F1.data, F2.data)
    assert np.array_equal(g1.data, g2.data)


def test_fused_forward_missing_modality(experts, window):
    model = FusedModel(experts=experts, scheme=FusionScheme.AVERAGE)
    with pytest.raises(InputError, match="depth"):
        fused_forward(model, {"rgb": window["rgb"]})


def test_channel_scheme(rng, window):
    net = build_expert(["rgb", "depth"], (6, 16, 16), 2, rng)
    model = FusedModel(experts=[], scheme=FusionScheme.CHANNEL, channel_net=net)
    assert model.channel_order == ("rgb", "depth")
    F, g = fused_forward(model, window)
    assert F.shape == (4, 2) and g is None

    with pytest.raises(ConfigurationError):
        FusedModel(experts=[], scheme=FusionScheme.CHANNEL, channel_net=net, channel_order=("depth", "rgb"))


def test_three_expert_mixture(rng):
    experts = [build_expert(m, (c, 8, 8), 2, rng) for m, c in (("rgb", 3), ("depth", 3), ("motion", 1))]
    gate = build_gate(sum(e.feature_length for e in experts), 3, rng, zero_output=False)
    model = FusedModel(experts=experts, scheme=FusionScheme.MODE, gate=gate)
    window = {e.modality: rng.uniform(0, 1, size=(2,) + e.input_size) for e in experts}
    F, g = fused_forward(model, window)
    assert g.shape == (2, 3)
    assert np.abs(g.data.sum(axis=1) - 1).max() < 1e-12
