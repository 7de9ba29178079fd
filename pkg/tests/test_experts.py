"""Tests for modality experts and preprocessing."""
import numpy as np
import pytest

from app.core.exceptions import ConfigurationError, DimensionError, InputError, ParameterError
from app.nn import Tensor
from app.services.experts import (
    FEATURE_CHANNELS,
    build_expert,
    colorize_depth,
    crop_resize,
    expert_forward,
    modality_image,
    prepare_windows,
)
from conftest import make_box, make_frame


def test_forward_shapes(rng):
    net = build_expert("rgb", (3, 32, 32), 2, rng)
    assert net.feature_shape == (FEATURE_CHANNELS, 4, 4)
    single = expert_forward(net, Tensor(rng.uniform(size=(3, 32, 32))))
    assert single.posterior.shape == (2,)
    assert single.features.shape == (FEATURE_CHANNELS, 4, 4)
    batch = expert_forward(net, Tensor(rng.uniform(size=(5, 3, 32, 32))))
    assert batch.posterior.shape == (5, 2)
    assert np.allclose(batch.posterior.data.sum(axis=1), 1.0)


def test_size_must_be_divisible_by_eight(rng):
    with pytest.raises(ConfigurationError):
        build_expert("rgb", (3, 30, 32), 2, rng)


def test_channel_count_must_match_modality(rng):
    with pytest.raises(ConfigurationError):
        build_expert("motion", (3, 16, 16), 2, rng)
    with pytest.raises(ConfigurationError):
        build_expert("sonar", (1, 16, 16), 2, rng)


def test_input_shape_mismatch(rng):
    net = build_expert("depth", (3, 16, 16), 2, rng)
    with pytest.raises(DimensionError):
        expert_forward(net, Tensor(np.zeros((1, 16, 16))))


def test_dropout_needs_rng_only_in_training(rng):
    net = build_expert("rgb", (3, 16, 16), 2, rng)
    x = Tensor(rng.uniform(size=(2, 3, 16, 16)))
    assert np.array_equal(expert_forward(net, x).posterior.data, expert_forward(net, x).posterior.data)
    with pytest.raises(ParameterError):
        expert_forward(net, x, training=True)


def test_layer_description(rng):
    net = build_expert("rgb", (3, 16, 16), 2, rng)
    assert net.layers[:3] == ["conv1:conv5x5-16-pad2", "relu", "pool2"]
    assert net.layers[-2:] == ["head:affine-2", "softmax"]


def test_colorize_depth():
    depth = np.array([[[0.5, 10.0, 0.0, 5.25]]])
    colored = colorize_depth(depth, (0.5, 10.0))
    assert colored.shape == (3, 1, 4)
    assert colored[:, 0, 0].tolist() == [0.0, 0.0, 1.0]
    assert colored[:, 0, 1].tolist() == [1.0, 0.0, 0.0]
    # нет данных - черный пиксель
    assert colored[:, 0, 2].tolist() == [0.0, 0.0, 0.0]
    assert 0.0 <= colored.min() and colored.max() <= 1.0

    with pytest.raises(ParameterError):
        colorize_depth(depth, (5.0, 5.0))
    with pytest.raises(DimensionError):
        colorize_depth(np.zeros((2, 2)), (0.5, 10.0))


def test_crop_resize_identity_and_constant():
    image = np.arange(2 * 8 * 8, dtype=float).reshape(2, 8, 8)
    out = crop_resize(image, [make_box(0, 0, 8, 8)], 8)
    assert out.shape == (1, 2, 8, 8)
    assert np.allclose(out[0], image)

    flat = np.full((1, 20, 20), 0.25)
    resized = crop_resize(flat, [make_box(2, 3, 10, 19), make_box(0, 0, 20, 20)], 4)
    assert resized.shape == (2, 1, 4, 4)
    assert np.allclose(resized, 0.25)
    assert crop_resize(flat, [], 4).shape == (0, 1, 4, 4)


def test_prepare_windows_uses_colorized_depth(frame_with_people):
    boxes = [a.box for a in frame_with_people.annotations]
    windows = prepare_windows(frame_with_people, ["rgb", "depth", "motion"], boxes, 16, (0.5, 10.0))
    assert windows["rgb"].shape == (2, 3, 16, 16)
    assert windows["depth"].shape == (2, 3, 16, 16)
    assert windows["motion"].shape == (2, 1, 16, 16)


def test_missing_modality_image():
    frame = make_frame()
    frame.motion = None
    with pytest.raises(InputError):
        modality_image(frame, "motion", (0.5, 10.0))
