"""Tests for the tensor core: ops, tape, params and the gradient oracle."""
import numpy as np
import pytest

from app.core.exceptions import (
    DeterminismError,
    DimensionError,
    InputError,
    ParameterError,
    StateError,
)
from app.models.training import CLASS_NAMES
from app.nn import (
    Params,
    Tape,
    Tensor,
    affine,
    concat,
    conv2d,
    cross_entropy_loss,
    dropout,
    finite_difference_check,
    flatten,
    maxpool2d,
    relu,
    select,
    sgd_step,
    softmax,
    stack,
    weighted_sum,
)
from app.services.experts import build_expert, extract_features, expert_head
from app.nn.ops import SOFTMAX_FLOOR
from app.services.fusion import (
    build_gate,
    build_late_head,
    concat_features,
    gate_forward,
    late_fusion_forward,
    mode_combine,
)


def test_affine_values_and_shape_check():
    x = Tensor([[1.0, 2.0]])
    w = Tensor([[1.0, 0.0, 2.0], [0.0, 1.0, 1.0]])
    b = Tensor([0.5, 0.0, -1.0])
    out = affine(x, w, b)
    assert out.data.tolist() == [[1.5, 2.0, 3.0]]

    with pytest.raises(DimensionError):
        affine(Tensor([[1.0, 2.0, 3.0]]), w, b)


def test_conv2d_output_size_and_known_value():
    x = Tensor(np.ones((1, 5, 5)))
    k = Tensor(np.ones((2, 1, 3, 3)))
    out = conv2d(x, k, Tensor(np.zeros(2)), stride=1, pad=1)
    assert out.shape == (2, 5, 5)
    # центр видит 9 единиц, угол - 4
    assert out.data[0, 2, 2] == 9.0
    assert out.data[1, 0, 0] == 4.0

    strided = conv2d(Tensor(np.ones((3, 1, 8, 8))), k, Tensor(np.zeros(2)), stride=2, pad=0)
    assert strided.shape == (3, 2, 3, 3)


def test_conv2d_channel_mismatch():
    with pytest.raises(DimensionError):
        conv2d(Tensor(np.ones((2, 5, 5))), Tensor(np.ones((1, 3, 3, 3))), Tensor(np.zeros(1)))


def test_maxpool_routes_gradient_to_first_maximum():
    x = Tensor(np.array([[[1.0, 3.0], [3.0, 0.0]]]), requires_grad=True)
    with Tape() as tape:
        out = maxpool2d(x, 2, 2)
        tape.backward(out, np.ones((1, 1, 1)))
    assert out.data.item() == 3.0
    assert x.grad.tolist() == [[[0.0, 1.0], [0.0, 0.0]]]


def test_softmax_rows_sum_to_one():
    z = Tensor(np.random.default_rng(0).normal(size=(4, 3)) * 50)
    p = softmax(z).data
    assert np.allclose(p.sum(axis=1), 1.0)
    assert (p >= 0).all()


def test_softmax_floor_keeps_probabilities_positive():
    p = softmax(Tensor([[0.0, 1000.0]])).data
    assert p.min() > 0.0
    assert p[0, 0] == SOFTMAX_FLOOR
    assert abs(p.sum() - 1.0) < 1e-12

    loss = cross_entropy_loss(softmax(Tensor([[0.0, 1000.0]])), Tensor([[1.0, 0.0]]))
    assert np.isfinite(loss.item())


def test_softmax_is_shift_invariant():
    z = np.random.default_rng(2).normal(size=(5, 4)) * 3
    assert np.allclose(softmax(Tensor(z + 100.0)).data, softmax(Tensor(z)).data, rtol=0, atol=1e-12)


def test_softmax_equal_large_logits_are_uniform():
    p = softmax(Tensor([1000.0, 1000.0, 1000.0])).data
    assert np.isfinite(p).all()
    assert p.tolist() == [1.0 / 3.0] * 3


def test_softmax_known_value():
    p = softmax(Tensor([np.log(1.0), np.log(3.0)])).data
    assert p == pytest.approx([0.25, 0.75], abs=1e-12)


def test_cross_entropy_rejects_bad_labels():
    F = Tensor([[0.3, 0.7]])
    with pytest.raises(InputError):
        cross_entropy_loss(F, Tensor([[0.5, 0.5]]))
    with pytest.raises(DimensionError):
        cross_entropy_loss(F, Tensor([[0.0, 1.0, 0.0]]))
    loss = cross_entropy_loss(F, Tensor([[0.0, 1.0]]))
    assert loss.item() == pytest.approx(-np.log(0.7))


def test_dropout_modes():
    x = Tensor(np.ones((100, 10)))
    assert dropout(x, 0.5, None, training=False) is x
    with pytest.raises(ParameterError):
        dropout(x, 1.0, np.random.default_rng(0), training=True)
    with pytest.raises(ParameterError):
        dropout(x, 0.5, None, training=True)

    dropped = dropout(x, 0.5, np.random.default_rng(0), training=True).data
    assert set(np.unique(dropped)) <= {0.0, 2.0}
    assert abs(dropped.mean() - 1.0) < 0.1


def test_dropout_preserves_expectation():
    x = Tensor(np.ones(100_000))
    dropped = dropout(x, 0.5, np.random.default_rng(0), training=True).data
    assert abs(dropped.mean() - 1.0) < 0.01
    assert abs((dropped == 0.0).mean() - 0.5) < 0.01


def test_tape_is_not_recorded_without_context():
    w = Tensor([[1.0]], requires_grad=True)
    out = affine(Tensor([[2.0]]), w, Tensor([0.0]))
    assert not out.requires_grad


def test_concat_stack_select_weighted_sum():
    a, b = Tensor([[1.0, 2.0]]), Tensor([[3.0, 4.0]])
    assert concat([a, b], axis=1).shape == (1, 4)
    stacked = stack([a, b], axis=1)
    assert stacked.shape == (1, 2, 2)
    assert select(stacked, np.array([1])).data.tolist() == [[3.0, 4.0]]
    mixed = weighted_sum(Tensor([[0.25, 0.75]]), stacked)
    assert mixed.data.tolist() == [[2.5, 3.5]]


def test_relu_gradient_mask():
    x = Tensor([-1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        tape.backward(relu(x), np.ones(2))
    assert x.grad.tolist() == [0.0, 1.0]


def test_sgd_step_with_zero_learning_rate_keeps_weights():
    params = Params()
    w = params.add("w", np.array([1.0, -2.0]))
    w.grad = np.array([10.0, 10.0])
    sgd_step(params, 0.0, 0.9)
    assert w.data.tolist() == [1.0, -2.0]
    assert w.grad is None


def test_sgd_step_momentum_and_missing_grad():
    params = Params()
    w = params.add("w", np.array([1.0]))
    w.grad = np.array([1.0])
    sgd_step(params, 0.1, 0.9)
    w.grad = np.array([1.0])
    sgd_step(params, 0.1, 0.9)
    # v1 = -0.1, v2 = 0.9 * -0.1 - 0.1 = -0.19
    assert w.data[0] == pytest.approx(1.0 - 0.1 - 0.19)

    with pytest.raises(StateError):
        sgd_step(params, 0.1)


def test_frozen_params_receive_no_gradient():
    params = Params()
    w = params.add("w", np.ones((2, 1)), trainable=False)
    b = params.add("b", np.zeros(1))
    with Tape() as tape:
        out = affine(Tensor([[1.0, 2.0]]), w, b)
        tape.backward(out, np.ones((1, 1)))
    assert w.grad is None
    assert b.grad.tolist() == [1.0]


def test_duplicate_param_name():
    params = Params()
    params.add("w", np.ones(1))
    with pytest.raises(InputError):
        params.add("w", np.ones(1))


def test_non_finite_tensor_rejected():
    with pytest.raises(InputError):
        Tensor([1.0, np.nan])


def test_finite_difference_detects_nondeterminism():
    params = Params()
    params.add("w", np.ones(3))
    calls = {"n": 0}

    def loss_fn(p):
        calls["n"] += 1
        return Tensor(float(calls["n"]))

    with pytest.raises(DeterminismError):
        finite_difference_check(loss_fn, params)


def test_finite_difference_on_softmax_regression():
    rng = np.random.default_rng(5)
    params = Params()
    params.add("w", rng.normal(size=(4, 3)))
    params.add("b", rng.normal(size=3))
    x = Tensor(rng.normal(size=(6, 4)))
    y = Tensor(np.eye(3)[rng.integers(0, 3, size=6)])

    def loss_fn(p):
        return cross_entropy_loss(softmax(affine(x, p["w"], p["b"])), y)

    assert finite_difference_check(loss_fn, params) < 1e-6


def test_gradient_check_full_mixture():
    """Experts, gate, mode combination and cross-entropy at random init."""
    rng = np.random.default_rng(11)
    experts = [
        build_expert("rgb", (3, 8, 8), len(CLASS_NAMES), rng),
        build_expert("depth", (3, 8, 8), len(CLASS_NAMES), rng),
    ]
    gate = build_gate(sum(e.feature_length for e in experts), 2, rng, zero_output=False)
    inputs = [Tensor(rng.uniform(0, 1, size=(3, 3, 8, 8))) for _ in experts]
    labels = Tensor(np.eye(2)[[0, 1, 1]])

    params = Params()
    for prefix, owner in (("rgb", experts[0]), ("depth", experts[1]), ("gate", gate)):
        for name, tensor in owner.params.items():
            params.add(f"{prefix}.{name}", tensor)

    def loss_fn(_):
        outputs = [expert_head(e, extract_features(e, x)) for e, x in zip(experts, inputs)]
        g = gate_forward(gate, concat_features(outputs))
        F = mode_combine(g, [o.posterior for o in outputs])
        return cross_entropy_loss(F, labels)

    worst = finite_difference_check(loss_fn, params, epsilon=1e-4, coordinates_per_tensor=50,
                                    rng=np.random.default_rng(0))
    assert worst < 1e-3


def test_gradient_check_dropout_with_fixed_mask():
    rng = np.random.default_rng(6)
    params = Params()
    params.add("w1", rng.normal(size=(5, 8)))
    params.add("b1", rng.normal(size=8))
    params.add("w2", rng.normal(size=(8, 3)))
    params.add("b2", np.zeros(3))
    x = Tensor(rng.normal(size=(4, 5)))
    y = Tensor(np.eye(3)[[0, 2, 1, 1]])

    def loss_fn(p):
        hidden = dropout(affine(x, p["w1"], p["b1"]), 0.5, np.random.default_rng(0), training=True)
        return cross_entropy_loss(softmax(affine(hidden, p["w2"], p["b2"])), y)

    assert finite_difference_check(loss_fn, params) < 1e-6


def test_gradient_check_select():
    rng = np.random.default_rng(7)
    params = Params()
    params.add("stacked", rng.normal(size=(4, 3, 2)))
    index = np.array([0, 2, 1, 2])
    y = Tensor(np.eye(2)[[1, 0, 0, 1]])

    def loss_fn(p):
        return cross_entropy_loss(softmax(select(p["stacked"], index)), y)

    assert finite_difference_check(loss_fn, params) < 1e-6


def test_gradient_check_weighted_sum():
    rng = np.random.default_rng(8)
    params = Params()
    params.add("gate", rng.normal(size=(4, 3)))
    params.add("posteriors", rng.normal(size=(4, 3, 2)))
    y = Tensor(np.eye(2)[[0, 1, 1, 0]])

    def loss_fn(p):
        return cross_entropy_loss(weighted_sum(softmax(p["gate"]), softmax(p["posteriors"])), y)

    assert finite_difference_check(loss_fn, params) < 1e-6


def test_gradient_check_late_head():
    rng = np.random.default_rng(9)
    head = build_late_head(12, len(CLASS_NAMES), rng, zero_output=False)
    r = Tensor(rng.normal(size=(5, 12)))
    y = Tensor(np.eye(2)[[0, 1, 1, 0, 1]])

    def loss_fn(_):
        return cross_entropy_loss(late_fusion_forward(head, r, training=True, rng=np.random.default_rng(1)), y)

    worst = finite_difference_check(loss_fn, head.params, rng=np.random.default_rng(0))
    assert worst < 1e-5


def test_gradient_check_strided_padded_conv():
    rng = np.random.default_rng(10)
    params = Params()
    params.add("kernels", rng.normal(size=(2, 3, 3, 3)))
    params.add("bias", rng.normal(size=2))
    params.add("w", rng.normal(size=(2 * 4 * 4, 2)) * 0.1)
    params.add("b", np.zeros(2))
    x = Tensor(rng.normal(size=(3, 3, 7, 7)))
    y = Tensor(np.eye(2)[[0, 1, 0]])

    def loss_fn(p):
        maps = conv2d(x, p["kernels"], p["bias"], stride=2, pad=1)
        return cross_entropy_loss(softmax(affine(flatten(maps), p["w"], p["b"])), y)

    assert finite_difference_check(loss_fn, params) < 1e-6


@pytest.mark.parametrize("size", [5, 8, 11])
@pytest.mark.parametrize("k", [1, 2, 3])
@pytest.mark.parametrize("stride", [1, 2, 3])
def test_conv_and_pool_output_shapes(size, k, stride):
    x = Tensor(np.zeros((2, 1, size, size)))
    for pad in (0, 1):
        out = conv2d(x, Tensor(np.zeros((3, 1, k, k))), Tensor(np.zeros(3)), stride=stride, pad=pad)
        side = (size + 2 * pad - k) // stride + 1
        assert out.shape == (2, 3, side, side)
    pooled = maxpool2d(x, k, stride)
    side = (size - k) // stride + 1
    assert pooled.shape == (2, 1, side, side)
