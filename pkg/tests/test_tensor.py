import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import central_difference, max_rel_error
from lws.errors import ArgumentError, DimensionError, StateError
from lws.tensor import (
    AdamState,
    Parameter,
    Tape,
    Tensor,
    adam_step,
    add,
    backward,
    conv2d,
    flatten,
    he_uniform_init,
    matmul,
    maxpool2,
    mul,
    relu,
    scale,
    softmax_cross_entropy_mean,
    total,
)


def grad_check(build, params, h=1e-5):
    """Compare tape gradients of ``build()`` (a scalar) against central differences."""
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = build()
    backward(tape, loss)
    worst = 0.0
    for p in params:
        numeric = central_difference(lambda: build().item(), p.data, h)
        worst = max(worst, max_rel_error(p.grad, numeric))
    return worst


# --- matmul ---------------------------------------------------------------


def test_matmul_identity_and_projector():
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matmul(Tensor(np.eye(2)), m).data, m.data)
    p = matmul(Tensor([[1.0, 0.0], [0.0, 0.0]]), Tensor([[5.0, 6.0], [7.0, 8.0]]))
    np.testing.assert_array_equal(p.data, [[5.0, 6.0], [0.0, 0.0]])


def test_matmul_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    a = Parameter(rng.uniform(-1, 1, (3, 4)))
    b = Parameter(rng.uniform(-1, 1, (4, 2)))
    w = rng.uniform(-1, 1, (3, 2))
    assert grad_check(lambda: total(mul(matmul(a, b), Tensor(w))), [a, b]) < 1e-6


def test_matmul_shape_mismatch_reports_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


# --- relu -----------------------------------------------------------------


def test_relu_forward():
    np.testing.assert_array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])


def test_relu_all_negative_gives_zero_gradient():
    x = Parameter([-3.0, -0.5, -1e-9])
    with Tape() as tape:
        y = total(relu(x))
    backward(tape, y)
    assert y.item() == 0.0
    np.testing.assert_array_equal(x.grad, 0.0)


def test_relu_gradient_mask_is_positive_indicator():
    rng = np.random.default_rng(1)
    x = Parameter(rng.uniform(-1, 1, (5, 7)))
    with Tape() as tape:
        y = total(relu(x))
    backward(tape, y)
    np.testing.assert_array_equal(x.grad, (x.data > 0).astype(float))


# --- conv2d ---------------------------------------------------------------


def test_conv_centered_delta_projects_channel_sum():
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, (2, 3, 4, 4))
    k = np.zeros((1, 3, 3, 3))
    k[0, :, 1, 1] = 1.0
    out = conv2d(Tensor(x), Tensor(k), Tensor([0.0]))
    np.testing.assert_allclose(out.data[:, 0], x.sum(axis=1), rtol=0, atol=1e-15)


def test_conv_zero_input_gives_bias():
    rng = np.random.default_rng(3)
    out = conv2d(Tensor(np.zeros((1, 2, 4, 6))), Tensor(rng.normal(size=(3, 2, 3, 3))), Tensor([0.5, -1.0, 2.0]))
    for f, beta in enumerate([0.5, -1.0, 2.0]):
        np.testing.assert_array_equal(out.data[0, f], beta)


def test_conv_matches_naive_loop():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 2, 5, 4))
    k = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((2, 3, 5, 4))
    for n in range(2):
        for f in range(3):
            for i in range(5):
                for j in range(4):
                    ref[n, f, i, j] = np.sum(xp[n, :, i : i + 3, j : j + 3] * k[f]) + b[f]
    np.testing.assert_allclose(conv2d(Tensor(x), Tensor(k), Tensor(b)).data, ref, atol=1e-12)


def test_conv_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    x = Parameter(rng.uniform(-1, 1, (1, 1, 4, 4)))
    k = Parameter(rng.uniform(-1, 1, (2, 1, 3, 3)))
    b = Parameter(rng.uniform(-1, 1, 2))
    w = rng.uniform(-1, 1, (1, 2, 4, 4))
    assert grad_check(lambda: total(mul(conv2d(x, k, b), Tensor(w))), [x, k, b]) < 1e-5


def test_conv_channel_mismatch():
    with pytest.raises(DimensionError, match="channels"):
        conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))), Tensor([0.0]))


# --- maxpool2 -------------------------------------------------------------


def test_maxpool_window_maximum():
    out = maxpool2(Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])[None, None]))
    assert out.data.reshape(()) == 4.0


def test_maxpool_tie_routes_gradient_to_first_element():
    x = Parameter(np.full((1, 1, 4, 4), 0.7))
    with Tape() as tape:
        y = total(maxpool2(x))
    backward(tape, y)
    expected = np.zeros((4, 4))
    expected[::2, ::2] = 1.0
    np.testing.assert_array_equal(x.grad[0, 0], expected)


def test_maxpool_gradients_match_finite_differences():
    rng = np.random.default_rng(6)
    # distinct values at least 1e-3 apart so no window is within h of a tie
    vals = rng.permutation(16) * 1e-2 + rng.uniform(-1e-4, 1e-4, 16)
    x = Parameter(vals.reshape(1, 1, 4, 4))
    w = rng.uniform(-1, 1, (1, 1, 2, 2))
    assert grad_check(lambda: total(mul(maxpool2(x), Tensor(w))), [x]) < 1e-6


def test_maxpool_odd_dims_rejected():
    with pytest.raises(DimensionError):
        maxpool2(Tensor(np.zeros((1, 1, 3, 4))))


# --- softmax cross-entropy -------------------------------------------------


def test_cross_entropy_uniform_logits():
    assert softmax_cross_entropy_mean(Tensor([[0.0, 0.0]]), [0]).item() == pytest.approx(np.log(2), abs=1e-15)


def test_cross_entropy_is_stable_for_huge_logits():
    logits = Parameter([[1000.0, 0.0]])
    with Tape() as tape:
        loss = softmax_cross_entropy_mean(logits, [0])
    backward(tape, loss)
    assert loss.item() == pytest.approx(0.0, abs=1e-300)
    assert np.all(np.isfinite(logits.grad))


def test_cross_entropy_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    z = Parameter(rng.uniform(-1, 1, (5, 4)))
    labels = rng.integers(0, 4, 5)
    assert grad_check(lambda: softmax_cross_entropy_mean(z, labels), [z]) < 1e-6


def test_cross_entropy_label_out_of_range():
    with pytest.raises(ArgumentError):
        softmax_cross_entropy_mean(Tensor([[0.0, 1.0]]), [2])


# --- backward ---------------------------------------------------------------


def test_square_gradient_and_accumulation():
    x = Parameter([3.0])
    with Tape() as tape:
        y = mul(x, x)
    backward(tape, y)
    assert x.grad[0] == 6.0
    backward(tape, y)
    assert x.grad[0] == 12.0
    x.zero_grad()
    assert x.grad[0] == 0.0


def test_backward_rejects_non_scalar():
    x = Parameter([1.0, 2.0])
    with Tape() as tape:
        y = scale(x, 2.0)
    with pytest.raises(ArgumentError):
        backward(tape, y)


def test_untaped_ops_record_nothing():
    x = Parameter([1.0])
    with Tape() as tape:
        pass
    mul(x, x)
    assert tape.records == []


def _mlp_params(rng):
    return [
        Parameter(rng.uniform(-1, 1, (4, 6)), 0),
        Parameter(rng.uniform(-1, 1, 6), 1),
        Parameter(rng.uniform(-1, 1, (6, 3)), 2),
        Parameter(rng.uniform(-1, 1, 3), 3),
    ]


def test_composed_mlp_gradient():
    rng = np.random.default_rng(8)
    w1, b1, w2, b2 = _mlp_params(rng)
    x = Tensor(rng.uniform(-1, 1, (5, 4)))
    y = rng.integers(0, 3, 5)

    def loss():
        h = relu(add(matmul(x, w1), b1))
        return softmax_cross_entropy_mean(add(matmul(h, w2), b2), y)

    assert grad_check(loss, [w1, b1, w2, b2]) < 1e-4


def test_backward_is_linear_in_losses():
    rng = np.random.default_rng(9)
    params = _mlp_params(rng)
    w1, b1, w2, b2 = params
    x = Tensor(rng.uniform(-1, 1, (5, 4)))
    y1, y2 = rng.integers(0, 3, 5), rng.integers(0, 3, 5)

    def loss(y):
        return softmax_cross_entropy_mean(add(matmul(relu(add(matmul(x, w1), b1)), w2), b2), y)

    with Tape() as tape:
        l = add(loss(y1), loss(y2))
    backward(tape, l)
    joint = [p.grad.copy() for p in params]
    separate = [np.zeros_like(p.data) for p in params]
    for y in (y1, y2):
        for p in params:
            p.zero_grad()
        with Tape() as tape:
            l = loss(y)
        backward(tape, l)
        for s, p in zip(separate, params):
            s += p.grad
    for j, s in zip(joint, separate):
        np.testing.assert_allclose(j, s, rtol=1e-12, atol=1e-14)


def test_forward_is_bitwise_repeatable():
    rng = np.random.default_rng(10)
    x = Tensor(rng.normal(size=(2, 2, 4, 4)))
    k = Tensor(rng.normal(size=(3, 2, 3, 3)))
    b = Tensor(rng.normal(size=3))
    first = maxpool2(relu(conv2d(x, k, b))).data
    second = maxpool2(relu(conv2d(x, k, b))).data
    assert np.array_equal(first, second)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_forward_backward_finite(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.uniform(-1, 1, (2, 1, 4, 4)))
    k = Parameter(rng.uniform(-1, 1, (2, 1, 3, 3)))
    b = Parameter(rng.uniform(-1, 1, 2))
    w = Parameter(rng.uniform(-1, 1, (8, 3)))
    with Tape() as tape:
        h = flatten(maxpool2(relu(conv2d(x, k, b))))
        loss = softmax_cross_entropy_mean(matmul(h, w), rng.integers(0, 3, 2))
    backward(tape, loss)
    for p in (k, b, w):
        assert np.all(np.isfinite(p.grad))


# --- Adam -------------------------------------------------------------------


def test_adam_first_step_is_signed_learning_rate():
    p = Parameter([0.5, -0.2, 1.0], 0)
    p.grad[...] = [3.0, -0.01, 250.0]
    state = AdamState.for_params([p])
    adam_step([p], state, 0.01)
    # m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps), i.e. about lr * sign(g)
    g = np.array([3.0, -0.01, 250.0])
    np.testing.assert_allclose(p.data, [0.5, -0.2, 1.0] - 0.01 * g / (np.abs(g) + 1e-8), rtol=1e-14)
    np.testing.assert_allclose(p.data, [0.5 - 0.01, -0.2 + 0.01, 1.0 - 0.01], rtol=0, atol=1e-7)
    assert state.t == 1


def test_adam_zero_gradient_is_fixed_point():
    p = Parameter([0.5, -0.2], 0)
    state = AdamState.for_params([p])
    p.grad[...] = [1.0, 1.0]
    adam_step([p], state, 0.1)
    before = p.data.copy()
    p.zero_grad()
    for _ in range(3):
        adam_step([p], state, 0.1)
    np.testing.assert_array_equal(p.data, before)
    assert state.t == 4


def test_adam_is_deterministic():
    def run():
        p = Parameter([0.3, 0.4], 0)
        state = AdamState.for_params([p])
        for g in ([1.0, -2.0], [0.5, 0.1]):
            p.grad[...] = g
            adam_step([p], state, 1e-3)
        return p.data

    assert np.array_equal(run(), run())


def test_adam_missing_state():
    with pytest.raises(StateError):
        adam_step([Parameter([1.0], 7)], AdamState(), 1e-3)


def test_adam_matches_reference_recurrence():
    rng = np.random.default_rng(11)
    p = Parameter(rng.normal(size=4), 0)
    state = AdamState.for_params([p])
    ref = p.data.copy()
    m = np.zeros(4)
    v = np.zeros(4)
    for t in range(1, 6):
        g = rng.normal(size=4)
        p.grad[...] = g
        adam_step([p], state, 0.05)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.05 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(p.data, ref, rtol=1e-12)


# --- He init ----------------------------------------------------------------


def test_he_uniform_bounds_mean_and_determinism():
    rng = np.random.default_rng(12)
    w = he_uniform_init((100_000,), 6, rng).data
    assert np.all(np.abs(w) < 1.0)
    # U(-1, 1) has variance 1/3
    assert abs(w.mean()) < 5 * np.sqrt(1 / 3 / w.size)
    a = he_uniform_init((3, 3), 4, np.random.default_rng(1)).data
    b = he_uniform_init((3, 3), 4, np.random.default_rng(1)).data
    assert np.array_equal(a, b)


def test_he_uniform_rejects_bad_fan_in():
    with pytest.raises(ArgumentError):
        he_uniform_init((2,), 0, np.random.default_rng(0))
