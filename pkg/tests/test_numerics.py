import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from topo_pretrain import numerics as nx_
from topo_pretrain.numerics import (
    Adam,
    AdamState,
    BatchNormState,
    DomainError,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    adam_step,
    batch_norm,
    matmul,
    segment_sum,
)
from topo_pretrain.numerics.gradcheck import analytic_grads, numeric_grad, relative_error


def test_matmul_identity_and_small_product():
    out = matmul(Tensor([[1, 0], [0, 1]]), Tensor([[3], [4]]))
    np.testing.assert_array_equal(out.data, [[3], [4]])
    np.testing.assert_array_equal(matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data, [[11]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    a = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    b = Tensor(rng.normal(size=(5, 3)))
    f = lambda: matmul(a, b).sum()
    (ga,) = analytic_grads(f, [a])
    np.testing.assert_allclose(ga, np.ones((4, 3)) @ b.data.T, rtol=1e-6)
    assert relative_error(ga, numeric_grad(f, a)) < 1e-4


def test_relu_sigmoid_values():
    np.testing.assert_array_equal(nx_.relu(Tensor([-1, 0, 2])).data, [0, 0, 2])
    assert nx_.sigmoid(Tensor([0.0])).item() == 0.5


def test_sigmoid_derivative_at_zero():
    x = Tensor([0.0], requires_grad=True)
    f = lambda: nx_.sigmoid(x).sum()
    (g,) = analytic_grads(f, [x])
    assert g[0] == pytest.approx(0.25, abs=1e-7)
    assert abs(numeric_grad(f, x, h=1e-3)[0] - 0.25) < 1e-6


def test_elementwise_dispatch_and_errors():
    a = Tensor([1.0, 2.0])
    np.testing.assert_array_equal(nx_.elementwise("scale", a, 3).data, [3, 6])
    np.testing.assert_array_equal(nx_.elementwise("mul", a, a).data, [1, 4])
    with pytest.raises(ShapeError):
        nx_.elementwise("add", a, Tensor([1.0, 2.0, 3.0]))
    with pytest.raises(DomainError):
        nx_.log(Tensor([1.0, 0.0]))


def test_segment_sum_examples():
    out = segment_sum(Tensor([[1], [2], [3]]), [0, 0, 1], 2)
    np.testing.assert_array_equal(out.data, [[3], [3]])
    x = np.arange(12, dtype=np.float32).reshape(4, 3)
    perm = [2, 0, 3, 1]
    out = segment_sum(Tensor(x), perm, 4)
    np.testing.assert_array_equal(out.data[perm], x)
    with pytest.raises(IndexError):
        segment_sum(Tensor(x), [0, 1, 2, 4], 4)


def test_segment_sum_matches_loop_oracle():
    rng = np.random.default_rng(1)
    values = rng.normal(size=(20, 8)).astype(np.float32)
    ids = rng.integers(0, 5, size=20)
    expected = np.zeros((5, 8), dtype=np.float32)
    for row, i in zip(values, ids):
        expected[i] += row
    np.testing.assert_array_equal(segment_sum(Tensor(values), ids, 5).data, expected)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 30), st.integers(1, 6), st.integers(0, 10_000))
def test_segment_sum_permutation_equivariant(n, s, seed):
    rng = np.random.default_rng(seed)
    values = rng.integers(-5, 5, size=(n, 3)).astype(np.float32)
    ids = rng.integers(0, s, size=n)
    perm = rng.permutation(n)
    a = segment_sum(Tensor(values), ids, s).data
    b = segment_sum(Tensor(values[perm]), ids[perm], s).data
    np.testing.assert_array_equal(a, b)


def test_segment_sum_gradient_scatters_back():
    v = Tensor(np.ones((3, 2)), requires_grad=True)
    w = Tensor([[1.0, 2.0], [3.0, 4.0]])
    with Tape() as tape:
        loss = (segment_sum(v, [1, 0, 1], 2) * w).sum()
    tape.backward(loss)
    np.testing.assert_array_equal(v.grad, [[3, 4], [1, 2], [3, 4]])


def test_batch_norm_examples():
    st_ = BatchNormState.create(3)
    st_.beta.data = np.array([0.5, -1.0, 2.0], np.float32)
    out = batch_norm(Tensor(np.tile([1.0, 2.0, 3.0], (5, 1))), st_, training=True)
    np.testing.assert_allclose(out.data, np.tile(st_.beta.data, (5, 1)))

    ident = BatchNormState.create(2)
    x = np.array([[0.3, -2.0], [1.5, 4.0]], np.float32)
    out = batch_norm(Tensor(x), ident, training=False)
    np.testing.assert_allclose(out.data, x / np.sqrt(1 + 1e-5), rtol=1e-6)
    np.testing.assert_allclose(out.data, x, atol=1e-4)


def test_batch_norm_training_statistics_recomputed():
    rng = np.random.default_rng(2)
    x = rng.normal(3.0, 2.0, size=(16, 4)).astype(np.float32)
    st_ = BatchNormState.create(4)
    st_.beta.data = np.array([0.1, 0.2, 0.3, 0.4], np.float32)
    st_.gamma.data = np.array([2.0, 1.0, 0.5, 1.5], np.float32)
    out = batch_norm(Tensor(x), st_, training=True).data
    np.testing.assert_allclose(out.mean(axis=0), st_.beta.data, atol=1e-5)
    np.testing.assert_allclose(out.std(axis=0), st_.gamma.data, rtol=1e-3)
    # running statistics: momentum 0.1 from (0, 1) with the unbiased variance
    np.testing.assert_allclose(st_.running_mean, 0.1 * x.mean(axis=0), rtol=1e-5)
    np.testing.assert_allclose(st_.running_var, 0.9 + 0.1 * x.var(axis=0, ddof=1), rtol=1e-5)
    assert np.all(st_.running_var >= 0)


def test_batch_norm_channel_mismatch():
    with pytest.raises(ShapeError):
        batch_norm(Tensor(np.zeros((4, 3))), BatchNormState.create(2))


@pytest.mark.parametrize("training", [True, False])
def test_batch_norm_gradients(training):
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(6, 3)), requires_grad=True)
    st_ = BatchNormState.create(3)
    st_.running_mean = rng.normal(size=3).astype(np.float32)
    st_.running_var = rng.uniform(0.5, 2, size=3).astype(np.float32)
    st_.gamma.data = rng.uniform(0.5, 1.5, size=3).astype(np.float32)
    w = Tensor(rng.normal(size=(6, 3)))
    f = lambda: (batch_norm(x, st_, training=training) * w).sum()
    params = [x, st_.gamma, st_.beta]
    for p, g in zip(params, analytic_grads(f, params)):
        assert relative_error(g, numeric_grad(f, p)) < 1e-3


def test_backward_linear_and_quadratic():
    p = Tensor(np.array([[1.0, -2.0], [0.5, 3.0]]), requires_grad=True)
    (g,) = analytic_grads(lambda: p.sum(), [p])
    np.testing.assert_array_equal(g, np.ones((2, 2)))
    (g,) = analytic_grads(lambda: (p * p).sum(), [p])
    np.testing.assert_array_equal(g, 2 * p.data)


def test_backward_rejects_non_scalar_loss():
    p = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        out = p * 2.0
    with pytest.raises(TapeError):
        tape.backward(out)


def test_detached_tensor_gets_no_gradient():
    p = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        q = p.detach()
        q.requires_grad = False
        loss = (p * q).sum()
    tape.backward(loss)
    assert q.grad is None
    np.testing.assert_array_equal(p.grad, np.ones(3))


def test_gradient_shapes_match_values():
    rng = np.random.default_rng(4)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4,)), requires_grad=True)
    with Tape() as tape:
        loss = nx_.log_softmax(a + b, axis=1).sum()
    grads = tape.backward(loss)
    for tid, g in grads.items():
        assert g.shape == tape._shapes[tid]
    assert a.grad.shape == a.shape and b.grad.shape == b.shape


def _composite(rng, kinks=True):
    """Random expression touching every primitive."""
    a = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    c = Tensor(rng.uniform(0.5, 2.0, size=(3,)), requires_grad=True)
    ids = rng.integers(0, 3, size=5)
    idx = rng.integers(0, 5, size=7)

    def f():
        h = nx_.matmul(a, b)
        h = nx_.sigmoid(h) * c + nx_.softplus(h) - nx_.relu(h if kinks else h * h) * 0.3
        h = nx_.gather_rows(h, idx)
        s = nx_.segment_sum(h, idx % 3, 3)
        s = nx_.concat([s, nx_.exp(s * 0.1)], axis=1)
        r = nx_.sqrt((s * s).sum(axis=1, keepdims=True) + 1.0)
        out = nx_.log_softmax(s / r, axis=1).mean() + nx_.log(c).sum()
        return out + nx_.transpose(nx_.reshape(h, (21,)).reshape(7, 3)).mean() + 0 * ids.sum()

    return f, [a, b, c]


@pytest.mark.parametrize("seed", range(5))
def test_composite_gradients_smooth(seed):
    f, params = _composite(np.random.default_rng(seed), kinks=False)
    for p, g in zip(params, analytic_grads(f, params)):
        assert relative_error(g, numeric_grad(f, p, h=1e-3)) < 1e-3


@pytest.mark.parametrize("seed", range(5))
def test_composite_gradients_with_relu(seed):
    # a 1e-3 step can straddle a relu kink; 1e-5 keeps every probe on one side
    f, params = _composite(np.random.default_rng(seed))
    for p, g in zip(params, analytic_grads(f, params)):
        assert relative_error(g, numeric_grad(f, p, h=1e-5)) < 1e-3


def test_backward_is_deterministic():
    f1, p1 = _composite(np.random.default_rng(7))
    f2, p2 = _composite(np.random.default_rng(7))
    for g1, g2 in zip(analytic_grads(f1, p1), analytic_grads(f2, p2)):
        assert g1.tobytes() == g2.tobytes()


def test_adam_zero_gradient_is_identity():
    p = Tensor(np.array([1.0, -2.0, 3.0]))
    before = p.data.copy()
    state = AdamState()
    for _ in range(5):
        adam_step([p], [np.zeros(3)], state)
    np.testing.assert_array_equal(p.data, before)
    assert state.step == 5


def test_adam_first_step_is_lr_times_sign():
    # closed form: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    g = np.array([0.3, -4.0, 1e-3, -2e-2], np.float32)
    p = Tensor(np.zeros(4))
    adam_step([p], [g], AdamState(lr=1e-3))
    expected = -1e-3 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(p.data, expected, rtol=1e-4)
    np.testing.assert_allclose(np.abs(p.data), 1e-3, rtol=1e-4)


def test_adam_converges_on_quadratic():
    x = Tensor([1.0], requires_grad=True)
    opt = Adam([x], lr=0.01)
    for _ in range(200):
        with Tape() as tape:
            loss = (x * x).sum()
        tape.backward(loss)
        opt.step()
    assert abs(x.item()) < 0.1


def test_adam_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_step([Tensor(np.zeros(3))], [np.zeros(2)], AdamState())
