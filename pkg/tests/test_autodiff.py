import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from structnoise.autodiff import (
    Adam,
    AdamState,
    BatchNormState,
    NonFiniteError,
    Tensor,
    adam_step,
    affine,
    batchnorm,
    gradient_check,
    load_checkpoint,
    mul,
    neighbor_sum,
    no_grad,
    parameter,
    relu,
    save_checkpoint,
    softmax_cross_entropy,
    total,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def matrices(rows=st.integers(1, 6), cols=st.integers(1, 6)):
    return st.tuples(rows, cols).flatmap(lambda s: hnp.arrays(np.float64, s, elements=finite))


def weighted_sum(out: Tensor, seed: int = 0) -> Tensor:
    return total(mul(out, Tensor(np.random.default_rng(seed).normal(size=out.shape))))


# ----------------------------------------------------------------- affine


def test_affine_example():
    X = Tensor([[1.0, 2.0]])
    W = Tensor([[1.0, 0.0, -1.0], [2.0, 1.0, 0.5]])
    b = Tensor([[0.5, -0.5, 0.0]])
    np.testing.assert_allclose(affine(X, W, b).data, [[5.5, 1.5, 0.0]])


def test_affine_bias_broadcast_and_gradients():
    X = parameter(np.ones((3, 2)))
    W = parameter(np.array([[1.0], [2.0]]))
    b = parameter(np.array([[10.0]]))
    out = affine(X, W, b)
    np.testing.assert_allclose(out.data, [[13.0]] * 3)
    total(out).backward()
    np.testing.assert_allclose(b.grad, [[3.0]])
    np.testing.assert_allclose(W.grad, [[3.0], [3.0]])
    np.testing.assert_allclose(X.grad, [[1.0, 2.0]] * 3)


def test_affine_shape_errors():
    with pytest.raises(ValueError):
        affine(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))), Tensor(np.ones((1, 2))))
    with pytest.raises(ValueError):
        affine(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_affine_matches_loop_oracle(n, d, k, seed):
    rng = np.random.default_rng(seed)
    x, w, b = rng.normal(size=(n, d)), rng.normal(size=(d, k)), rng.normal(size=(1, k))
    expected = np.zeros((n, k))
    for i in range(n):
        for j in range(k):
            expected[i, j] = b[0, j] + sum(x[i, t] * w[t, j] for t in range(d))
    np.testing.assert_allclose(affine(Tensor(x), Tensor(w), Tensor(b)).data, expected, rtol=1e-12, atol=1e-12)


def test_affine_gradient_check():
    rng = np.random.default_rng(0)
    X, W, b = (parameter(rng.normal(size=s)) for s in [(5, 3), (3, 4), (1, 4)])
    assert gradient_check(lambda: weighted_sum(affine(X, W, b)), [X, W, b]) < 1e-6


# ------------------------------------------------------------------- relu


def test_relu_example_and_gradient():
    X = parameter([[-1.0, 0.0, 2.0]])
    out = relu(X)
    np.testing.assert_array_equal(out.data, [[0.0, 0.0, 2.0]])
    total(out).backward()
    np.testing.assert_array_equal(X.grad, [[0.0, 0.0, 1.0]])


@given(matrices())
def test_relu_properties(x):
    out = relu(Tensor(x)).data
    assert np.all(out >= 0)
    np.testing.assert_array_equal(relu(Tensor(out)).data, out)
    np.testing.assert_array_equal(out, np.maximum(x, 0))


def test_relu_gradient_check_away_from_kink():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(6, 4))
    x[np.abs(x) < 0.05] = 0.5
    X = parameter(x)
    assert gradient_check(lambda: weighted_sum(relu(X)), [X]) < 1e-6


# ------------------------------------------------------------ neighbor sum


def test_neighbor_sum_path_example():
    adj = sp.csr_matrix(np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float))
    out = neighbor_sum(Tensor([[1.0], [2.0], [3.0]]), adj)
    np.testing.assert_allclose(out.data, [[3.0], [6.0], [5.0]])
    out = neighbor_sum(Tensor([[1.0], [2.0], [3.0]]), adj, eps_gin=0.5)
    np.testing.assert_allclose(out.data, [[3.5], [7.0], [6.5]])


def test_neighbor_sum_isolated_node_keeps_scaled_self():
    adj = sp.csr_matrix((2, 2))
    out = neighbor_sum(Tensor([[4.0, -1.0], [2.0, 0.0]]), adj, eps_gin=1.0)
    np.testing.assert_allclose(out.data, [[8.0, -2.0], [4.0, 0.0]])


def test_neighbor_sum_shape_error():
    with pytest.raises(ValueError):
        neighbor_sum(Tensor(np.ones((3, 1))), sp.csr_matrix((2, 2)))


@st.composite
def symmetric_adjacency(draw):
    n = draw(st.integers(1, 32))
    upper = draw(hnp.arrays(np.bool_, (n, n)))
    a = np.triu(upper, 1)
    return (a | a.T).astype(np.float64)


@settings(max_examples=100, deadline=None)
@given(symmetric_adjacency(), st.integers(1, 4), st.sampled_from([0.0, 0.25, -0.5]), st.integers(0, 2**32 - 1))
def test_neighbor_sum_dense_oracle_and_adjoint(A, width, eps, seed):
    rng = np.random.default_rng(seed)
    n = A.shape[0]
    H = parameter(rng.normal(size=(n, width)))
    dense = A + (1 + eps) * np.eye(n)
    out = neighbor_sum(H, sp.csr_matrix(A), eps)
    np.testing.assert_allclose(out.data, dense @ H.data, rtol=1e-12, atol=1e-12)
    G = rng.normal(size=(n, width))
    total(mul(out, Tensor(G))).backward()
    np.testing.assert_allclose(H.grad, dense.T @ G, rtol=1e-12, atol=1e-12)


# -------------------------------------------------------------- batchnorm


def test_batchnorm_two_values():
    bn = BatchNormState.create(1)
    out = batchnorm(Tensor([[1.0], [3.0]]), bn, training=True)
    np.testing.assert_allclose(out.data[:, 0], [-1 / math.sqrt(1 + 1e-5), 1 / math.sqrt(1 + 1e-5)])
    np.testing.assert_allclose(out.data[:, 0], [-0.999995, 0.999995], atol=1e-8)
    # running statistics: mean 2, unbiased variance 2
    np.testing.assert_allclose(bn.running_mean, [0.2])
    np.testing.assert_allclose(bn.running_var, [0.9 + 0.1 * 2.0])


def test_batchnorm_zero_gamma_gives_beta():
    bn = BatchNormState.create(3)
    bn.gamma.data = np.zeros((1, 3))
    bn.beta.data = np.array([[1.0, -2.0, 0.5]])
    out = batchnorm(Tensor(np.random.default_rng(0).normal(size=(5, 3))), bn, training=True)
    np.testing.assert_allclose(out.data, np.tile(bn.beta.data, (5, 1)))


def test_batchnorm_needs_two_rows_in_training():
    with pytest.raises(ValueError):
        batchnorm(Tensor([[1.0, 2.0]]), BatchNormState.create(2), training=True)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 20), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_batchnorm_output_moments(n, d, seed):
    x = np.random.default_rng(seed).normal(scale=3.0, size=(n, d)) + 5.0
    out = batchnorm(Tensor(x), BatchNormState.create(d), training=True).data
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-9)
    var = x.var(axis=0)
    np.testing.assert_allclose(out.var(axis=0), var / (var + 1e-5), rtol=1e-9)


def test_batchnorm_gradient_check_training():
    rng = np.random.default_rng(2)
    X = parameter(rng.normal(size=(8, 5)))
    bn = BatchNormState.create(5)
    bn.gamma.data = rng.uniform(0.5, 1.5, (1, 5))
    bn.beta.data = rng.normal(size=(1, 5))
    err = gradient_check(lambda: weighted_sum(batchnorm(X, bn, True)), [X, bn.gamma, bn.beta])
    assert err < 1e-6


def test_batchnorm_eval_uses_running_statistics():
    bn = BatchNormState.create(2)
    bn.running_mean = np.array([1.0, -1.0])
    bn.running_var = np.array([4.0, 0.25])
    bn.gamma.data = np.array([[2.0, 1.0]])
    bn.beta.data = np.array([[0.0, 3.0]])
    x = np.array([[3.0, 0.0]])
    out = batchnorm(Tensor(x), bn, training=False).data
    expected = 2.0 * (3.0 - 1.0) / np.sqrt(4.0 + 1e-5), 3.0 + (0.0 + 1.0) / np.sqrt(0.25 + 1e-5)
    np.testing.assert_allclose(out[0], expected)
    before = bn.running_mean.copy()
    batchnorm(Tensor(x), bn, training=False)
    np.testing.assert_array_equal(bn.running_mean, before)
    X = parameter(np.random.default_rng(3).normal(size=(4, 2)))
    assert gradient_check(lambda: weighted_sum(batchnorm(X, bn, False)), [X, bn.gamma, bn.beta]) < 1e-6


# ------------------------------------------------------ cross entropy


def test_cross_entropy_uniform_logits():
    loss = softmax_cross_entropy(Tensor(np.zeros((4, 6))), [0, 1, 2, 5])
    assert loss.shape == (1, 1)
    assert loss.item() == pytest.approx(math.log(6), abs=1e-12)


def test_cross_entropy_large_margin_is_stable():
    logits = np.array([[1000.0, 0.0, -1000.0]])
    assert softmax_cross_entropy(Tensor(logits), [0]).item() == pytest.approx(0.0, abs=1e-12)
    assert softmax_cross_entropy(Tensor(logits), [1]).item() == pytest.approx(1000.0)


def test_cross_entropy_mask_and_gradient():
    rng = np.random.default_rng(4)
    Z = parameter(rng.normal(size=(7, 6)))
    t = rng.integers(0, 6, 7)
    mask = [1, 4, 5]
    loss = softmax_cross_entropy(Z, t, mask)
    loss.backward()
    unmasked = [i for i in range(7) if i not in mask]
    np.testing.assert_array_equal(Z.grad[unmasked], 0.0)
    np.testing.assert_allclose(Z.grad.sum(axis=1), 0.0, atol=1e-12)
    assert gradient_check(lambda: softmax_cross_entropy(Z, t, mask), [Z]) < 1e-6


def test_cross_entropy_rejects_bad_inputs():
    with pytest.raises(ValueError):
        softmax_cross_entropy(Tensor(np.zeros((2, 3))), [0, 1], mask=[])
    with pytest.raises(ValueError):
        softmax_cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])
    with pytest.raises(ValueError):
        softmax_cross_entropy(Tensor(np.zeros((2, 3))), [0])


# ------------------------------------------------------------------ adam


def test_adam_first_step_moves_by_lr():
    (p,) = adam_step([np.array([1.0, -2.0])], [np.array([0.3, -5.0])], AdamState(lr=0.01))
    np.testing.assert_allclose(p, [1.0 - 0.01, -2.0 + 0.01], atol=1e-9)


def test_adam_zero_gradient_is_a_no_op():
    state = AdamState(lr=0.01)
    (p,) = adam_step([np.array([[0.5]])], [np.zeros((1, 1))], state)
    np.testing.assert_array_equal(p, [[0.5]])
    assert state.step_count == 1


def test_adam_weight_decay_pulls_towards_zero():
    (p,) = adam_step([np.array([2.0])], [np.zeros(1)], AdamState(lr=0.01, weight_decay=5e-4))
    assert p[0] == pytest.approx(1.99, abs=1e-6)


def test_adam_matches_reference_recursion():
    rng = np.random.default_rng(5)
    grads = rng.normal(size=(6, 3))
    state = AdamState(lr=0.05, weight_decay=0.1)
    p = np.array([0.5, -1.0, 2.0])
    ref, m, v = p.copy(), np.zeros(3), np.zeros(3)
    for t, g in enumerate(grads, 1):
        (p,) = adam_step([p], [g], state)
        g = g + 0.1 * ref
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.05 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        np.testing.assert_allclose(p, ref, rtol=1e-12)


def test_adam_minimizes_a_quadratic():
    x = parameter([[3.0, -4.0]])
    opt = Adam([x], lr=0.1)
    for _ in range(500):
        opt.zero_grad()
        total(mul(x, x)).backward()
        opt.step()
    np.testing.assert_allclose(x.data, 0.0, atol=1e-2)


# ---------------------------------------------------- engine behaviour


def test_gradient_check_on_square():
    x = parameter([[3.0]])
    assert gradient_check(lambda: total(mul(x, x)), [x]) < 1e-8
    x.grad = None
    total(mul(x, x)).backward()
    assert x.grad[0, 0] == pytest.approx(6.0)


def test_gradients_accumulate_over_shared_inputs():
    x = parameter([[2.0]])
    y = mul(x, x)
    total(mul(y, x)).backward()
    assert x.grad[0, 0] == pytest.approx(12.0)


def test_backward_requires_scalar():
    with pytest.raises(ValueError):
        relu(parameter(np.ones((2, 2)))).backward()


def test_non_finite_loss_raises():
    with pytest.raises(NonFiniteError):
        parameter([[np.nan]])
    # overflow inside the graph surfaces at backward time
    x = parameter([[1e200]])
    with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
        total(mul(x, x)).backward()


def test_no_grad_records_nothing():
    x = parameter([[1.0, 2.0]])
    with no_grad():
        y = relu(x)
    assert not y.requires_grad
    z = relu(x)
    assert z.requires_grad


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    state = {"a.W": rng.normal(size=(3, 2)), "a.b": rng.normal(size=(1, 2)), "bn.running_var": rng.random(4)}
    path = tmp_path / "model.npz"
    save_checkpoint(state, path)
    loaded = load_checkpoint(path)
    assert loaded.keys() == state.keys()
    for k in state:
        assert loaded[k].tobytes() == state[k].tobytes()


def test_training_step_is_deterministic():
    def run():
        rng = np.random.default_rng(9)
        X = Tensor(rng.normal(size=(10, 3)))
        W, b = parameter(rng.normal(size=(3, 4))), parameter(np.zeros((1, 4)))
        bn = BatchNormState.create(4)
        t = rng.integers(0, 4, 10)
        opt = Adam([W, b, bn.gamma, bn.beta], lr=0.01, weight_decay=5e-4)
        for _ in range(5):
            opt.zero_grad()
            softmax_cross_entropy(batchnorm(relu(affine(X, W, b)), bn, True), t).backward()
            opt.step()
        return W.data.tobytes() + bn.running_var.tobytes()

    assert run() == run()
