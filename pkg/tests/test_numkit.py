import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from egocf.errors import ConsistencyError, DegenerateInputError, DimensionError
from egocf.numkit import (AdamState, ParamStore, adam_step, attention,
                          cosine_similarity, cosine_similarity_backward,
                          cross_entropy, cross_entropy_backward, grad_check,
                          matmul, matmul_backward, softmax, softmax_backward)

finite_floats = st.floats(min_value=-50, max_value=50, allow_nan=False)


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------


def test_matmul_identity():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(a, np.eye(2)), a)


def test_matmul_hand_case():
    # [[1,2],[3,4]] @ [[1],[1]]: rows sum -> [[3],[7]]
    out = matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[1.0], [1.0]]))
    assert np.array_equal(out, np.array([[3.0], [7.0]]))


def test_matmul_zero_annihilates():
    z = np.zeros((3, 4))
    b = np.arange(20.0).reshape(4, 5)
    assert np.array_equal(matmul(z, b), np.zeros((3, 5)))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
        matmul(np.zeros((2, 3)), np.zeros((2, 2)))


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    r = rng.normal(size=(3, 2))  # loss = sum(A@B * R)
    da, db = matmul_backward(r, a, b)
    eps = 1e-6
    for arr, g in ((a, da), (b, db)):
        flat, gflat = arr.ravel(), g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(np.sum(a @ b * r))
            flat[i] = orig - eps
            lo = float(np.sum(a @ b * r))
            flat[i] = orig
            assert math.isclose(gflat[i], (hi - lo) / (2 * eps), rel_tol=1e-6, abs_tol=1e-9)


# ---------------------------------------------------------------------------
# softmax
# ---------------------------------------------------------------------------


def test_softmax_uniform_on_zeros():
    np.testing.assert_allclose(softmax(np.zeros(3)), np.full(3, 1 / 3), atol=1e-15)


def test_softmax_hand_case():
    # exp([ln1, ln2, ln3]) = [1,2,3] -> normalize -> [1/6, 1/3, 1/2]
    x = np.log(np.array([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(softmax(x), [1 / 6, 1 / 3, 1 / 2], atol=1e-15)


@given(arrays(np.float64, st.integers(1, 6), elements=finite_floats),
       st.floats(min_value=-30, max_value=30, allow_nan=False))
def test_softmax_shift_invariance(x, c):
    np.testing.assert_allclose(softmax(x + c), softmax(x), atol=1e-12)


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 5)), elements=finite_floats))
def test_softmax_rows_sum_to_one(x):
    out = softmax(x, axis=-1)
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)


def test_softmax_bad_axis():
    with pytest.raises(DimensionError):
        softmax(np.zeros(3), axis=2)


def test_softmax_backward_matches_finite_differences():
    rng = np.random.default_rng(1)
    x = rng.normal(size=5)
    r = rng.normal(size=5)
    out = softmax(x)
    dx = softmax_backward(r, out)
    eps = 1e-6
    for i in range(5):
        e = np.zeros(5)
        e[i] = eps
        num = (np.sum(softmax(x + e) * r) - np.sum(softmax(x - e) * r)) / (2 * eps)
        assert math.isclose(dx[i], num, rel_tol=1e-6, abs_tol=1e-9)


# ---------------------------------------------------------------------------
# cross entropy
# ---------------------------------------------------------------------------


def test_cross_entropy_uniform():
    probs = np.full(4, 0.25)
    for idx in range(4):
        gt = np.zeros(4)
        gt[idx] = 1.0
        assert math.isclose(cross_entropy(probs, gt), math.log(4), rel_tol=1e-12)


def test_cross_entropy_perfect_prediction():
    gt = np.array([0.0, 1.0, 0.0])
    assert cross_entropy(gt, gt) == 0.0


def test_cross_entropy_hand_case():
    gt = np.array([1.0, 0.0, 0.0])
    assert math.isclose(cross_entropy(np.array([0.5, 0.25, 0.25]), gt), math.log(2), rel_tol=1e-12)


def test_cross_entropy_length_mismatch():
    with pytest.raises(DimensionError):
        cross_entropy(np.full(4, 0.25), np.array([1.0, 0.0]))


def test_cross_entropy_rejects_non_distribution():
    with pytest.raises(DegenerateInputError):
        cross_entropy(np.array([0.5, 0.6]), np.array([1.0, 0.0]))


@given(st.integers(2, 8), st.integers(0, 7), st.data())
def test_cross_entropy_nonnegative_zero_iff_onehot(k, idx, data):
    idx = idx % k
    raw = np.array(data.draw(st.lists(st.floats(0.01, 10), min_size=k, max_size=k)))
    probs = raw / raw.sum()
    gt = np.zeros(k)
    gt[idx] = 1.0
    value = cross_entropy(probs, gt)
    assert value >= 0.0
    assert (value == 0.0) == (probs[idx] == 1.0)


def test_cross_entropy_backward_zero_when_clamped():
    probs = np.array([1.0, 0.0, 0.0])
    gt = np.array([0.0, 1.0, 0.0])
    d = cross_entropy_backward(probs, gt)
    assert np.array_equal(d, np.zeros(3))


# ---------------------------------------------------------------------------
# cosine similarity
# ---------------------------------------------------------------------------


def test_cosine_self_similarity():
    p = np.array([0.3, -2.0, 5.0])
    assert math.isclose(cosine_similarity(p, p), 1.0, rel_tol=1e-12)


def test_cosine_orthogonal():
    assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0


def test_cosine_hand_case():
    # (3*4 + 4*3) / (5*5) = 24/25
    assert math.isclose(cosine_similarity(np.array([3.0, 4.0]), np.array([4.0, 3.0])), 0.96, rel_tol=1e-12)


def test_cosine_zero_norm_rejected():
    with pytest.raises(DegenerateInputError):
        cosine_similarity(np.zeros(3), np.ones(3))


@given(arrays(np.float64, 4, elements=st.floats(-10, 10)),
       arrays(np.float64, 4, elements=st.floats(-10, 10)),
       st.floats(0.1, 100), st.floats(0.1, 100))
def test_cosine_symmetric_and_scale_invariant(p, q, a, b):
    if np.linalg.norm(p) < 1e-6 or np.linalg.norm(q) < 1e-6:
        return
    s = cosine_similarity(p, q)
    assert -1.0 - 1e-12 <= s <= 1.0 + 1e-12
    assert math.isclose(s, cosine_similarity(q, p), rel_tol=1e-12, abs_tol=1e-12)
    assert math.isclose(s, cosine_similarity(a * p, b * q), rel_tol=1e-9, abs_tol=1e-9)


def test_cosine_backward_matches_finite_differences():
    rng = np.random.default_rng(2)
    p, q = rng.normal(size=4) + 2, rng.normal(size=4)
    dp, dq = cosine_similarity_backward(p, q)
    eps = 1e-7
    for vec, grad in ((p, dp), (q, dq)):
        for i in range(4):
            orig = vec[i]
            vec[i] = orig + eps
            hi = cosine_similarity(p, q)
            vec[i] = orig - eps
            lo = cosine_similarity(p, q)
            vec[i] = orig
            assert math.isclose(grad[i], (hi - lo) / (2 * eps), rel_tol=1e-5, abs_tol=1e-8)


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------


def test_attention_single_key_returns_value():
    rng = np.random.default_rng(3)
    q = rng.normal(size=(4, 6))
    k = rng.normal(size=(1, 6))
    v = rng.normal(size=(1, 6))
    out = attention(q, k, v)
    for row in out:
        np.testing.assert_allclose(row, v[0], atol=1e-12)


def test_attention_identical_keys_give_mean_of_values():
    rng = np.random.default_rng(4)
    q = rng.normal(size=(2, 5))
    k = np.tile(rng.normal(size=(1, 5)), (3, 1))
    v = rng.normal(size=(3, 5))
    np.testing.assert_allclose(attention(q, k, v), np.tile(v.mean(axis=0), (2, 1)), atol=1e-12)


def test_attention_numeric_case_matches_direct_evaluation():
    # independent scalar evaluation of softmax(QK^T/sqrt(d)) V
    q = np.array([[1.0, 0.0], [0.5, -1.0]])
    k = np.array([[1.0, 1.0], [0.0, 2.0], [-1.0, 0.5]])
    v = np.array([[2.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    d = 2
    expected = np.zeros((2, 2))
    for i in range(2):
        scores = [sum(q[i][t] * k[j][t] for t in range(d)) / math.sqrt(d) for j in range(3)]
        m = max(scores)
        exps = [math.exp(s - m) for s in scores]
        total = sum(exps)
        weights = [e / total for e in exps]
        for t in range(d):
            expected[i][t] = sum(weights[j] * v[j][t] for j in range(3))
    np.testing.assert_allclose(attention(q, k, v), expected, atol=1e-12)


@given(st.integers(1, 4), st.integers(1, 5), st.data())
@settings(max_examples=30)
def test_attention_rows_are_convex_combinations(a, b, data):
    d = 3
    q = np.array(data.draw(st.lists(st.floats(-5, 5), min_size=a * d, max_size=a * d))).reshape(a, d)
    k = np.array(data.draw(st.lists(st.floats(-5, 5), min_size=b * d, max_size=b * d))).reshape(b, d)
    v = np.array(data.draw(st.lists(st.floats(-5, 5), min_size=b * d, max_size=b * d))).reshape(b, d)
    out = attention(q, k, v)
    lo, hi = v.min(axis=0), v.max(axis=0)
    assert np.all(out >= lo - 1e-9) and np.all(out <= hi + 1e-9)


def test_attention_dimension_errors():
    with pytest.raises(DimensionError):
        attention(np.zeros((2, 3)), np.zeros((2, 4)), np.zeros((2, 4)))
    with pytest.raises(DimensionError):
        attention(np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((3, 3)))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def _scalar_store(value: float) -> ParamStore:
    store = ParamStore()
    store.add("x", np.array([value]))
    return store


def test_adam_zero_gradient_keeps_parameters():
    store = _scalar_store(1.5)
    store.zero_grads()
    state = AdamState.init(store)
    adam_step(store, state, lr=1e-3)
    assert store.params["x"][0] == 1.5
    assert state.t == 1


def test_adam_first_step_closed_form():
    # m_hat = g, v_hat = g^2 -> delta = -lr * g / (|g| + eps)
    g, lr, eps = 0.5, 1e-3, 1e-8
    store = _scalar_store(0.0)
    store.add_grad("x", np.array([g]))
    state = AdamState.init(store)
    adam_step(store, state, lr=lr, eps=eps)
    expected = -lr * g / (abs(g) + eps)
    assert math.isclose(store.params["x"][0], expected, rel_tol=1e-12)
    assert math.isclose(store.params["x"][0], -1e-3, rel_tol=1e-6)


def test_adam_two_identical_steps_bias_correction():
    # after two steps with constant g: m = (1 - b1^2) g, so m / (1 - b1^2) = g
    g, b1, b2 = 0.7, 0.9, 0.999
    store = _scalar_store(0.0)
    state = AdamState.init(store)
    for _ in range(2):
        store.clear_grads()
        store.add_grad("x", np.array([g]))
        adam_step(store, state, lr=1e-3, beta1=b1, beta2=b2)
    assert state.t == 2
    m_hat = state.m["x"][0] / (1 - b1**2)
    v_hat = state.v["x"][0] / (1 - b2**2)
    assert math.isclose(m_hat, g, rel_tol=1e-12)
    assert math.isclose(v_hat, g * g, rel_tol=1e-12)


def test_adam_missing_gradient_is_consistency_error():
    store = _scalar_store(0.0)
    state = AdamState.init(store)
    with pytest.raises(ConsistencyError):
        adam_step(store, state, lr=1e-3)


def test_adam_weight_decay_coupled_into_gradient():
    # with g = 0 and decay wd, the effective gradient is wd * p
    p0, wd, b1 = 2.0, 0.1, 0.9
    store = _scalar_store(p0)
    store.zero_grads()
    state = AdamState.init(store)
    adam_step(store, state, lr=1e-3, beta1=b1, weight_decay=wd)
    assert math.isclose(state.m["x"][0], (1 - b1) * wd * p0, rel_tol=1e-12)


def test_adam_second_moment_nonnegative():
    rng = np.random.default_rng(5)
    store = ParamStore()
    store.add("w", rng.normal(size=(4, 3)))
    state = AdamState.init(store)
    for _ in range(5):
        store.clear_grads()
        store.add_grad("w", rng.normal(size=(4, 3)))
        adam_step(store, state, lr=1e-2)
        assert np.all(state.v["w"] >= 0)


# ---------------------------------------------------------------------------
# ParamStore
# ---------------------------------------------------------------------------


def test_param_store_rejects_duplicate_names():
    store = ParamStore()
    store.add("w", np.zeros(2))
    with pytest.raises(ConsistencyError):
        store.add("w", np.zeros(2))


def test_param_store_grad_shape_checked():
    store = ParamStore()
    store.add("w", np.zeros((2, 2)))
    with pytest.raises(DimensionError):
        store.add_grad("w", np.zeros(3))


def test_param_store_grads_accumulate():
    store = ParamStore()
    store.add("w", np.zeros(2))
    store.add_grad("w", np.ones(2))
    store.add_grad("w", np.ones(2))
    assert np.array_equal(store.grads["w"], np.full(2, 2.0))


# ---------------------------------------------------------------------------
# grad_check
# ---------------------------------------------------------------------------


def test_grad_check_quadratic():
    store = ParamStore()
    x = store.add("x", np.random.default_rng(6).normal(size=12))
    store.clear_grads()
    store.add_grad("x", x.copy())  # d/dx of 0.5 ||x||^2 is exactly x
    err = grad_check(lambda: 0.5 * float(x @ x), store, eps=1e-5)
    assert err <= 1e-8


def test_grad_check_linear():
    rng = np.random.default_rng(7)
    c = rng.normal(size=8)
    store = ParamStore()
    x = store.add("x", rng.normal(size=8))
    store.clear_grads()
    store.add_grad("x", c.copy())
    err = grad_check(lambda: float(c @ x), store, eps=1e-5)
    assert err <= 1e-9


def test_grad_check_propagates_non_finite_loss():
    store = ParamStore()
    x = store.add("x", np.array([0.5]))
    store.clear_grads()
    store.add_grad("x", np.array([1.0]))
    with pytest.raises(FloatingPointError):
        grad_check(lambda: float("nan") * float(x[0]), store)


def test_grad_check_detects_wrong_gradient():
    store = ParamStore()
    x = store.add("x", np.array([1.0, 2.0]))
    store.clear_grads()
    store.add_grad("x", x + 1.0)  # deliberately wrong for 0.5||x||^2
    err = grad_check(lambda: 0.5 * float(x @ x), store, eps=1e-5)
    assert err > 1e-1
