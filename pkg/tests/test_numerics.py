import numpy as np
import pytest

from sdc.numerics import (
    entropy,
    finite_diff_check,
    l2_normalize,
    l2_normalize_rows,
    sigmoid,
    softmax,
)


def test_softmax_symmetry():
    np.testing.assert_allclose(softmax([0.0, 0.0]), [0.5, 0.5], atol=1e-15)


def test_softmax_large_logits_no_overflow():
    out = softmax([1000.0, 0.0])
    assert np.all(np.isfinite(out))
    assert out[0] > 1 - 1e-12
    assert out[1] < 1e-12


def test_softmax_direct_evaluation():
    # Oracle: unshifted definition evaluated directly on a small input.
    v = np.array([1.0, 2.0, 3.0])
    expected = np.exp(v) / np.exp(v).sum()
    np.testing.assert_allclose(softmax(v), expected, atol=1e-15)
    np.testing.assert_allclose(softmax(v), [0.09003057, 0.24472847, 0.66524096], atol=1e-8)


def test_softmax_shift_invariance():
    rng = np.random.default_rng(0)
    for _ in range(50):
        v = rng.normal(size=rng.integers(2, 12))
        c = rng.normal() * 100
        np.testing.assert_allclose(softmax(v + c), softmax(v), atol=1e-12)


def test_softmax_sums_to_one():
    rng = np.random.default_rng(1)
    for _ in range(50):
        v = rng.normal(size=8) * 10
        p = softmax(v)
        assert np.all(p > 0)
        assert abs(p.sum() - 1.0) <= 1e-12


def test_softmax_rejects_empty_and_nonfinite():
    with pytest.raises(ValueError):
        softmax([])
    with pytest.raises(ValueError):
        softmax([np.nan, 0.0])


def test_entropy_one_hot_is_zero():
    assert entropy([0.0, 1.0, 0.0]) == 0.0


@pytest.mark.parametrize("m", [2, 3, 5, 17])
def test_entropy_uniform_is_log_m(m):
    assert entropy(np.full(m, 1.0 / m)) == pytest.approx(np.log(m), abs=1e-12)


def test_entropy_direct_evaluation():
    expected = -(0.25 * np.log(0.25) + 0.75 * np.log(0.75))
    assert entropy([0.25, 0.75]) == pytest.approx(expected, abs=1e-15)
    assert entropy([0.25, 0.75]) == pytest.approx(0.5623, abs=1e-4)


def test_entropy_rejects_bad_input():
    with pytest.raises(ValueError):
        entropy([-0.1, 1.1])
    with pytest.raises(ValueError):
        entropy([0.2, 0.2])
    with pytest.raises(ValueError):
        entropy([])


def test_entropy_maximized_by_uniform():
    rng = np.random.default_rng(2)
    for m in (3, 6):
        uniform_h = entropy(np.full(m, 1.0 / m))
        for _ in range(100):
            p = rng.dirichlet(np.ones(m))
            assert entropy(p) <= uniform_h + 1e-12


def test_entropy_rowwise():
    p = np.array([[0.5, 0.5], [1.0, 0.0]])
    np.testing.assert_allclose(entropy(p), [np.log(2), 0.0], atol=1e-15)


def test_l2_normalize_basic():
    np.testing.assert_allclose(l2_normalize([3.0, 4.0]), [0.6, 0.8], atol=1e-15)


def test_l2_normalize_unit_identity():
    v = np.array([1.0, 0.0, 0.0])
    np.testing.assert_allclose(l2_normalize(v), v, atol=1e-15)


def test_l2_normalize_properties():
    rng = np.random.default_rng(3)
    for _ in range(50):
        v = rng.normal(size=rng.integers(1, 10))
        if np.linalg.norm(v) == 0:
            continue
        u = l2_normalize(v)
        assert np.linalg.norm(u) == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(l2_normalize(u), u, atol=1e-12)


def test_l2_normalize_zero_vector():
    with pytest.raises(ValueError):
        l2_normalize([0.0, 0.0])
    with pytest.raises(ValueError):
        l2_normalize_rows(np.array([[1.0, 0.0], [0.0, 0.0]]))


def test_sigmoid_matches_definition():
    xs = np.array([-700.0, -2.0, 0.0, 2.0, 700.0])
    out = sigmoid(xs)
    assert np.all(np.isfinite(out))
    assert out[2] == pytest.approx(0.5)
    assert out[1] == pytest.approx(1.0 / (1.0 + np.exp(2.0)), abs=1e-15)


def test_finite_diff_quadratic():
    def loss(x):
        return 0.5 * float(x @ x), x.copy()

    rng = np.random.default_rng(4)
    for _ in range(10):
        x = rng.normal(size=6)
        assert finite_diff_check(loss, x, epsilon=1e-5) < 1e-8


def test_finite_diff_linear_classifier_ce():
    # CE of a linear classifier, gradient derived by hand.
    rng = np.random.default_rng(5)
    X = rng.normal(size=(7, 3))
    y = rng.integers(0, 4, size=7)

    def loss(w_flat):
        W = w_flat.reshape(4, 3)
        logits = X @ W.T
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1))
        value = float(np.mean(log_z - shifted[np.arange(7), y]))
        p = np.exp(shifted - log_z[:, None])
        p[np.arange(7), y] -= 1.0
        grad = (p / 7).T @ X
        return value, grad.ravel()

    w = rng.normal(size=12)
    assert finite_diff_check(loss, w, epsilon=1e-5) < 1e-4


def test_finite_diff_constant_loss():
    def loss(x):
        return 1.0, np.zeros_like(x)

    assert finite_diff_check(loss, np.ones(4), epsilon=1e-5) == 0.0


def test_finite_diff_epsilon_bounds():
    def loss(x):
        return 0.0, np.zeros_like(x)

    with pytest.raises(ValueError):
        finite_diff_check(loss, np.ones(2), epsilon=1e-2)
    with pytest.raises(ValueError):
        finite_diff_check(loss, np.ones(2), epsilon=1e-8)


def test_finite_diff_nonfinite_loss():
    def loss(x):
        return float("nan"), np.zeros_like(x)

    with pytest.raises(ValueError):
        finite_diff_check(loss, np.ones(2), epsilon=1e-5)
