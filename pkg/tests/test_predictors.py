import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marginlab.core import Dataset, DomainError, StructuralError
from marginlab.predictors import (DegenerateInputError, HomogeneousMLP, LinearPredictor, frobenius_rebalance,
                                  load_params, normalized_margin, predictor_from_shapes, save_params)


def unit_mlp():
    return HomogeneousMLP([1, 1, 1]), np.array([1.0, 1.0])


def test_linear_forward_and_grad():
    lin = LinearPredictor(2)
    assert lin.forward([3.0, 4.0], [1.0, 0.0]) == 3.0
    np.testing.assert_array_equal(lin.grad_theta([3.0, 4.0], [0.5, -2.0]), [0.5, -2.0])
    assert lin.alpha == 1.0


def test_mlp_relu_kills_negative():
    mlp, theta = unit_mlp()
    assert mlp.forward(theta, [-2.0]) == 0.0
    assert mlp.forward(theta, [2.0]) == 2.0
    assert mlp.forward(2 * theta, [2.0]) == 8.0


def test_dimension_mismatch():
    with pytest.raises(StructuralError):
        LinearPredictor(2).forward([1.0, 2.0], [1.0])
    with pytest.raises(StructuralError):
        HomogeneousMLP([2, 3, 1]).forward(np.zeros(5), [1.0, 1.0])
    with pytest.raises(StructuralError):
        HomogeneousMLP([2, 3, 2])


def test_alpha_values():
    assert HomogeneousMLP([2, 4, 4, 1]).alpha == 3.0
    assert HomogeneousMLP([2, 4, 1], "square").alpha == 3.0
    assert HomogeneousMLP([2, 4, 4, 1], "square").alpha == 7.0


def test_positive_preactivations_match_linear_composition(rng):
    mlp = HomogeneousMLP([3, 4, 1])
    W1 = np.abs(rng.normal(size=(4, 3)))
    W2 = rng.normal(size=(1, 4))
    theta = mlp.flatten([W1, W2])
    x = np.abs(rng.normal(size=3)) + 0.1
    g = mlp.grad_theta(theta, x)
    expected = np.concatenate([np.outer(W2[0], x).ravel(), W1 @ x])
    np.testing.assert_allclose(g, expected, rtol=1e-14)


def _fd_grad(pred, theta, x, h=1e-6):
    return np.array([(pred.forward(theta + h * e, x) - pred.forward(theta - h * e, x)) / (2 * h)
                     for e in np.eye(theta.shape[0])])


@pytest.mark.parametrize("dims,act", [([3, 5, 1], "relu"), ([2, 4, 3, 1], "relu"), ([2, 3, 1], "square"),
                                      ([2, 3, 2, 1], "square")])
def test_mlp_gradient_fd(dims, act, rng):
    mlp = HomogeneousMLP(dims, act)
    done = 0
    while done < 10:
        theta = mlp.init(int(rng.integers(1 << 30)))
        x = rng.normal(size=dims[0])
        if min(np.min(np.abs(z)) for z in mlp.preactivations(theta, x[None, :])) < 1e-4:
            continue
        np.testing.assert_allclose(mlp.grad_theta(theta, x), _fd_grad(mlp, theta, x), rtol=1e-5, atol=1e-9)
        done += 1


def test_vjp_matches_sum_of_gradients(rng):
    mlp = HomogeneousMLP([2, 6, 1])
    theta = mlp.init(4)
    X = rng.normal(size=(5, 2))
    v = rng.normal(size=5)
    expected = sum(v[i] * mlp.grad_theta(theta, X[i]) for i in range(5))
    np.testing.assert_allclose(mlp.vjp(theta, X, v), expected, rtol=1e-12, atol=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.1, 10.0), st.sampled_from(["relu", "square"]), st.integers(1, 3))
def test_homogeneity(seed, c, act, depth):
    rng = np.random.default_rng(seed)
    mlp = HomogeneousMLP([2] + [3] * (depth - 1) + [1], act) if depth > 1 else LinearPredictor(2)
    theta = mlp.init(seed) if depth > 1 else rng.normal(size=2)
    x = rng.normal(size=2)
    f = mlp.forward(theta, x)
    assert abs(mlp.forward(c * theta, x) - c ** mlp.alpha * f) <= 1e-10 * max(1.0, abs(f)) * c ** mlp.alpha


def test_normalized_margin_examples():
    data = Dataset(np.array([[1.0, 0.0]]), np.array([1.0]))
    r = normalized_margin(LinearPredictor(2), [3.0, 4.0], data)
    assert r.gamma_tilde == pytest.approx(0.6)
    three = Dataset(np.array([[0.5], [0.2], [0.9]]), np.ones(3))
    r = normalized_margin(LinearPredictor(1), [1.0], three)
    assert r.gamma_tilde == pytest.approx(0.2) and r.argmin_index == 1
    ties = Dataset(np.array([[0.3], [0.3]]), np.ones(2))
    assert normalized_margin(LinearPredictor(1), [1.0], ties).argmin_index == 0
    with pytest.raises(DomainError):
        normalized_margin(LinearPredictor(2), [0.0, 0.0], data)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.01, 100.0))
def test_normalized_margin_scale_invariance(seed, c):
    rng = np.random.default_rng(seed)
    mlp = HomogeneousMLP([2, 4, 1])
    data = Dataset(rng.normal(size=(6, 2)), rng.choice([-1.0, 1.0], 6))
    theta = mlp.init(seed)
    a = normalized_margin(mlp, theta, data).gamma_tilde
    b = normalized_margin(mlp, c * theta, data).gamma_tilde
    assert b == pytest.approx(a, rel=1e-12, abs=1e-15)


def test_rebalance_example(rng):
    mlp = HomogeneousMLP([2, 3, 1])
    W1 = rng.normal(size=(3, 2))
    W2 = rng.normal(size=(1, 3))
    W1 *= 0.8 / np.linalg.norm(W1)
    W2 *= 0.6 / np.linalg.norm(W2)
    theta = mlp.flatten([W1, W2])
    out = frobenius_rebalance(mlp, theta)
    norms = [np.linalg.norm(W) for W in mlp.layers(out)]
    np.testing.assert_allclose(norms, [math.sqrt(0.48)] * 2, rtol=1e-12)
    assert max(norms) <= 1 / math.sqrt(2)
    X = rng.normal(size=(100, 2))
    np.testing.assert_allclose(mlp.outputs(out, X), mlp.outputs(theta, X), rtol=1e-12, atol=1e-15)


def test_rebalance_balanced_unchanged_and_idempotent(rng):
    mlp = HomogeneousMLP([2, 3, 3, 1])
    theta = mlp.init(7)
    theta /= np.linalg.norm(theta)
    once = frobenius_rebalance(mlp, theta)
    once_unit = once / np.linalg.norm(once)
    np.testing.assert_allclose(frobenius_rebalance(mlp, once_unit), once_unit, rtol=1e-12, atol=1e-15)
    for W in mlp.layers(once):
        assert np.linalg.norm(W) <= 1 / math.sqrt(3) + 1e-12


def test_rebalance_errors():
    mlp = HomogeneousMLP([1, 1, 1])
    with pytest.raises(DomainError):
        frobenius_rebalance(mlp, np.array([1.0, 1.0]))
    with pytest.raises(DegenerateInputError):
        frobenius_rebalance(mlp, np.array([1.0, 0.0]))
    with pytest.raises(DomainError):
        frobenius_rebalance(HomogeneousMLP([1, 1, 1], "square"), np.array([0.6, 0.8]))


def test_lipschitz_sanity(rng):
    mlp = HomogeneousMLP([3, 5, 4, 1])
    theta = mlp.init(3)
    prod = np.prod([np.linalg.norm(W) for W in mlp.layers(theta)])
    for _ in range(50):
        x, xp = rng.normal(size=3), rng.normal(size=3)
        assert abs(mlp.forward(theta, x) - mlp.forward(theta, xp)) <= prod * np.linalg.norm(x - xp) + 1e-12


def test_init_is_seeded():
    mlp = HomogeneousMLP([2, 8, 1])
    np.testing.assert_array_equal(mlp.init(5), mlp.init(5))
    assert not np.array_equal(mlp.init(5), mlp.init(6))
    np.testing.assert_array_equal(LinearPredictor(3).init(9), np.zeros(3))


def test_params_roundtrip(tmp_path):
    mlp = HomogeneousMLP([3, 4, 2, 1])
    theta = mlp.init(1) * math.pi
    save_params(tmp_path / "p.txt", mlp, theta)
    shapes, back = load_params(tmp_path / "p.txt")
    assert shapes == mlp.layer_shapes
    np.testing.assert_array_equal(back, theta)
    rebuilt = predictor_from_shapes(shapes)
    assert rebuilt.layer_dims == mlp.layer_dims
    save_params(tmp_path / "l.txt", LinearPredictor(2), np.array([0.1, 0.2]))
    shapes, back = load_params(tmp_path / "l.txt")
    assert isinstance(predictor_from_shapes(shapes), LinearPredictor)
