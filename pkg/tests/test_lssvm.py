"""LS-SVM 求解、one-vs-all 與閉式留一法"""

import numpy as np
import pytest

from app.errors import DimensionMismatchError
from app.kernels import gram
from app.lssvm import (
    HyperParams, argmax_labels, decision_residual, loo_scores, loo_scores_ova,
    predict_labels, train_binary, train_ova,
)
from tests.conftest import make_blobs


def _dense_solution(X, y, hp):
    """直接解 (N+1)×(N+1) 擴增系統 [[0, 1ᵀ], [1, K + I/C]]"""
    n = X.shape[0]
    A = np.zeros((n + 1, n + 1))
    A[0, 1:] = 1.0
    A[1:, 0] = 1.0
    A[1:, 1:] = gram(hp.kernel, X) + np.eye(n) / hp.C
    sol = np.linalg.solve(A, np.r_[0.0, y])
    return sol[1:], sol[0]


def _random_problem(rng, n=None):
    n = n or int(rng.integers(2, 41))
    X = rng.standard_normal((n, 3))
    y = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    hp = HyperParams.rbf(10 ** rng.uniform(-2, 3), 10 ** rng.uniform(-2, 1))
    return X, y, hp


def test_single_sample():
    model = train_binary([[0.5]], [1.0], HyperParams.rbf(1.0, 1.0))
    assert model.alpha[0] == pytest.approx(0.0, abs=1e-12)
    assert model.b == pytest.approx(1.0)


def test_mirrored_points():
    X = np.array([[-1.0], [1.0]])
    model = train_binary(X, [-1.0, 1.0], HyperParams.rbf(10.0, 1.0))
    assert model.b == pytest.approx(0.0, abs=1e-12)
    assert model.alpha[0] == pytest.approx(-model.alpha[1])


def test_matches_dense_solve(rng):
    for _ in range(20):
        X, y, hp = _random_problem(rng)
        model = train_binary(X, y, hp)
        alpha, b = _dense_solution(X, y, hp)
        np.testing.assert_allclose(model.alpha, alpha, rtol=1e-6, atol=1e-8)
        assert model.b == pytest.approx(b, rel=1e-6, abs=1e-8)


def test_optimality_conditions(rng):
    for _ in range(200):
        X, y, hp = _random_problem(rng)
        model = train_binary(X, y, hp)
        assert abs(model.alpha.sum()) <= 1e-8 * max(1.0, np.abs(model.alpha).max())
        xi = decision_residual(model)
        scale = max(1.0, np.abs(model.alpha).max())
        assert np.abs(model.alpha - hp.C * xi).max() <= 1e-6 * scale


def test_closed_form_loo_matches_retraining(rng):
    problems = [_random_problem(rng) for _ in range(50)] + [_random_problem(rng, n=2) for _ in range(10)]
    for X, y, hp in problems:
        model = train_binary(X, y, hp)
        fast = loo_scores(model)
        for i in range(len(y)):
            keep = np.arange(len(y)) != i
            refit = train_binary(X[keep], y[keep], hp)
            assert fast[i] == pytest.approx(refit.decision_function(X[i])[0], rel=1e-6, abs=1e-6)


def test_loo_ova_matches_per_class(rng):
    X, labels = make_blobs(rng, n_per_class=8)
    model = train_ova(X, labels, HyperParams.rbf(5.0, 0.2))
    table = loo_scores_ova(model)
    for g, binary in enumerate(model.binaries):
        np.testing.assert_allclose(table[:, g], loo_scores(binary), atol=1e-10)


def test_loo_needs_two_samples():
    model = train_binary([[0.0]], [1.0], HyperParams.rbf(1.0, 1.0))
    with pytest.raises(ValueError):
        loo_scores(model)


def test_ova_fits_separable_blobs(rng):
    X, labels = make_blobs(rng)
    model = train_ova(X, labels, HyperParams.rbf(10.0, 0.5))
    assert model.decision_function(X).shape == (len(labels), 3)
    np.testing.assert_array_equal(predict_labels(model, X), labels)


def test_large_C_has_no_training_error(rng):
    X, labels = make_blobs(rng, spread=1.0, separation=3.0)
    model = train_ova(X, labels, HyperParams.rbf(1e6, 1.0))
    np.testing.assert_array_equal(predict_labels(model, X), labels)


def test_label_permutation_changes_only_names(rng):
    X, labels = make_blobs(rng, spread=1.5, separation=2.0)
    hp = HyperParams.rbf(1.0, 0.5)
    base = predict_labels(train_ova(X, labels, hp), X)
    mapping = {1: 30, 2: 10, 3: 20}
    renamed = np.array([mapping[v] for v in labels])
    moved = predict_labels(train_ova(X, renamed, hp), X)
    np.testing.assert_array_equal(moved, [mapping[v] for v in base])


def test_argmax_ties_pick_smallest_index():
    np.testing.assert_array_equal(argmax_labels(np.zeros((2, 3)), [4, 5, 6]), [4, 4])


def test_empty_query(rng):
    X, labels = make_blobs(rng, n_per_class=3)
    model = train_ova(X, labels, HyperParams.rbf(1.0, 1.0))
    assert model.decision_function(np.zeros((0, 2))).shape == (0, 3)
    assert predict_labels(model, np.zeros((0, 2))).shape == (0,)


def test_absent_class_is_trained_with_negative_targets(rng):
    X, labels = make_blobs(rng, n_per_class=5, n_classes=2)
    model = train_ova(X, labels, HyperParams.rbf(1.0, 1.0), classes=[1, 2, 3])
    assert model.classes.tolist() == [1, 2, 3]
    np.testing.assert_array_equal(model.targets[:, 2], -1.0)


def test_rejects_bad_inputs(rng):
    hp = HyperParams.rbf(1.0, 1.0)
    with pytest.raises(ValueError):
        train_ova(np.zeros((4, 2)), [1, 1, 1, 1], hp)
    with pytest.raises(DimensionMismatchError):
        train_binary(np.zeros((4, 2)), [1.0, -1.0], hp)
    model = train_binary(rng.standard_normal((4, 2)), [1.0, -1.0, 1.0, -1.0], hp)
    with pytest.raises(DimensionMismatchError):
        model.decision_function(np.zeros((1, 3)))
    with pytest.raises(ValueError):
        HyperParams.rbf(0.0, 1.0)


def test_hyperparams_round_trip():
    for hp in (HyperParams.rbf(3.0, 0.1), HyperParams.linear(2.0)):
        assert HyperParams.from_dict(hp.to_dict()) == hp
