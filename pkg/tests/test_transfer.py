"""MultiKT 與 Prior"""

import numpy as np
import pytest

from app.errors import DimensionMismatchError
from app.lssvm import HyperParams, build_system, ova_targets, train_ova
from app.transfer import (
    SourceHypothesis, TransferWeights, _optimize_column, loo_affine, loo_objective, optimize_beta,
    predict_multikt, predict_prior, project_beta, source_scores, source_tensor,
    train_multikt, train_prior,
)
from tests.conftest import make_blobs

HP = HyperParams.rbf(1.0, 0.5)
CENTERS = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]])


class FixedScores:
    """以最近中心 (或常數) 產生 ±1 分數的 source 模型"""

    def __init__(self, constant=None):
        self.classes = np.array([1, 2, 3])
        self.constant = constant

    def decision_function(self, Z):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if self.constant is not None:
            return np.tile(self.constant, (Z.shape[0], 1))
        nearest = np.argmin(((Z[:, None, :] - CENTERS[None]) ** 2).sum(axis=2), axis=1)
        return np.where(np.arange(3)[None, :] == nearest[:, None], 1.0, -1.0)


def _trained_source(rng, subject_id, shuffle=False):
    X, labels = make_blobs(rng, n_per_class=15, spread=1.5, separation=3.0)
    if shuffle:
        X = rng.standard_normal(X.shape) * 3
        labels = rng.permutation(labels)
    return SourceHypothesis(train_ova(X, labels, HP), subject_id)


def _task(rng):
    return make_blobs(rng, n_per_class=10, spread=1.5, separation=3.0)


def test_source_scores_layout(rng):
    sources = [_trained_source(rng, 'a'), _trained_source(rng, 'b')]
    X, _ = _task(rng)
    F = source_scores(sources, X)
    assert F.shape == (len(X), 6)
    np.testing.assert_allclose(F[:, 3:], sources[1].score_matrix(X))
    np.testing.assert_allclose(source_scores(sources[:1], X), sources[0].score_matrix(X))


def test_source_scores_need_a_source(rng):
    with pytest.raises(ValueError):
        source_scores([], np.zeros((2, 2)))


def test_source_class_mismatch(rng):
    source = _trained_source(rng, 'a')
    with pytest.raises(DimensionMismatchError):
        source.score_matrix(np.zeros((1, 2)), classes=[1, 2, 7])


def test_zero_beta_reduces_to_plain_lssvm(rng):
    for _ in range(20):
        sources = [_trained_source(rng, 'a'), _trained_source(rng, 'b')]
        X, labels = _task(rng)
        model = train_multikt(X, labels, sources, HP, beta=TransferWeights.zeros(2, 3))
        plain = train_ova(X, labels, HP)
        Z = rng.standard_normal((15, 2)) * 3
        np.testing.assert_allclose(model.decision_function(Z), plain.decision_function(Z), atol=1e-8)


def test_beta_is_feasible_and_not_worse_than_zero(rng):
    for _ in range(50):
        sources = [_trained_source(rng, 'a'), _trained_source(rng, 'b', shuffle=True)]
        X, labels = _task(rng)
        weights = optimize_beta(X, labels, sources, HP)
        assert np.all(weights.beta >= 0)
        assert np.all(np.linalg.norm(weights.beta, axis=0) <= 1 + 1e-12)

        system = build_system(X, HP)
        Y = ova_targets(labels, [1, 2, 3])
        T = source_tensor(sources, X, [1, 2, 3])
        for g in range(3):
            c0, Gm = loo_affine(system, Y[:, g], T[:, :, g].T)
            assert weights.objectives[g] <= loo_objective(np.zeros(2), Y[:, g], c0, Gm) + 1e-12
            assert weights.objectives[g] == pytest.approx(
                loo_objective(weights.beta[:, g], Y[:, g], c0, Gm))



def test_loo_objective_sums_hinges():
    y = np.array([1.0, -1.0])
    assert loo_objective(np.zeros(1), y, np.array([0.5, 0.5]), np.zeros((2, 1))) == pytest.approx(2.0)


def test_single_subgradient_step():
    y = np.ones(2)
    Gm = np.full((2, 1), 0.25)
    beta, obj, history = _optimize_column(y, np.zeros(2), Gm, iterations=1)
    # 梯度 -(0.25 + 0.25)，步長 1
    np.testing.assert_allclose(beta, [0.5])
    assert obj == pytest.approx(1.75)
    assert history == pytest.approx([2.0, 1.75])

def _clone_beats_noise(seed):
    rng = np.random.default_rng(seed)
    clone = _trained_source(rng, 'clone')
    noise = _trained_source(rng, 'noise', shuffle=True)
    X, labels = _task(rng)
    weights = optimize_beta(X, labels, [clone, noise], HP)
    total = weights.total_weight()
    return total[0] > total[1]


def test_related_source_gets_more_weight():
    assert sum(_clone_beats_noise(seed) for seed in range(10)) >= 8


@pytest.mark.slow
def test_related_source_gets_more_weight_over_many_seeds():
    assert sum(_clone_beats_noise(seed) for seed in range(100)) >= 95


def test_perfect_source_with_unit_beta(rng):
    X = np.vstack([c + 0.2 * rng.standard_normal((6, 2)) for c in CENTERS])
    labels = np.repeat([1, 2, 3], 6)
    source = SourceHypothesis(FixedScores(), 'oracle')
    model = train_multikt(X, labels, [source], HP, beta=TransferWeights(np.ones((1, 3))))
    np.testing.assert_allclose(model.residual.alpha, 0.0, atol=1e-12)
    Z = rng.standard_normal((10, 2)) * 3
    np.testing.assert_allclose(model.decision_function(Z), source.score_matrix(Z), atol=1e-10)


def test_source_permutation_invariance(rng):
    sources = [_trained_source(rng, 'a'), _trained_source(rng, 'b')]
    X, labels = _task(rng)
    beta = TransferWeights(np.array([[0.6, 0.0, 0.3], [0.8, 0.5, 0.1]]))
    flipped = TransferWeights(beta.beta[::-1])
    Z = rng.standard_normal((12, 2)) * 3
    a, scores_a = predict_multikt(train_multikt(X, labels, sources, HP, beta=beta), Z)
    b, scores_b = predict_multikt(train_multikt(X, labels, sources[::-1], HP, beta=flipped), Z)
    np.testing.assert_allclose(scores_a, scores_b, atol=1e-10)
    np.testing.assert_array_equal(a, b)


def test_weights_validation():
    with pytest.raises(ValueError):
        TransferWeights([[-0.1, 0.0]])
    with pytest.raises(ValueError):
        TransferWeights([[1.0], [1.0]])
    with pytest.raises(DimensionMismatchError):
        train_multikt(np.zeros((4, 1)) + np.arange(4)[:, None], [1, 1, 2, 2],
                      [SourceHypothesis(FixedScores(np.zeros(3)), 'c')], HP,
                      beta=TransferWeights.zeros(2, 2))


def test_project_beta(rng):
    for _ in range(100):
        col = project_beta(rng.normal(0, 3, size=4))
        assert np.all(col >= 0)
        assert np.linalg.norm(col) <= 1.0
    np.testing.assert_array_equal(project_beta(np.array([0.3, -0.2])), [0.3, 0.0])


def test_prior_with_perfect_source(rng):
    X = np.vstack([c + 0.2 * rng.standard_normal((6, 2)) for c in CENTERS])
    labels = np.repeat([1, 2, 3], 6)
    model = train_prior(X, labels, [SourceHypothesis(FixedScores(), 'oracle')], C=10.0)
    np.testing.assert_array_equal(predict_prior(model, X), labels)


def test_prior_with_constant_source_predicts_majority(rng):
    X = rng.standard_normal((18, 2))
    labels = np.r_[np.ones(10, dtype=int), np.full(5, 2), np.full(3, 3)]
    source = SourceHypothesis(FixedScores(np.array([0.3, -0.2, 0.1])), 'flat')
    model = train_prior(X, labels, [source], C=1.0)
    predicted = predict_prior(model, X)
    np.testing.assert_array_equal(predicted, 1)
    assert np.mean(predicted == labels) == pytest.approx(10 / 18)


def test_prior_empty_query(rng):
    X, labels = _task(rng)
    model = train_prior(X, labels, [_trained_source(rng, 'a')], C=1.0)
    assert model.decision_function(np.zeros((0, 2))).shape == (0, 3)
