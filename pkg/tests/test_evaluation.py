"""切分、交叉驗證、評估指標與超參數搜尋"""

import numpy as np
import pytest

from app.errors import GridSearchError
from app.evaluation import (
    CvPlan, GridSpec, SplitPlan, assert_disjoint_provenance, balanced_accuracy, choose_best,
    cross_subject_accuracy_table, cv_score, enumerate_rep_subsets, get_metric, grid_scores,
    grid_search, kfold_by_repetition, kfold_shuffled, select_reps, select_source_hp_original,
    split_by_repetition, standard_accuracy, subset_descriptor, tune_source_realistic,
)
from app.lssvm import HyperParams
from app.methods import method_factory
from app.signal_features import FeatureMatrix
from tests.conftest import make_blobs

SMALL_GRID = GridSpec((0.1, 1.0, 10.0), (0.1, 1.0, 10.0))


def _subject(rng, reps=6, n_per_class=12, shift=0.0, subject_id='s'):
    X, y = make_blobs(rng, n_per_class=n_per_class, spread=1.0, separation=3.0)
    return FeatureMatrix(X + shift, y, (np.arange(len(y)) % reps) + 1, subject_id=subject_id)


class ConstantMethod:
    def __init__(self, label=1):
        self.label = label

    def fit(self, fm):
        return self

    def predict(self, X):
        return np.full(len(X), self.label)


class FailingMethod:
    def fit(self, fm):
        raise ValueError("boom")


class TestSplits:
    def test_default_split(self, rng):
        fm = _subject(rng)
        train, test = split_by_repetition(fm)
        assert set(train.repetitions) == {1, 3, 4, 6}
        assert set(test.repetitions) == {2, 5}
        assert np.intersect1d(train.row_ids, test.row_ids).size == 0

    def test_custom_split_drops_unlisted_reps(self, rng):
        train, test = split_by_repetition(_subject(rng), SplitPlan((1,), (2,)))
        assert set(train.repetitions) == {1}
        assert set(test.repetitions) == {2}

    def test_plan_validation(self):
        with pytest.raises(ValueError):
            SplitPlan((), (2,))
        with pytest.raises(ValueError):
            SplitPlan((1, 2), (2,))

    def test_missing_reps_raise(self, rng):
        with pytest.raises(ValueError):
            split_by_repetition(_subject(rng, reps=1))

    def test_subset_enumeration(self):
        subsets = enumerate_rep_subsets([1, 3, 4, 6])
        assert len(subsets) == 15
        assert subsets[:4] == [(1,), (3,), (4,), (6,)]
        assert sum(len(s) == 2 for s in subsets) == 6
        assert subsets[-1] == (1, 3, 4, 6)
        assert enumerate_rep_subsets([1]) == [(1,)]
        assert subset_descriptor((1, 3)) == '1+3'
        with pytest.raises(ValueError):
            enumerate_rep_subsets([])

    def test_select_reps(self, rng):
        fm = _subject(rng)
        assert set(select_reps(fm, (3, 4)).repetitions) == {3, 4}


class TestFolds:
    def test_one_fold_per_repetition(self, rng):
        fm = _subject(rng, reps=4)
        folds = kfold_by_repetition(fm)
        assert len(folds) == 4
        for train_idx, test_idx in folds:
            assert len(set(fm.repetitions[test_idx])) == 1
            assert not set(fm.repetitions[test_idx]) & set(fm.repetitions[train_idx])

    def test_single_repetition_falls_back_to_five_fold(self):
        fm = FeatureMatrix(np.arange(100.0)[:, None], np.arange(100) % 2, np.ones(100))
        folds = kfold_by_repetition(fm, seed=1)
        assert len(folds) == 5
        assert all(len(test) == 20 for _, test in folds)
        covered = np.sort(np.concatenate([test for _, test in folds]))
        np.testing.assert_array_equal(covered, np.arange(100))

    def test_too_few_rows(self):
        fm = FeatureMatrix(np.zeros((4, 1)), [1, 2, 1, 2], np.ones(4))
        with pytest.raises(ValueError):
            kfold_shuffled(fm, 5)

    def test_cv_plan(self, rng):
        fm = _subject(rng, reps=3)
        assert len(CvPlan('repetition').folds(fm)) == 3
        assert len(CvPlan('shuffled', 4).folds(fm)) == 4
        with pytest.raises(ValueError):
            CvPlan('random')


class TestMetrics:
    def test_perfect(self):
        assert balanced_accuracy([1, 2, 3], [1, 2, 3]) == 1.0

    def test_constant_prediction(self):
        assert balanced_accuracy(['a', 'b'], ['a', 'a']) == pytest.approx(0.5)
        assert balanced_accuracy(['a', 'a', 'a', 'b'], ['a'] * 4) == pytest.approx(0.5)
        assert standard_accuracy(['a', 'a', 'a', 'b'], ['a'] * 4) == pytest.approx(0.75)

    def test_matches_brute_force(self, rng):
        for _ in range(1000):
            n = int(rng.integers(1, 30))
            truth = rng.integers(0, int(rng.integers(1, 5)), size=n)
            predicted = rng.integers(0, 4, size=n)
            recalls = [np.mean(predicted[truth == c] == c) for c in np.unique(truth)]
            assert balanced_accuracy(truth, predicted) == pytest.approx(np.mean(recalls), abs=1e-12)

    def test_invalid_input(self):
        with pytest.raises(ValueError):
            balanced_accuracy([], [])
        with pytest.raises(ValueError):
            standard_accuracy([1, 2], [1])
        with pytest.raises(ValueError):
            get_metric('f1')


class TestGridSearch:
    def test_grid_validation(self):
        with pytest.raises(ValueError):
            GridSpec((), (1.0,))
        with pytest.raises(ValueError):
            GridSpec((1.0,), (0.0,))
        assert len(SMALL_GRID) == 9

    def test_without_gamma_keeps_C_axis(self):
        collapsed = SMALL_GRID.without_gamma()
        assert collapsed.C == SMALL_GRID.C
        assert collapsed.gamma == (0.1,)
        assert len(collapsed) == 3

    def test_tie_prefers_smaller_c_then_gamma(self):
        assert choose_best({(10.0, 0.1): 0.9, (1.0, 1.0): 0.9, (1.0, 0.5): 0.9, (0.1, 1.0): 0.8}) == (1.0, 0.5)

    def test_single_point_grid(self, rng):
        hp = grid_search(_subject(rng), GridSpec((2.0,), (0.3,)), CvPlan(), method_factory('notransfer'))
        assert hp == HyperParams.rbf(2.0, 0.3)

    def test_equal_scores_pick_smallest(self, rng):
        hp = grid_search(_subject(rng), SMALL_GRID, CvPlan(), lambda hp: ConstantMethod())
        assert (hp.C, hp.kernel.gamma) == (0.1, 0.1)

    def test_result_matches_exhaustive_evaluation(self, rng):
        fm = _subject(rng)
        factory = method_factory('notransfer')
        folds = CvPlan().folds(fm, seed=5)
        exhaustive = {
            point: cv_score(fm, folds, lambda: factory(HyperParams.rbf(*point)), balanced_accuracy)
            for point in SMALL_GRID.points()
        }
        hp = grid_search(fm, SMALL_GRID, CvPlan(), factory, seed=5)
        assert (hp.C, hp.kernel.gamma) == choose_best(exhaustive)

    def test_all_points_fail(self, rng):
        with pytest.raises(GridSearchError) as excinfo:
            grid_search(_subject(rng), SMALL_GRID, CvPlan(), lambda hp: FailingMethod())
        assert len(excinfo.value.causes) == len(SMALL_GRID)

    def test_partial_failures_are_skipped(self, rng):
        def factory(hp):
            return FailingMethod() if hp.C < 1 else ConstantMethod()

        scores, causes = grid_scores(_subject(rng), SMALL_GRID, CvPlan(), factory)
        assert len(causes) == 3
        assert len(scores) == 6

    def test_parallel_matches_serial(self, rng):
        fm = _subject(rng)
        factory = method_factory('notransfer')
        serial, _ = grid_scores(fm, SMALL_GRID, CvPlan(), factory, seed=2, n_jobs=1)
        parallel, _ = grid_scores(fm, SMALL_GRID, CvPlan(), factory, seed=2, n_jobs=2)
        assert serial == parallel


class TestSourceHyperParams:
    def _cohort(self, rng, n=4):
        return {f"s{i}": _subject(rng, shift=0.2 * i, subject_id=f"s{i}") for i in range(n)}

    def test_table_diagonal_is_nan(self, rng):
        table = cross_subject_accuracy_table(self._cohort(rng, 3), GridSpec((1.0,), (0.5,)))
        assert table.accuracy.shape == (1, 3, 3)
        assert np.all(np.isnan(np.diag(table.accuracy[0])))
        off = table.accuracy[0][~np.eye(3, dtype=bool)]
        assert np.all((off >= 0) & (off <= 1))

    def test_target_data_does_not_influence_choice(self, rng):
        subjects = self._cohort(rng)
        base = select_source_hp_original(subjects, SMALL_GRID, excluded='s0')
        scrambled = dict(subjects)
        target = subjects['s0']
        scrambled['s0'] = FeatureMatrix(rng.standard_normal(target.features.shape) * 10,
                                        rng.permutation(target.labels), target.repetitions, subject_id='s0')
        assert select_source_hp_original(scrambled, SMALL_GRID, excluded='s0') == base

    def test_shared_table_gives_same_choice(self, rng):
        subjects = self._cohort(rng)
        table = cross_subject_accuracy_table(subjects, SMALL_GRID)
        assert (select_source_hp_original(subjects, SMALL_GRID, excluded='s1', table=table)
                == select_source_hp_original(subjects, SMALL_GRID, excluded='s1'))

    def test_needs_two_non_target_subjects(self, rng):
        with pytest.raises(ValueError):
            select_source_hp_original(self._cohort(rng, 2), SMALL_GRID, excluded='s0')

    def test_realistic_tuning_returns_grid_point(self, rng):
        hp = tune_source_realistic(_subject(rng, n_per_class=24), SMALL_GRID, seed=1)
        assert (hp.C, hp.kernel.gamma) in SMALL_GRID.points()


def test_provenance_check(rng):
    fm = _subject(rng)
    train, test = split_by_repetition(fm)
    assert_disjoint_provenance(train, test)
    with pytest.raises(AssertionError):
        assert_disjoint_provenance(train, fm)
    other = FeatureMatrix(fm.features, fm.labels, fm.repetitions, subject_id='other')
    assert_disjoint_provenance(train, other)
