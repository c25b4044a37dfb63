"""實驗流程 (小型合成資料)"""

import numpy as np
import pytest

from app.config import DEFAULTS
from app.errors import PairingError
from app.evaluation import GridSpec
from app.experiment import (
    ExperimentPlan, TargetTask, assign_roles, parse_pairing, prepare_subject, run_experiment,
    task_seed, training_subset,
)
from app.mkal import MkalConfig
from app.signal_features import EmgRecording

TINY_GRID = GridSpec((1.0, 10.0), (0.1,))


def _plan(setting, methods=None, **overrides):
    overrides.setdefault('grid', TINY_GRID)
    return ExperimentPlan.from_config(DEFAULTS, setting, 'ii', methods, seed=7, **overrides)


def test_task_seed_is_stable_and_key_dependent():
    assert task_seed(1, 'a', 2) == task_seed(1, 'a', 2)
    assert task_seed(1, 'a', 2) != task_seed(1, 'a', 3)
    assert task_seed(1, 'a', 2) != task_seed(2, 'a', 2)
    assert 0 <= task_seed(5, 'x') < 2 ** 32


def test_pairing_aliases():
    assert parse_pairing('ai') == 'amputee-intact'
    assert parse_pairing('Intact-Intact') == 'intact-intact'
    with pytest.raises(ValueError):
        parse_pairing('xx')


class TestPlan:
    def test_original_size_axis(self):
        plan = ExperimentPlan.from_config(DEFAULTS, 'original', 'ii')
        assert len(plan.size_axis()) == 18
        assert plan.size_axis()[0] == ('120', 120)
        assert plan.methods == ['notransfer', 'prior', 'multikt', 'mkal']

    def test_realistic_defaults(self):
        plan = ExperimentPlan.from_config(DEFAULTS, 'realistic', 'ii')
        assert len(plan.size_axis()) == 15
        assert plan.size_axis()[4] == ('1+3', (1, 3))
        assert plan.methods == ['notransfer', 'prior', 'multikt']
        assert len(plan.grid) == 121
        assert plan.metric == 'standard'

    def test_realistic_drops_mkal_unless_enabled(self):
        assert 'mkal' not in ExperimentPlan.from_config(DEFAULTS, 'realistic', 'ii', 'notransfer,mkal').methods
        config = {**DEFAULTS, 'settings': {**DEFAULTS['settings'],
                                           'realistic': {**DEFAULTS['settings']['realistic'], 'include_mkal': True}}}
        assert 'mkal' in ExperimentPlan.from_config(config, 'realistic', 'ii', 'notransfer,mkal').methods

    def test_invalid_values(self):
        with pytest.raises(ValueError):
            ExperimentPlan.from_config(DEFAULTS, 'fancy', 'ii')
        with pytest.raises(ValueError):
            _plan('original', 'notransfer,svm')
        with pytest.raises(ValueError):
            _plan('original', n_repeats=0)


class TestRoles:
    def test_intact_pairing(self, small_cohort):
        roles = assign_roles(small_cohort, _plan('original'))
        assert sorted(roles) == small_cohort.manifest.ids()
        for target, sources in roles.items():
            assert target not in sources
            assert len(sources) == 3

    def test_missing_amputees(self, small_cohort):
        plan = ExperimentPlan.from_config(DEFAULTS, 'original', 'aa', grid=TINY_GRID)
        with pytest.raises(PairingError):
            assign_roles(small_cohort, plan)

    def test_unknown_target(self, small_cohort):
        with pytest.raises(PairingError):
            assign_roles(small_cohort, _plan('original', targets=['intact-99']))


def test_prepared_subject_has_disjoint_standardized_splits(small_cohort):
    plan = _plan('original')
    prepared = prepare_subject(small_cohort.recordings['intact-01'], plan, with_pool=True)
    assert np.intersect1d(prepared.train.row_ids, prepared.test.row_ids).size == 0
    assert set(prepared.train.repetitions) <= {1, 3, 4, 6}
    assert set(prepared.test.repetitions) <= {2, 5}
    np.testing.assert_allclose(prepared.train.features.mean(axis=0), 0.0, atol=1e-9)
    assert prepared.pool.n_rows > prepared.train.n_rows


def test_test_repetitions_do_not_touch_training_features(small_cohort):
    rec = small_cohort.recordings['intact-01']
    held_out = np.isin(rec.repetition, (2, 5))
    altered = EmgRecording(np.where(held_out[:, None], rec.samples * 10.0, rec.samples), rec.sampling_rate,
                           rec.stimulus, rec.repetition, rec.subject_id, rec.subject_kind,
                           rec.n_movements, rec.n_repetitions)
    plan = _plan('original')
    before = prepare_subject(rec, plan)
    after = prepare_subject(altered, plan)
    np.testing.assert_array_equal(before.train.features, after.train.features)
    np.testing.assert_array_equal(before.train.row_ids, after.train.row_ids)
    assert not np.allclose(before.test.features, after.test.features)


def test_random_training_subsets_are_nested(small_cohort):
    plan = _plan('original', sizes=(20, 40))
    target = prepare_subject(small_cohort.recordings['intact-02'], plan)
    small = training_subset(TargetTask(target, [], '20', 20, 0), plan)
    large = training_subset(TargetTask(target, [], '40', 40, 0), plan)
    assert small.n_rows == 20 and large.n_rows == 40
    assert set(small.row_ids) <= set(large.row_ids)


def test_original_setting_runs_all_methods(small_cohort):
    plan = _plan('original', sizes=(20, 40), mkal=MkalConfig(epochs=5))
    records = run_experiment(plan, small_cohort)
    assert len(records) == 4 * 2 * 4
    assert {r.method for r in records} == {'notransfer', 'prior', 'multikt', 'mkal'}
    assert {r.size for r in records} == {'20', '40'}
    assert all(0.0 <= r.value <= 1.0 for r in records)
    assert all(r.metric == 'balanced' for r in records)


def test_optimized_setting_tunes_per_task(small_cohort):
    plan = _plan('optimized', 'notransfer,multikt', sizes=(30,), cv_folds=3, targets=['intact-01'])
    records = run_experiment(plan, small_cohort)
    assert len(records) == 2
    assert all((r.hp['C'], r.hp['gamma']) in TINY_GRID.points() for r in records)


def test_realistic_setting_cardinality(small_cohort):
    records = run_experiment(_plan('realistic'), small_cohort)
    assert len(records) == 4 * 15 * 3
    assert len({r.size for r in records}) == 15
    assert {r.target for r in records} == set(small_cohort.manifest.ids())


def test_results_do_not_depend_on_parallelism(small_cohort):
    plan = _plan('realistic', 'notransfer,multikt', targets=['intact-01'])
    serial = run_experiment(plan, small_cohort, n_jobs=1)
    parallel = run_experiment(plan, small_cohort, n_jobs=2)
    assert [r.to_dict() for r in serial] == [r.to_dict() for r in parallel]
    assert [r.to_dict() for r in serial] == [r.to_dict() for r in run_experiment(plan, small_cohort)]


def test_prior_is_tuned_over_C_only(small_cohort):
    grid = GridSpec((1.0, 10.0), (0.1, 1.0))
    plan = _plan('optimized', 'prior,notransfer', sizes=(30,), cv_folds=3, targets=['intact-01'], grid=grid)
    records = {r.method: r for r in run_experiment(plan, small_cohort)}
    assert records['prior'].hp['gamma'] is None
    assert records['prior'].hp['C'] in grid.C
    assert records['notransfer'].hp['gamma'] in grid.gamma
