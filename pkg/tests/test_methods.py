"""方法註冊表"""

import numpy as np
import pytest

from app.lssvm import HyperParams, predict_labels, train_ova
from app.methods import (
    DISPLAY_NAMES, METHODS, Mkal, MethodContext, make_method, method_factory, parse_methods,
    requires_sources,
)
from app.mkal import MkalConfig
from app.signal_features import FeatureMatrix
from app.transfer import SourceHypothesis
from tests.conftest import make_blobs

HP = HyperParams.rbf(1.0, 0.5)


def test_parse_methods_orders_and_dedupes():
    assert parse_methods('mkal, notransfer,mkal') == ['notransfer', 'mkal']
    assert parse_methods(['MultiKT']) == ['multikt']
    with pytest.raises(ValueError):
        parse_methods('notransfer,svm')
    with pytest.raises(ValueError):
        parse_methods('')


def test_registry():
    assert list(METHODS) == ['notransfer', 'prior', 'multikt', 'mkal']
    assert set(DISPLAY_NAMES) == set(METHODS)
    assert requires_sources(['notransfer', 'prior'])
    assert not requires_sources(['notransfer'])
    assert not METHODS['prior'].uses_gamma
    assert all(METHODS[name].uses_gamma for name in ('notransfer', 'multikt', 'mkal'))


def test_transfer_methods_need_sources():
    for name in ('prior', 'multikt', 'mkal'):
        with pytest.raises(ValueError):
            make_method(name, HP)


def test_notransfer_matches_plain_lssvm(rng):
    X, y = make_blobs(rng, spread=1.0, separation=3.0)
    fm = FeatureMatrix(X, y, np.ones(len(y)))
    method = method_factory('notransfer')(HP).fit(fm)
    np.testing.assert_array_equal(method.predict(X), predict_labels(train_ova(X, y, HP), X))


def test_predict_before_fit():
    with pytest.raises(ValueError):
        make_method('notransfer', HP).predict(np.zeros((1, 2)))


def test_mkal_lambda_from_c():
    assert Mkal.lam_for(10.0, 50) == pytest.approx(1 / 500)


def test_transfer_methods_predict_known_classes(rng):
    Xs, ys = make_blobs(rng, n_per_class=10)
    sources = [SourceHypothesis(train_ova(Xs, ys, HP), 's')]
    X, y = make_blobs(rng, n_per_class=8)
    fm = FeatureMatrix(X, y, np.ones(len(y)))
    context = MethodContext(sources, np.array([1, 2, 3]), MkalConfig(epochs=10))
    for name in ('prior', 'multikt', 'mkal'):
        predicted = make_method(name, HP, context).fit(fm).predict(X)
        assert set(predicted) <= {1, 2, 3}
        assert np.mean(predicted == y) >= 0.9
