"""核函數"""

import numpy as np
import pytest

from app.errors import DimensionMismatchError
from app.kernels import KernelSpec, gram, gram_cross, kernel_eval, squared_distances


def test_rbf_value():
    assert kernel_eval(KernelSpec.rbf(1.0), [0.0, 0.0], [1.0, 0.0]) == pytest.approx(np.exp(-1.0))
    assert kernel_eval(KernelSpec.rbf(0.5), [0.0], [2.0]) == pytest.approx(np.exp(-2.0))


def test_linear_value():
    assert kernel_eval(KernelSpec.linear(), [1.0, 2.0], [3.0, 4.0]) == pytest.approx(11.0)


def test_rbf_gram_is_psd_with_unit_diagonal(rng):
    X = rng.standard_normal((40, 5))
    K = gram(KernelSpec.rbf(0.3), X)
    np.testing.assert_array_equal(np.diag(K), 1.0)
    np.testing.assert_array_equal(K, K.T)
    assert np.linalg.eigvalsh(K).min() > -1e-10


def test_gram_matches_cross_gram(rng):
    X = rng.standard_normal((25, 3))
    for spec in (KernelSpec.rbf(2.0), KernelSpec.linear()):
        np.testing.assert_allclose(gram(spec, X), gram_cross(spec, X, X), atol=1e-12)


def test_cross_gram_shape_and_entries(rng):
    X = rng.standard_normal((4, 2))
    Z = rng.standard_normal((3, 2))
    spec = KernelSpec.rbf(0.7)
    K = gram_cross(spec, X, Z)
    assert K.shape == (4, 3)
    assert K[2, 1] == pytest.approx(kernel_eval(spec, X[2], Z[1]))


def test_squared_distances_are_non_negative():
    X = np.full((3, 2), 1e8)
    assert squared_distances(X, X).min() >= 0.0


def test_invalid_gamma():
    for gamma in (0.0, -1.0, None):
        with pytest.raises(ValueError):
            KernelSpec.rbf(gamma)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        gram_cross(KernelSpec.linear(), np.zeros((2, 3)), np.zeros((2, 2)))
    with pytest.raises(DimensionMismatchError):
        kernel_eval(KernelSpec.linear(), [1.0], [1.0, 2.0])


def test_spec_dict_round_trip():
    for spec in (KernelSpec.rbf(0.25), KernelSpec.linear()):
        assert KernelSpec.from_dict(spec.to_dict()) == spec
