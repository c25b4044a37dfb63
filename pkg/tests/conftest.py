"""
共用 fixtures
將專案根目錄加入 sys.path (與 run_experiment.py 相同做法)
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from app.signal_features import FeatureMatrix  # noqa: E402
from app.synthetic import SynthConfig, generate_synthetic_cohort  # noqa: E402


def make_blobs(rng, n_per_class=20, n_classes=3, dim=2, separation=6.0, spread=0.3):
    """高斯群集: 類別 g 的中心在第 g 軸方向 (類別標籤從 1 開始)"""
    centers = np.zeros((n_classes, dim))
    for g in range(n_classes):
        centers[g, g % dim] = separation * (1 + g // dim)
        if g >= dim:
            centers[g] *= -1
    X = np.vstack([c + spread * rng.standard_normal((n_per_class, dim)) for c in centers])
    y = np.repeat(np.arange(1, n_classes + 1), n_per_class)
    return X, y


def make_fm(X, y, reps=None, subject_id='s'):
    reps = np.ones(len(y), dtype=int) if reps is None else reps
    return FeatureMatrix(X, y, reps, None, subject_id)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def blobs(rng):
    return make_blobs(rng)


@pytest.fixture(scope="session")
def small_synth_config():
    """4 位 intact、4 通道、3 個動作的小型合成資料 (測試用)"""
    return SynthConfig(n_intact=4, channels=4, movements=3, repetitions=6, burst_samples=80,
                       rest_samples=50, seed=3)


@pytest.fixture(scope="session")
def small_cohort(small_synth_config):
    return generate_synthetic_cohort(small_synth_config)
