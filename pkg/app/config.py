"""
設定檔載入
優先順序: 內建預設值 < config/experiment.yaml (或 --config) < CLI 旗標
"""

import copy
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / "config" / "experiment.yaml"
N_JOBS_ENV = "HTL_N_JOBS"

_ORIGINAL_GRID = [0.01, 0.1, 1, 10, 100, 1000]

DEFAULTS: Dict[str, Any] = {
    'logging': {'level': 'INFO'},
    'runtime': {'n_jobs': 1, 'progress': True},
    'window': {'length_ms': 200, 'increment_ms': 10},
    'mdwt': {'wavelet': 'db7', 'level': 3},
    'split': {'train_reps': [1, 3, 4, 6], 'test_reps': [2, 5]},
    'settings': {
        'original': {
            'feature_kind': 'avg', 'rest_policy': 'balance', 'metric': 'balanced',
            'train_subsample': 10, 'sizes': {'start': 120, 'stop': 2160, 'step': 120},
            'n_repeats': 1, 'grid': {'C': _ORIGINAL_GRID, 'gamma': _ORIGINAL_GRID},
            'fixed_hp': None,
        },
        'optimized': {
            'feature_kind': 'avg', 'rest_policy': 'balance', 'metric': 'balanced',
            'train_subsample': 10, 'sizes': {'start': 120, 'stop': 2160, 'step': 120},
            'n_repeats': 1, 'cv_folds': 5, 'grid': {'C': _ORIGINAL_GRID, 'gamma': _ORIGINAL_GRID},
        },
        'realistic': {
            'feature_kind': 'mdwt', 'rest_policy': 'drop', 'metric': 'standard',
            'train_subsample': 10, 'tuning_subsample': 4,
            'include_mkal': False,
            'grid': {
                'C': [2.0 ** e for e in range(-6, 15, 2)],
                'gamma': [2.0 ** e for e in range(-20, 1, 2)],
            },
        },
    },
    'mkal': {'p': 1.04, 'epochs': 300, 'lambda': 1e-3},
    'multikt': {'iterations': 300},
    'cli': {},
    'synth': {
        'n_intact': 4, 'n_amputee': 0, 'channels': 8, 'movements': 6, 'repetitions': 6,
        'sampling_rate': 100, 'burst_samples': 150, 'rest_samples': 100,
        'epsilon': 0.2, 'sigma_intact': 0.05, 'sigma_amputee': 0.15, 'activation_gain': 4.0,
        'amputee_attenuation': 0.5, 'amputee_attenuated_channels': 2,
    },
}


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """遞迴合併兩個 dict，override 的值優先 (回傳新物件)"""
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_config(config_path: Optional[str] = None) -> Dict[str, Any]:
    """
    載入設定檔並與內建預設值合併

    Args:
        config_path: YAML 路徑 (None 表示使用 config/experiment.yaml)

    Returns:
        合併後的設定 dict
    """
    path = Path(config_path) if config_path else DEFAULT_CONFIG_PATH
    if not path.exists():
        if config_path:
            raise FileNotFoundError(f"找不到設定檔: {path}")
        logger.warning(f"設定檔 {path} 不存在，使用預設值")
        return copy.deepcopy(DEFAULTS)

    with open(path, 'r', encoding='utf-8') as f:
        loaded = yaml.safe_load(f) or {}
    if not isinstance(loaded, dict):
        raise ValueError(f"設定檔最外層必須是 mapping: {path}")
    return deep_merge(DEFAULTS, loaded)


def default_n_jobs(config: Dict[str, Any]) -> int:
    """平行度: 環境變數 HTL_N_JOBS 優先於設定檔"""
    env_value = os.environ.get(N_JOBS_ENV)
    if env_value:
        try:
            return max(1, int(env_value))
        except ValueError:
            logger.warning(f"⚠️ 忽略無效的 {N_JOBS_ENV}={env_value!r}")
    return max(1, int(config.get('runtime', {}).get('n_jobs', 1)))


def setup_logging(level: str = "INFO"):
    """統一的日誌格式 (輸出至 stderr)"""
    logging.basicConfig(level=getattr(logging, str(level).upper(), logging.INFO),
                        format='%(asctime)s - %(levelname)s - %(message)s')
