"""設定檔載入"""

import pytest

from app.config import DEFAULTS, default_n_jobs, deep_merge, load_config


def test_default_file_matches_builtin_defaults():
    config = load_config()
    assert config['split'] == DEFAULTS['split']
    assert config['settings']['realistic']['grid'] == DEFAULTS['settings']['realistic']['grid']


def test_override_file(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("window:\n  length_ms: 100\n", encoding='utf-8')
    config = load_config(str(path))
    assert config['window'] == {'length_ms': 100, 'increment_ms': 10}


def test_missing_explicit_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(str(tmp_path / "absent.yaml"))


def test_deep_merge_does_not_mutate():
    base = {'a': {'b': 1, 'c': 2}}
    merged = deep_merge(base, {'a': {'b': 5}})
    assert merged == {'a': {'b': 5, 'c': 2}}
    assert base == {'a': {'b': 1, 'c': 2}}


def test_n_jobs_environment(monkeypatch):
    monkeypatch.setenv('HTL_N_JOBS', '3')
    assert default_n_jobs({'runtime': {'n_jobs': 1}}) == 3
    monkeypatch.setenv('HTL_N_JOBS', 'many')
    assert default_n_jobs({'runtime': {'n_jobs': 2}}) == 2
    monkeypatch.delenv('HTL_N_JOBS')
    assert default_n_jobs({}) == 1
