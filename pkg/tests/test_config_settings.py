import json

import pytest

from qgnn.core import config as config_module
from qgnn.core.errors import ConfigurationError, StorageIOError


def test_settings_defaults_when_env_missing(monkeypatch, exp):
    for k in ("QGNN_LLM_ENDPOINT", "QGNN_LLM_MODEL", "QGNN_LLM_API_KEY", "QGNN_LLM_TIMEOUT", "QGNN_LOG_LEVEL"):
        monkeypatch.delenv(k, raising=False)
    s = config_module.load_settings()
    exp.expect("defaults loaded (endpoint startswith http, model str, no api key, INFO)")
    exp.actual(f"endpoint={s.llm_endpoint} model={s.llm_model} key={s.llm_api_key} level={s.log_level}")
    assert s.llm_endpoint.startswith("http")
    assert s.llm_model == config_module.DEFAULT_LLM_MODEL
    assert s.llm_api_key is None
    assert s.log_level == "INFO"


def test_settings_env_override(monkeypatch, exp):
    monkeypatch.setenv("QGNN_LLM_ENDPOINT", "http://x:1234/v1/chat/completions")
    monkeypatch.setenv("QGNN_LLM_MODEL", "mistral")
    monkeypatch.setenv("QGNN_LLM_API_KEY", "XYZ")
    monkeypatch.setenv("QGNN_LLM_TIMEOUT", "5")
    monkeypatch.setenv("QGNN_LOG_LEVEL", "debug")
    s = config_module.load_settings()
    exp.expect("env overrides are applied (x:1234, mistral, XYZ, 5s, DEBUG)")
    exp.actual(f"endpoint={s.llm_endpoint} model={s.llm_model} key={s.llm_api_key} timeout={s.llm_timeout}")
    assert s.llm_endpoint == "http://x:1234/v1/chat/completions"
    assert s.llm_model == "mistral"
    assert s.llm_api_key == "XYZ"
    assert s.llm_timeout == 5.0
    assert s.log_level == "DEBUG"


def test_settings_invalid_timeout(monkeypatch):
    monkeypatch.setenv("QGNN_LLM_TIMEOUT", "soon")
    with pytest.raises(ConfigurationError):
        config_module.load_settings()


def test_require_env(monkeypatch):
    monkeypatch.delenv("QGNN_SOMETHING", raising=False)
    with pytest.raises(ConfigurationError) as info:
        config_module.require_env("QGNN_SOMETHING")
    assert "QGNN_SOMETHING" in str(info.value)
    monkeypatch.setenv("QGNN_SOMETHING", "1")
    assert config_module.require_env("QGNN_SOMETHING") == "1"


def _write_config(tmp_path, **fields):
    data = {"task": "venue", "target_type": "http://example.org/Paper", "seed": 3}
    data.update(fields)
    path = tmp_path / "task.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def test_task_config_resolves_relative_paths(tmp_path, exp):
    path = _write_config(tmp_path, kg_path="data/kg.tsv", store_root="store")
    cfg = config_module.load_task_config(path)
    exp.expect("relative paths resolved against the config directory")
    exp.actual(f"kg_path={cfg.kg_path} task_dir={cfg.task_dir}")
    assert cfg.kg_path == str((tmp_path / "data" / "kg.tsv").resolve())
    assert cfg.task_dir == (tmp_path / "store").resolve() / "venue"
    assert cfg.mode == "auto" and cfg.chunk_rows == 1024 and cfg.density_threshold == 0.01


def test_task_config_overrides_win(tmp_path):
    path = _write_config(tmp_path, epochs=50)
    cfg = config_module.load_task_config(path, {"epochs": "7", "lr": None, "mode": "dense"})
    assert cfg.epochs == 7
    assert cfg.lr == 0.01
    assert cfg.mode == "dense"


def test_task_config_errors(tmp_path):
    with pytest.raises(StorageIOError):
        config_module.load_task_config(tmp_path / "missing.json")

    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigurationError):
        config_module.load_task_config(broken)

    with pytest.raises(ConfigurationError):
        config_module.load_task_config(_write_config(tmp_path, kind="link-prediction"))

    with pytest.raises(ConfigurationError):
        config_module.load_task_config(_write_config(tmp_path, chunk_rows=0))

    with pytest.raises(ConfigurationError):
        config_module.load_task_config(None, {"task": "t"})


def test_require_path(tmp_path):
    cfg = config_module.load_task_config(_write_config(tmp_path))
    with pytest.raises(ConfigurationError):
        cfg.require_path("template_path")
