import json

import pytest

from remem.config import RuntimeConfig, load_config


def test_defaults_match_documented_hyperparameters():
    cfg = RuntimeConfig()
    assert cfg.k_retrieve == 20
    assert cfg.m_rerank == 5
    assert cfg.tau == 0.5
    assert cfg.baseline == 0.5
    assert cfg.eta == 1e-3
    assert cfg.batch_size == 4


def test_file_values_loaded(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"owner": "bob", "k_retrieve": 50,
                                "metric_floors": {"accuracy": 0.5}}))
    cfg = load_config(path, env={})
    assert cfg.owner == "bob"
    assert cfg.k_retrieve == 50
    assert cfg.metric_floors == {"accuracy": 0.5}


def test_env_overrides_typed(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"k_retrieve": 50}))
    cfg = load_config(path, env={
        "RMM_K_RETRIEVE": "30",
        "RMM_ETA": "0.01",
        "RMM_LEARNING_ENABLED": "false",
        "RMM_MODE": "rag_turn",
        "RMM_METRIC_FLOORS": '{"recall_at_k": 0.9}',
        "RMM_DATA_DIR": "/tmp/somewhere",
    })
    assert cfg.k_retrieve == 30
    assert cfg.eta == 0.01
    assert cfg.learning_enabled is False
    assert cfg.mode == "rag_turn"
    assert cfg.metric_floors == {"recall_at_k": 0.9}
    assert cfg.data_dir == "/tmp/somewhere"


def test_unknown_config_key_rejected(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"frobnicate": 1}))
    with pytest.raises(ValueError):
        load_config(path, env={})


def test_agent_config_inherits_values():
    runtime = RuntimeConfig(owner="alice", mode="rag_turn", seed=3)
    agent = runtime.agent_config()
    assert agent.owner == "alice"
    assert agent.mode == "rag_turn"
    assert agent.seed == 3
    assert agent.learning_enabled is False  # baseline modes force it off


def test_mock_backend_clients():
    clients = RuntimeConfig().make_clients()
    assert set(clients) == {"generator", "extractor", "decider", "judge"}


def test_remote_backend_requires_endpoint():
    with pytest.raises(ValueError):
        RuntimeConfig(llm_backend="remote").make_clients()
    clients = RuntimeConfig(llm_backend="remote",
                            llm_endpoint="http://x").make_clients()
    assert clients["generator"].kind == "remote_chat"
