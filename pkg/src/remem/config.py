"""Runtime configuration: file + environment overrides (RMM_ prefix).

The config file is flat JSON whose keys mirror RuntimeConfig fields.
Every key can be overridden by an environment variable named
RMM_<KEY-IN-UPPERCASE>, e.g. RMM_K_RETRIEVE=50.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .agent import AgentConfig, AgentEngine
from .llm import (LlmClient, MockDeciderClient, MockExtractorClient,
                  MockGeneratorClient, MockJudgeClient, RemoteChatClient)

ENV_PREFIX = "RMM_"


@dataclass
class RuntimeConfig:
    # agent behaviour (see AgentConfig for semantics)
    owner: str = "user"
    mode: str = "rmm"
    k_retrieve: int = 20
    m_rerank: int = 5
    k_update: int = 5
    learning_enabled: bool = True
    reward_credit: str = "per_position"
    batch_size: int = 4
    tau: float = 0.5
    eta: float = 1e-3
    baseline: float = 0.5
    seed: int = 0
    embedding_dimension: int = 512
    session_context_cap: int = 20
    long_context_char_cap: int = 8000
    skip_update_on_malformed: bool = False
    use_wall_clock: bool = False
    shared_params: bool = False

    # operational shell
    data_dir: str | None = None
    bind_host: str = "127.0.0.1"
    bind_port: int = 8080
    request_deadline_s: float = 60.0
    log_level: str = "INFO"

    # client bindings: "mock" or "remote"
    llm_backend: str = "mock"
    llm_endpoint: str | None = None
    llm_model: str = "chat-default"

    # metric floors for CI gating, e.g. {"recall_at_k": 0.9}
    metric_floors: dict = field(default_factory=dict)

    def agent_config(self, owner: str | None = None) -> AgentConfig:
        return AgentConfig(
            owner=owner or self.owner,
            mode=self.mode,
            k_retrieve=self.k_retrieve,
            m_rerank=self.m_rerank,
            k_update=self.k_update,
            learning_enabled=self.learning_enabled,
            reward_credit=self.reward_credit,
            batch_size=self.batch_size,
            tau=self.tau,
            eta=self.eta,
            baseline=self.baseline,
            seed=self.seed,
            embedding_dimension=self.embedding_dimension,
            session_context_cap=self.session_context_cap,
            long_context_char_cap=self.long_context_char_cap,
            skip_update_on_malformed=self.skip_update_on_malformed,
            data_dir=self.data_dir,
            use_wall_clock=self.use_wall_clock,
        )

    def make_clients(self) -> dict[str, LlmClient]:
        if self.llm_backend == "mock":
            return {"generator": MockGeneratorClient(),
                    "extractor": MockExtractorClient(),
                    "decider": MockDeciderClient(),
                    "judge": MockJudgeClient()}
        if self.llm_backend == "remote":
            if not self.llm_endpoint:
                raise ValueError("remote backend requires llm_endpoint")

            def client(role):
                return RemoteChatClient(self.llm_endpoint, self.llm_model,
                                        deadline_s=self.request_deadline_s,
                                        client_id=role)

            return {role: client(role)
                    for role in ("generator", "extractor", "decider",
                                 "judge")}
        raise ValueError(f"unknown llm backend {self.llm_backend!r}")

    def make_engine(self, owner: str | None = None) -> AgentEngine:
        clients = self.make_clients()
        return AgentEngine(self.agent_config(owner),
                           generator=clients["generator"],
                           extractor=clients["extractor"],
                           decider=clients["decider"],
                           judge=clients["judge"])


def _coerce(raw: str, target_type):
    if target_type is bool:
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    if target_type is dict:
        return json.loads(raw)
    return raw


def load_config(path: str | Path | None = None,
                env: dict | None = None) -> RuntimeConfig:
    """Config file values, then RMM_* environment overrides on top."""
    env = os.environ if env is None else env
    values: dict = {}
    if path is not None:
        values.update(json.loads(Path(path).read_text(encoding="utf-8")))
    defaults = RuntimeConfig()
    names = [f.name for f in dataclasses.fields(RuntimeConfig)]
    unknown = set(values) - set(names)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    for name in names:
        env_key = ENV_PREFIX + name.upper()
        if env_key in env:
            sample = getattr(defaults, name)
            base = type(sample) if sample is not None else str
            values[name] = _coerce(env[env_key], base)
    return RuntimeConfig(**values)
