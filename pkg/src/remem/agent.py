"""Per-turn orchestration: retrieve, rerank, generate with citations,
reward the reranker, and consolidate memory when a session closes.

Besides the full pipeline ("rmm" mode) the engine runs the ablation
modes: plain retrieval over fixed turn/session/mixed granularity
("rag_turn", "rag_session", "rag_mix", top-5 straight from retrieval,
no reranker, no learning), context stuffing ("long_context"), and a
memoryless "no_history" floor.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attribution import (AttributedResponse, build_generation_prompt,
                          parse_citations, rewards_from_citations,
                          template_hash)
from .bank import MemoryBank, MemoryEntry
from .embedding import EmbedderConfig, embed
from .errors import (AlreadyClosed, LlmUnavailable, NoOpenSession,
                     ScriptOrderViolation, SessionStillOpen)
from .evaluation import EvalQuestion, judge_accuracy
from .llm import FALLBACK_RESPONSE, LlmClient
from .reflection import (DEFAULT_K_UPDATE, ReflectionLedger, ReflectionReport,
                         reflect_session)
from .reranker import (DEFAULT_BASELINE, DEFAULT_ETA, DEFAULT_TAU, Reranker,
                       SelectionTrace, UpdateStats)
from .transcripts import LogicalClock, Session, TranscriptStore, wall_clock

MODES = ("rmm", "rag_turn", "rag_session", "rag_mix", "long_context",
         "no_history")
BASELINE_MODES = ("rag_turn", "rag_session", "rag_mix", "long_context",
                  "no_history")
BASELINE_TOP_K = 5  # without a reranker, retrieval feeds the top 5 directly


@dataclass
class AgentConfig:
    owner: str = "user"
    mode: str = "rmm"
    k_retrieve: int = 20
    m_rerank: int = 5
    k_update: int = DEFAULT_K_UPDATE
    learning_enabled: bool = True
    reward_credit: str = "per_position"  # | "set_mean"
    batch_size: int = 4
    tau: float = DEFAULT_TAU
    eta: float = DEFAULT_ETA
    baseline: float = DEFAULT_BASELINE
    seed: int = 0
    embedding_dimension: int = 512
    session_context_cap: int = 20
    long_context_char_cap: int = 8000
    skip_update_on_malformed: bool = False
    checkpoint_every_updates: int = 50
    data_dir: str | None = None
    use_wall_clock: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.m_rerank > self.k_retrieve:
            raise ValueError("m_rerank must not exceed k_retrieve")
        if self.mode in BASELINE_MODES:
            self.learning_enabled = False

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(canon.encode()).hexdigest()[:12]


@dataclass
class TurnResult:
    session_id: str
    turn_index: int
    response: str
    mode: str
    retrieved: list[tuple[str, float]] = field(default_factory=list)
    selected_entry_ids: list[str] = field(default_factory=list)
    trace: SelectionTrace | None = None
    rewards: list[int] | None = None
    parse_status: str | None = None
    update_stats: UpdateStats | None = None
    fallback: bool = False
    timing: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "session_id": self.session_id,
            "turn_index": self.turn_index,
            "response": self.response,
            "mode": self.mode,
            "retrieved": [[eid, score] for eid, score in self.retrieved],
            "selected_entry_ids": list(self.selected_entry_ids),
            "rewards": self.rewards,
            "parse_status": self.parse_status,
            "fallback": self.fallback,
            "timing": self.timing,
        }
        if self.trace is not None:
            d["trace"] = {
                "selected_positions": self.trace.selected_positions,
                "log_prob": self.trace.log_prob,
                "mode": self.trace.mode,
            }
        if self.update_stats is not None:
            d["update_stats"] = {
                "grad_norm_w_q": self.update_stats.grad_norm_w_q,
                "grad_norm_w_m": self.update_stats.grad_norm_w_m,
                "advantage_sum": self.update_stats.advantage_sum,
                "clipped": self.update_stats.clipped,
                "update_index": self.update_stats.update_index,
            }
        return d


def _ingestion_mode_for(mode: str) -> str:
    return {"rag_turn": "turn", "rag_session": "session",
            "rag_mix": "mix"}.get(mode, "topic")


class AgentEngine:
    """One owner's full memory loop; see run_turn / end_session."""

    def __init__(self, config: AgentConfig, generator: LlmClient,
                 extractor: LlmClient | None = None,
                 decider: LlmClient | None = None,
                 judge: LlmClient | None = None):
        self.config = config
        self.generator = generator
        self.extractor = extractor
        self.decider = decider
        self.judge = judge
        self.clock = wall_clock if config.use_wall_clock else LogicalClock()
        self.embedder = EmbedderConfig(dimension=config.embedding_dimension)
        self.transcripts = TranscriptStore()
        self._session: Session | None = None
        self._session_counter = 0
        self._params_checkpointed_at = 0
        self.reward_history: list[float] = []

        data_dir = Path(config.data_dir) if config.data_dir else None
        self._paths = None
        ledger_path = None
        if data_dir is not None:
            base = data_dir / config.owner
            base.mkdir(parents=True, exist_ok=True)
            self._paths = {
                "bank": base / "bank.jsonl",
                "params": base / "params.json",
                "transcripts": base / "transcripts.jsonl",
            }
            ledger_path = base / "reflected.json"
        self.ledger = ReflectionLedger(ledger_path)

        self.bank = MemoryBank(
            bank_id=f"{config.owner}-bank", owner=config.owner,
            embedder=self.embedder,
            ingestion_mode=_ingestion_mode_for(config.mode),
            clock=self.clock)
        self.reranker = Reranker.zero_init(
            config.embedding_dimension, tau=config.tau, eta=config.eta,
            baseline=config.baseline, rng_seed=config.seed)
        if self._paths is not None:
            self._load_state()

    # -- persistence --------------------------------------------------------

    def _load_state(self) -> None:
        if self._paths["bank"].exists():
            self.bank = MemoryBank.load(self._paths["bank"], self.embedder,
                                        clock=self.clock)
        if self._paths["params"].exists():
            self.reranker = Reranker.load(
                self._paths["params"],
                dimension=self.config.embedding_dimension)
        if self._paths["transcripts"].exists():
            self.transcripts = TranscriptStore.load(
                self._paths["transcripts"])
            self._session_counter = len(self.transcripts)

    def checkpoint(self) -> None:
        if self._paths is None:
            return
        self.bank.save(self._paths["bank"])
        self.reranker.save(self._paths["params"])
        self.transcripts.save(self._paths["transcripts"])

    # -- session lifecycle -----------------------------------------------------

    @property
    def session(self) -> Session | None:
        return self._session

    def start_session(self, session_id: str | None = None) -> str:
        if self._session is not None and not self._session.closed:
            raise SessionStillOpen(
                f"session {self._session.session_id} is still open; one "
                f"active session per owner")
        if session_id is None:
            while True:
                self._session_counter += 1
                session_id = (f"{self.config.owner}-s"
                              f"{self._session_counter:04d}")
                if session_id not in self.transcripts:
                    break
        elif session_id in self.transcripts:
            raise ValueError(f"session id {session_id} already used")
        self._session = Session(session_id)
        return session_id

    def _require_open(self) -> Session:
        if self._session is None:
            raise NoOpenSession("no session started")
        if self._session.closed:
            raise AlreadyClosed(
                f"session {self._session.session_id} already closed")
        return self._session

    def end_session(self) -> ReflectionReport:
        session = self._require_open()
        session.close()
        self.transcripts.add(session)
        report = ReflectionReport(session_id=session.session_id)
        if session.turns:
            if self.config.mode == "rmm":
                if self.extractor is None or self.decider is None:
                    raise ValueError(
                        "rmm mode needs extractor and decider clients")
                report = reflect_session(
                    self.bank, session, self.extractor, self.decider,
                    ledger=self.ledger, k_update=self.config.k_update)
            elif self.config.mode in ("rag_turn", "rag_session", "rag_mix"):
                self.bank.ingest_fixed_granularity(session)
        if self.reranker.pending_count:
            self.reranker.apply_accumulated()
        self.checkpoint()
        return report

    # -- the turn pipeline --------------------------------------------------------

    def _retrieve_and_select(self, query: str, train: bool
                             ) -> tuple[list[MemoryEntry],
                                        list[tuple[str, float]],
                                        SelectionTrace | None]:
        cfg = self.config
        if cfg.mode in ("no_history", "long_context") or len(self.bank) == 0:
            return [], [], None
        query_emb = embed(query, self.embedder)
        if cfg.mode == "rmm":
            results = self.bank.search_top_k(query_emb, cfg.k_retrieve)
            retrieved = [(r.entry_id, r.score) for r in results]
            entries = [self.bank.get(r.entry_id) for r in results]
            mems = np.stack([e.embedding.values for e in entries])
            m_eff = min(cfg.m_rerank, len(entries))
            trace = self.reranker.rerank(
                query_emb.values, mems, m_eff,
                mode="train" if train else "infer",
                candidate_entry_ids=[e.entry_id for e in entries])
            selected = [entries[i] for i in trace.selected_positions]
            return selected, retrieved, trace
        results = self.bank.search_top_k(query_emb, BASELINE_TOP_K)
        retrieved = [(r.entry_id, r.score) for r in results]
        return [self.bank.get(r.entry_id) for r in results], retrieved, None

    def _context_turns(self, session: Session) -> list:
        if self.config.mode == "no_history":
            return list(session.turns[-self.config.session_context_cap:])
        if self.config.mode == "long_context":
            turns = []
            for sid in self.transcripts.session_ids():
                turns.extend(self.transcripts.get(sid).turns)
            turns.extend(session.turns)
            kept, used = [], 0
            for turn in reversed(turns):
                used += len(turn.user_utterance) + len(turn.agent_utterance)
                if used > self.config.long_context_char_cap and kept:
                    break
                kept.append(turn)
            return list(reversed(kept))
        return list(session.turns[-self.config.session_context_cap:])

    def run_turn(self, query: str,
                 scripted_response: str | None = None) -> TurnResult:
        """One full turn. With ``scripted_response`` (corpus replay), the
        transcript keeps the given agent utterance while generation still
        runs for the citation rewards."""
        session = self._require_open()
        if not query.strip():
            raise ValueError("query must be non-empty")
        cfg = self.config
        timing: dict[str, float] = {}
        learn = (cfg.mode == "rmm" and cfg.learning_enabled)

        t0 = time.perf_counter()
        selected, retrieved, trace = self._retrieve_and_select(query, learn)
        timing["retrieve_s"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        prompt = build_generation_prompt(
            query, self._context_turns(session), selected, self.transcripts)
        fallback = False
        try:
            raw = self.generator.complete(prompt)
        except LlmUnavailable:
            raw = FALLBACK_RESPONSE
            fallback = True
        timing["generate_s"] = time.perf_counter() - t0

        attributed: AttributedResponse | None = None
        rewards = None
        update_stats = None
        response = raw
        if not fallback and selected:
            attributed = parse_citations(raw, len(selected))
            response = attributed.text or raw
        elif not fallback:
            attributed = parse_citations(raw, 0)
            response = attributed.text or raw

        t0 = time.perf_counter()
        if (learn and trace is not None and not fallback
                and attributed is not None):
            skip = (attributed.parse_status == "malformed_failed"
                    and cfg.skip_update_on_malformed)
            if not skip:
                rewards = rewards_from_citations(attributed, len(selected))
                update_stats = self.reranker.accumulate(
                    trace, rewards, credit=cfg.reward_credit)
                self.reward_history.append(sum(rewards) / len(rewards))
                if self.reranker.pending_count >= cfg.batch_size:
                    self.reranker.apply_accumulated()
                    applied = self.reranker.params.update_count
                    if (self._paths is not None and applied
                            - self._params_checkpointed_at
                            >= cfg.checkpoint_every_updates):
                        self.reranker.save(self._paths["params"])
                        self._params_checkpointed_at = applied
        timing["update_s"] = time.perf_counter() - t0

        stored = scripted_response if scripted_response is not None \
            else response
        turn = session.append_turn(query, stored, timestamp=self.clock())
        return TurnResult(
            session_id=session.session_id,
            turn_index=turn.index,
            response=response,
            mode=cfg.mode,
            retrieved=retrieved,
            selected_entry_ids=[e.entry_id for e in selected],
            trace=trace,
            rewards=rewards,
            parse_status=attributed.parse_status if attributed else None,
            update_stats=update_stats,
            fallback=fallback,
            timing=timing,
        )

    # -- evaluation-time answering -----------------------------------------------

    def answer_question(self, question: str) -> dict:
        """Answer with learning frozen and deterministic selection."""
        selected, retrieved, trace = self._retrieve_and_select(question,
                                                               train=False)
        context = (self._context_turns(Session("eval"))
                   if self.config.mode == "long_context" else [])
        prompt = build_generation_prompt(question, context, selected,
                                         self.transcripts)
        try:
            raw = self.generator.complete(prompt)
        except LlmUnavailable:
            raw = FALLBACK_RESPONSE
        attributed = parse_citations(raw, len(selected))
        return {
            "answer": attributed.text or raw,
            "retrieved": [e.entry_id for e in selected],
            "retrieved_segments": [[s.to_dict() for s in e.segments]
                                   for e in selected],
            "parse_status": attributed.parse_status,
        }

    # -- scripted replay ------------------------------------------------------------

    def run_scripted(self, script: dict) -> dict:
        """Replay scripted sessions through the live pipeline, then answer
        the evaluation questions with learning disabled."""
        sessions = script["sessions"]
        questions = [EvalQuestion.from_dict(q)
                     for q in script.get("questions", [])]
        order = {s["session_id"]: i for i, s in enumerate(sessions)}
        for question in questions:
            limit = (order[question.after_session]
                     if question.after_session in order
                     else len(sessions) - 1)
            for seg in question.gold_evidence:
                if seg.session_id not in order:
                    raise ScriptOrderViolation(
                        f"{question.qid}: evidence session "
                        f"{seg.session_id!r} not in script")
                if order[seg.session_id] > limit:
                    raise ScriptOrderViolation(
                        f"{question.qid}: asked before evidence session "
                        f"{seg.session_id!r}")
        for record in sessions:
            self.start_session(record["session_id"])
            for turn in record["turns"]:
                self.run_turn(turn["user_utterance"],
                              scripted_response=turn.get("agent_utterance"))
            self.end_session()
        answered = []
        for question in questions:
            result = self.answer_question(question.question)
            row = question.to_dict()
            row.update(result)
            if self.judge is not None:
                verdict, _ = judge_accuracy(question.question,
                                            question.gold_answer,
                                            result["answer"], self.judge)
                row["judge_verdict"] = verdict
            answered.append(row)
        return {
            "mode": self.config.mode,
            "seed": self.config.seed,
            "config_hash": self.config.config_hash(),
            "template_hashes": {name: template_hash(name)
                                for name in ("generate", "judge")},
            "m_rerank": self.config.m_rerank,
            "bank_size": len(self.bank),
            "bank_hash": self.bank.state_hash(),
            "questions": answered,
        }

    def replay(self, transcripts: TranscriptStore) -> None:
        """Re-run stored sessions through the live pipeline, keeping the
        recorded agent utterances."""
        for sid in transcripts.session_ids():
            source = transcripts.get(sid)
            self.start_session(sid)
            for turn in source.turns:
                self.run_turn(turn.user_utterance,
                              scripted_response=turn.agent_utterance)
            self.end_session()

    def metrics(self) -> dict:
        window = self.reward_history[-100:]
        return {
            "owner": self.config.owner,
            "mode": self.config.mode,
            "seed": self.config.seed,
            "bank_size": len(self.bank),
            "sessions": len(self.transcripts),
            "updates_applied": self.reranker.params.update_count,
            "pending_traces": self.reranker.pending_count,
            "mean_reward_window": (sum(window) / len(window)) if window
            else None,
        }
