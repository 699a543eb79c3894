import copy

import pytest

from remem.agent import AgentConfig, AgentEngine
from remem.errors import (AlreadyClosed, LlmUnavailable, NoOpenSession,
                          ScriptOrderViolation, SessionStillOpen)
from remem.evaluation import metrics_report
from remem.fixtures import TOPIC_MARKER, planted_fact_script
from remem.llm import (FALLBACK_RESPONSE, LlmClient, MockDeciderClient,
                       MockExtractorClient, MockGeneratorClient,
                       MockJudgeClient)
from remem.transcripts import TranscriptStore


def make_engine(mode="rmm", seed=7, d=256, generator=None, **kwargs):
    cfg = AgentConfig(owner="alice", mode=mode, seed=seed,
                      embedding_dimension=d, **kwargs)
    return AgentEngine(cfg, generator or MockGeneratorClient(),
                       MockExtractorClient(), MockDeciderClient(),
                       MockJudgeClient())


def reflect_facts(engine, facts, session_id=None):
    engine.start_session(session_id)
    for fact in facts:
        engine.run_turn(f"{TOPIC_MARKER} {fact}",
                        scripted_response="Noted.")
    return engine.end_session()


class FailingClient(LlmClient):
    kind = "failing"

    def __init__(self):
        super().__init__("failing")

    def _complete(self, prompt):
        raise LlmUnavailable("backend down")


# -- lifecycle -----------------------------------------------------------------

def test_run_turn_requires_open_session():
    engine = make_engine()
    with pytest.raises(NoOpenSession):
        engine.run_turn("hello")


def test_double_end_session_rejected():
    engine = make_engine()
    engine.start_session()
    engine.run_turn("hello there")
    engine.end_session()
    with pytest.raises(AlreadyClosed):
        engine.end_session()


def test_one_active_session_per_owner():
    engine = make_engine()
    engine.start_session()
    with pytest.raises(SessionStillOpen):
        engine.start_session()


def test_auto_session_ids_skip_used_ids():
    engine = make_engine()
    engine.start_session("alice-s0001")
    engine.run_turn("hello", scripted_response="hi")
    engine.end_session()
    assert engine.start_session() == "alice-s0002"


def test_end_session_resets_buffer():
    engine = make_engine()
    reflect_facts(engine, ["I collect antique barometers for fun"])
    sid = engine.start_session()
    assert engine.session.session_id == sid
    assert engine.session.turns == []


# -- cold start and fallback ------------------------------------------------------

def test_cold_start_first_turn_has_no_trace():
    engine = make_engine()
    engine.start_session()
    result = engine.run_turn("hello, anyone there?")
    assert result.trace is None
    assert result.retrieved == []
    assert result.response


def test_llm_failure_falls_back_and_appends():
    engine = make_engine(generator=FailingClient())
    engine.start_session()
    result = engine.run_turn("hello?")
    assert result.fallback
    assert result.response == FALLBACK_RESPONSE
    assert result.update_stats is None
    assert engine.session.turns[-1].agent_utterance == FALLBACK_RESPONSE


# -- the planted-fact loop ----------------------------------------------------------

def test_planted_fact_recall_with_citation_reward():
    engine = make_engine()
    reflect_facts(engine, [
        "I am allergic to penicillin and avoid it strictly",
        "My dog Biscuit is a beagle who loves fetch",
        "I bake sourdough with a rye starter most weekends",
    ])
    engine.start_session()
    result = engine.run_turn("what am I allergic to, penicillin or mold?")
    assert "penicillin" in result.response
    assert result.trace is not None
    allergy_pos = result.selected_entry_ids.index(
        next(e.entry_id for e in engine.bank.entries()
             if "penicillin" in e.topic_summary))
    assert result.rewards[allergy_pos] == 1


def test_rag_turn_mode_top5_no_trace():
    engine = make_engine(mode="rag_turn")
    engine.start_session("h1")
    for i in range(7):
        engine.run_turn(f"note number {i} about item {i}",
                        scripted_response=f"stored {i}")
    engine.end_session()
    assert len(engine.bank) == 7
    engine.start_session()
    result = engine.run_turn("note number 3 about item 3 please")
    assert result.trace is None
    assert result.rewards is None
    assert len(result.selected_entry_ids) == 5


def test_rag_session_mode_bank_growth():
    engine = make_engine(mode="rag_session")
    reflect_facts(engine, ["alpha fact", "beta fact"], session_id="g1")
    assert len(engine.bank) == 1


def test_no_history_mode_ignores_bank():
    engine = make_engine(mode="no_history")
    reflect_facts(engine, ["I once met a famous accordion player"])
    engine.start_session()
    result = engine.run_turn("who did I meet?")
    assert result.selected_entry_ids == []
    assert result.trace is None


def test_long_context_mode_stuffs_history():
    engine = make_engine(mode="long_context")
    engine.start_session("h1")
    engine.run_turn("my bicycle is painted copper",
                    scripted_response="nice colour")
    engine.end_session()
    engine.start_session()
    prompts = []
    original = engine.generator.complete
    engine.generator.complete = lambda p: (prompts.append(p),
                                           original(p))[1]
    engine.run_turn("what colour is my bicycle?")
    assert "painted copper" in prompts[0]


# -- learning bookkeeping -------------------------------------------------------------

def test_update_count_matches_learnable_turns():
    engine = make_engine(batch_size=2)
    reflect_facts(engine, [
        "I am allergic to penicillin and avoid it strictly",
        "My dog Biscuit is a beagle who loves fetch",
    ])
    engine.start_session()
    for i in range(4):
        engine.run_turn(f"tell me about my dog Biscuit please ({i})")
    # 4 learnable turns, batch of 2 -> all four traces applied
    assert engine.reranker.params.update_count == 4
    assert engine.reranker.pending_count == 0


def test_updates_tracked_and_flushed_at_session_end():
    engine = make_engine(batch_size=10)
    reflect_facts(engine, ["My dog Biscuit is a beagle who loves fetch"])
    engine.start_session()
    engine.run_turn("tell me about my dog Biscuit")
    assert engine.reranker.pending_count == 1
    engine.end_session()
    assert engine.reranker.pending_count == 0
    assert engine.reranker.params.update_count == 1


def test_single_generator_call_per_turn():
    generator = MockGeneratorClient()
    engine = make_engine(generator=generator)
    reflect_facts(engine, ["My dog Biscuit is a beagle who loves fetch"])
    calls_before = generator.call_count
    engine.start_session()
    engine.run_turn("tell me about my dog Biscuit")
    assert generator.call_count == calls_before + 1


# -- scripted runs ------------------------------------------------------------------

def test_run_scripted_record_shape():
    engine = make_engine()
    record = engine.run_scripted(planted_fact_script())
    assert record["mode"] == "rmm"
    assert len(record["questions"]) == 12
    for row in record["questions"]:
        assert set(row) >= {"qid", "question", "answer", "retrieved",
                            "retrieved_segments", "gold_evidence",
                            "judge_verdict"}
        assert len(row["retrieved"]) <= 5


def test_run_scripted_deterministic():
    r1 = make_engine().run_scripted(planted_fact_script())
    r2 = make_engine().run_scripted(planted_fact_script())
    assert r1 == r2
    assert metrics_report(r1).to_json() == metrics_report(r2).to_json()


def test_question_before_evidence_rejected():
    script = copy.deepcopy(planted_fact_script())
    script["questions"][-1]["after_session"] = "s1"
    # q11's evidence lives in s3, which closes after s1
    with pytest.raises(ScriptOrderViolation):
        make_engine().run_scripted(script)


def test_unknown_evidence_session_rejected():
    script = copy.deepcopy(planted_fact_script())
    script["questions"][0]["gold_evidence"][0]["session_id"] = "ghost"
    with pytest.raises(ScriptOrderViolation):
        make_engine().run_scripted(script)


# -- persistence and replay -----------------------------------------------------------

def test_params_checkpoint_cadence(tmp_path):
    from remem.reranker import load_params
    engine = make_engine(data_dir=str(tmp_path), batch_size=1,
                         checkpoint_every_updates=3)
    reflect_facts(engine, ["My dog Biscuit is a beagle who loves fetch"])
    engine.start_session()
    params_path = tmp_path / "alice" / "params.json"
    for i in range(1, 4):
        engine.run_turn(f"tell me about my dog Biscuit ({i})")
    # third applied update crosses the cadence inside the open session
    assert load_params(params_path).update_count == 3


def test_checkpoint_and_reload_roundtrip(tmp_path):
    engine = make_engine(data_dir=str(tmp_path))
    engine.run_scripted(planted_fact_script())
    bank_hash = engine.bank.state_hash()
    update_count = engine.reranker.params.update_count

    resumed = make_engine(data_dir=str(tmp_path))
    assert resumed.bank.state_hash() == bank_hash
    assert resumed.reranker.params.update_count == update_count
    assert len(resumed.transcripts) == 3


def test_replay_from_transcripts_reproduces_bank(tmp_path):
    first = make_engine(data_dir=str(tmp_path))
    first.run_scripted(planted_fact_script())
    saved = TranscriptStore.load(tmp_path / "alice" / "transcripts.jsonl")

    fresh = make_engine()
    fresh.replay(saved)
    assert fresh.bank.state_hash() == first.bank.state_hash()
    assert fresh.transcripts.get("s1").to_dict() == saved.get(
        "s1").to_dict()


def test_transcripts_keep_scripted_agent_text():
    engine = make_engine()
    engine.run_scripted(planted_fact_script())
    stored = engine.transcripts.get("s1")
    assert stored.turns[0].agent_utterance == "Understood, noted (s1)."


def test_all_segments_resolve_against_transcripts():
    engine = make_engine()
    engine.run_scripted(planted_fact_script())
    for entry in engine.bank.entries():
        for segment in entry.segments:
            for idx in segment.turn_indices:
                assert engine.transcripts.has_turn(segment.session_id, idx)


class GarbageGenerator(LlmClient):
    """Returns text with no recognisable citation marker."""

    kind = "garbage"

    def __init__(self):
        super().__init__("garbage")

    def _complete(self, prompt):
        return "words with no markers at all"


def test_malformed_failed_counts_all_negative_by_default():
    engine = make_engine(generator=GarbageGenerator())
    reflect_facts(engine, ["My dog Biscuit is a beagle who loves fetch",
                           "I keep honeybees up on my roof"])
    engine.start_session()
    result = engine.run_turn("anything at all")
    assert result.parse_status == "malformed_failed"
    assert result.rewards == [-1, -1]
    assert engine.reranker.pending_count == 1


def test_skip_update_on_malformed_flag():
    engine = make_engine(generator=GarbageGenerator(),
                         skip_update_on_malformed=True)
    reflect_facts(engine, ["My dog Biscuit is a beagle who loves fetch"])
    engine.start_session()
    result = engine.run_turn("anything at all")
    assert result.parse_status == "malformed_failed"
    assert result.rewards is None
    assert engine.reranker.pending_count == 0


def test_reranker_neutral_at_init_for_eval():
    # learning disabled, zero-init adapters: the evaluation-time top-5
    # equals plain retrieval order over the same topic bank
    engine = make_engine(learning_enabled=False)
    engine.run_scripted(planted_fact_script())
    from remem.embedding import embed
    for question in ("What medication am I allergic to?",
                     "What is my dog called?",
                     "Which marathon am I training for?"):
        result = engine.answer_question(question)
        direct = engine.bank.search_top_k(
            embed(question, engine.embedder), 5)
        assert result["retrieved"] == [r.entry_id for r in direct]


def test_long_context_eval_sees_history():
    engine = make_engine(mode="long_context")
    engine.start_session("h1")
    engine.run_turn("my bicycle is painted copper",
                    scripted_response="nice colour")
    engine.end_session()
    result = engine.answer_question("what colour is my bicycle painted?")
    assert "copper" in result["answer"]


# -- reward trend on a text bandit ------------------------------------------------------

def test_mean_reward_rises_on_bandit_loop():
    engine = make_engine(d=128, batch_size=4)
    facts = [f"zone{i} shelf{i} crate{i}" for i in range(20)]
    engine.start_session("seedbank")
    for i, fact in enumerate(facts):
        engine.run_turn(f"{TOPIC_MARKER} {fact}", scripted_response="ok")
        if i == 16:  # bury the useful detail inside one topic's segment
            engine.run_turn("the vault passphrase is kumquat zeppelin",
                            scripted_response="kept secret")
    engine.end_session()
    assert len(engine.bank) == 20

    query = "remind me of the vault passphrase kumquat zeppelin"
    rewards = []
    for chunk in range(3):
        engine.start_session()
        for _ in range(150):
            result = engine.run_turn(query)
            rewards.append(sum(result.rewards) / len(result.rewards))
        engine.end_session()
    first, last = rewards[:150], rewards[-150:]
    assert sum(last) / 150 > sum(first) / 150
