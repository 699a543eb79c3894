import pytest

from remem.errors import EmptyGold, QuestionSetMismatch
from remem.evaluation import (compare_modes, judge_accuracy, metrics_report,
                              recall_at_k, render_comparison_table, token_f1)
from remem.llm import MockJudgeClient, ScriptedClient
from remem.transcripts import SegmentRef


def seg(sid, *idx):
    return SegmentRef(sid, tuple(idx))


def test_recall_partial_coverage():
    gold = [seg("s0", 1), seg("s0", 4)]
    retrieved = [[seg("s0", 1)], [seg("s1", 0)], [seg("s2", 2)],
                 [seg("s1", 3)], [seg("s0", 7)]]
    assert recall_at_k(retrieved, gold, 5) == 0.5


def test_recall_full_coverage_via_one_entry():
    gold = [seg("s0", 1), seg("s0", 2)]
    retrieved = [[seg("s0", 1, 2, 3)]]
    assert recall_at_k(retrieved, gold, 5) == 1.0


def test_recall_zero_coverage():
    gold = [seg("s0", 1), seg("s0", 2)]
    retrieved = [[seg("s9", 0)], [seg("s9", 1)]]
    assert recall_at_k(retrieved, gold, 5) == 0.0


def test_recall_monotone_in_k():
    gold = [seg("s0", 0), seg("s0", 1), seg("s0", 2)]
    retrieved = [[seg("s0", 0)], [seg("s0", 1)], [seg("s0", 2)]]
    values = [recall_at_k(retrieved, gold, k) for k in (1, 2, 3, 4)]
    assert values == sorted(values)
    assert values[-1] == 1.0


def test_recall_empty_gold_raises():
    with pytest.raises(EmptyGold):
        recall_at_k([[seg("s0", 0)]], [], 5)


def test_judge_accuracy_parses_leading_token():
    verdict, flag = judge_accuracy("q", "Paris", "It is Paris.",
                                   ScriptedClient(["Yes"]))
    assert (verdict, flag) == ("yes", False)
    verdict, flag = judge_accuracy("q", "Paris", "No idea.",
                                   ScriptedClient(["no."]))
    assert (verdict, flag) == ("no", False)


def test_judge_malformed_is_conservative_no():
    verdict, flag = judge_accuracy("q", "Paris", "whatever",
                                   ScriptedClient(["Perhaps?"]))
    assert (verdict, flag) == ("no", True)


def test_mock_judge_substring_rule():
    verdict, _ = judge_accuracy("capital of France?", "Paris",
                                "The capital of France is Paris.",
                                MockJudgeClient())
    assert verdict == "yes"
    verdict, _ = judge_accuracy("capital of France?", "Paris",
                                "France is a country in Europe.",
                                MockJudgeClient())
    assert verdict == "no"


def test_token_f1_values():
    assert token_f1("a b c", "a b c") == 1.0
    assert token_f1("x y z", "a b c") == 0.0
    assert token_f1("a b c", "a b d") == pytest.approx(2 / 3)
    assert token_f1("anything", "") == 0.0


def make_record(mode, answers):
    return {
        "mode": mode, "seed": 1, "config_hash": "abc", "m_rerank": 5,
        "questions": [
            {"qid": f"q{i}", "question": f"question {i}",
             "gold_answer": gold, "answer": answer,
             "gold_evidence": [{"session_id": "s0", "turn_indices": [i]}],
             "retrieved": ["e0"],
             "retrieved_segments": [[{"session_id": "s0",
                                      "turn_indices": [i] if hit else [99]}]],
             "judge_verdict": "yes" if gold in answer else "no"}
            for i, (gold, answer, hit) in enumerate(answers)]}


def test_metrics_report_aggregates():
    record = make_record("rmm", [("paris", "paris it is", True),
                                 ("rome", "no clue", False)])
    report = metrics_report(record)
    assert report.recall_at_k == 0.5
    assert report.accuracy == 0.5
    assert 0 <= report.token_f1 <= 1
    assert report.to_dict()["aggregates"]["recall_at_k"] == 0.5


def test_compare_modes_table():
    r1 = make_record("rmm", [("paris", "paris", True), ("rome", "rome", True)])
    r2 = make_record("rag_turn", [("paris", "nope", False),
                                  ("rome", "rome", True)])
    comparison = compare_modes([r1, r2])
    assert [row["mode"] for row in comparison["rows"]] == ["rmm", "rag_turn"]
    table = render_comparison_table(comparison)
    assert table.startswith("mode\trecall_at_k")
    assert len(table.split("\n")) == 3


def test_compare_modes_single_record():
    r1 = make_record("rmm", [("paris", "paris", True)])
    assert len(compare_modes([r1])["rows"]) == 1


def test_compare_modes_question_mismatch():
    r1 = make_record("rmm", [("paris", "paris", True)])
    r2 = make_record("rag_turn", [("paris", "paris", True),
                                  ("rome", "rome", True)])
    with pytest.raises(QuestionSetMismatch):
        compare_modes([r1, r2])
