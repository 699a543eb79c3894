"""Retrieval and answer-quality metrics over completed evaluation runs.

Recall@K is evidence coverage at turn granularity: the fraction of gold
(session, turn) pairs covered by the segments of the top-K retrieved
entries. Answer accuracy comes from a Yes/No judge call; token F1 is a
cheap lexical proxy kept alongside.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .attribution import build_judge_prompt
from .embedding import tokenize
from .errors import EmptyGold, QuestionSetMismatch
from .llm import LlmClient
from .transcripts import SegmentRef, atomic_write, canonical_json


@dataclass(frozen=True)
class EvalQuestion:
    qid: str
    question: str
    gold_answer: str
    gold_evidence: tuple[SegmentRef, ...] = ()
    after_session: str | None = None

    def to_dict(self) -> dict:
        d = {"qid": self.qid, "question": self.question,
             "gold_answer": self.gold_answer,
             "gold_evidence": [s.to_dict() for s in self.gold_evidence]}
        if self.after_session is not None:
            d["after_session"] = self.after_session
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalQuestion":
        return cls(qid=d["qid"], question=d["question"],
                   gold_answer=d.get("gold_answer", ""),
                   gold_evidence=tuple(SegmentRef.from_dict(s)
                                       for s in d.get("gold_evidence", [])),
                   after_session=d.get("after_session"))


def _expand(segments) -> set[tuple[str, int]]:
    pairs = set()
    for seg in segments:
        for idx in seg.turn_indices:
            pairs.add((seg.session_id, idx))
    return pairs


def recall_at_k(retrieved_segments: list[list[SegmentRef]],
                gold: list[SegmentRef], k: int) -> float:
    """Coverage fraction of gold turns by the top-k entries' segments."""
    if k < 1:
        raise ValueError("k must be >= 1")
    gold_pairs = _expand(gold)
    if not gold_pairs:
        raise EmptyGold("question has no gold evidence")
    covered: set[tuple[str, int]] = set()
    for segments in retrieved_segments[:k]:
        covered |= _expand(segments)
    return len(gold_pairs & covered) / len(gold_pairs)


def judge_accuracy(question: str, gold_answer: str, response: str,
                   judge: LlmClient) -> tuple[str, bool]:
    """(verdict, malformed_flag); an unparseable judge reply counts as no."""
    raw = judge.complete(build_judge_prompt(question, gold_answer, response))
    first = raw.strip().split("\n")[0].strip().strip(".:").lower()
    if first == "yes":
        return "yes", False
    if first == "no":
        return "no", False
    return "no", True


def token_f1(response: str, gold_answer: str) -> float:
    """Harmonic mean of token precision/recall over the multiset overlap."""
    gold_tokens = Counter(tokenize(gold_answer))
    resp_tokens = Counter(tokenize(response))
    if not gold_tokens or not resp_tokens:
        return 0.0
    overlap = sum((gold_tokens & resp_tokens).values())
    if overlap == 0:
        return 0.0
    precision = overlap / sum(resp_tokens.values())
    recall = overlap / sum(gold_tokens.values())
    return 2 * precision * recall / (precision + recall)


@dataclass
class MetricsReport:
    mode: str
    seed: int
    config_hash: str
    k: int
    per_question: list[dict] = field(default_factory=list)
    recall_at_k: float | None = None
    accuracy: float | None = None
    token_f1: float | None = None
    skipped_empty_gold: int = 0

    def to_dict(self) -> dict:
        return {
            "mode": self.mode, "seed": self.seed,
            "config_hash": self.config_hash, "k": self.k,
            "aggregates": {"recall_at_k": self.recall_at_k,
                           "accuracy": self.accuracy,
                           "token_f1": self.token_f1},
            "skipped_empty_gold": self.skipped_empty_gold,
            "per_question": self.per_question,
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict()) + "\n"

    def save(self, path: str | Path) -> None:
        atomic_write(path, self.to_json())


def metrics_report(record: dict, judge: LlmClient | None = None,
                   k: int | None = None) -> MetricsReport:
    """Score one evaluation run record (the output of a scripted run)."""
    k = k or record.get("m_rerank", 5)
    report = MetricsReport(mode=record["mode"], seed=record["seed"],
                           config_hash=record["config_hash"], k=k)
    recalls, accs, f1s = [], [], []
    for q in record["questions"]:
        gold = [SegmentRef.from_dict(s) for s in q["gold_evidence"]]
        retrieved = [[SegmentRef.from_dict(s) for s in segs]
                     for segs in q["retrieved_segments"]]
        row = {"qid": q["qid"], "answer": q["answer"],
               "retrieved": list(q["retrieved"])}
        if gold:
            row["recall"] = recall_at_k(retrieved, gold, k)
            recalls.append(row["recall"])
        else:
            report.skipped_empty_gold += 1
        if "judge_verdict" in q:
            verdict = q["judge_verdict"]
        elif judge is not None:
            verdict, _ = judge_accuracy(q["question"], q["gold_answer"],
                                        q["answer"], judge)
        else:
            verdict = None
        if verdict is not None:
            row["judge_verdict"] = verdict
            accs.append(1.0 if verdict == "yes" else 0.0)
        row["token_f1"] = token_f1(q["answer"], q["gold_answer"])
        f1s.append(row["token_f1"])
        report.per_question.append(row)
    if recalls:
        report.recall_at_k = sum(recalls) / len(recalls)
    if accs:
        report.accuracy = sum(accs) / len(accs)
    if f1s:
        report.token_f1 = sum(f1s) / len(f1s)
    return report


def compare_modes(records: list[dict]) -> dict:
    """Side-by-side aggregates for runs over one shared question set."""
    if not records:
        raise ValueError("no records to compare")
    qid_sets = [frozenset(q["qid"] for q in r["questions"]) for r in records]
    if len(set(qid_sets)) != 1:
        raise QuestionSetMismatch(
            "records cover different question sets: "
            + ", ".join(str(sorted(s)[:3]) for s in set(qid_sets)))
    rows = []
    reports = [metrics_report(record) for record in records]
    for report in reports:
        rows.append({"mode": report.mode, "seed": report.seed,
                     "recall_at_k": report.recall_at_k,
                     "accuracy": report.accuracy,
                     "token_f1": report.token_f1})
    return {"k": reports[0].k, "rows": rows}


def render_comparison_table(comparison: dict) -> str:
    headers = ["mode", "recall_at_k", "accuracy", "token_f1"]
    lines = ["\t".join(headers)]
    for row in comparison["rows"]:
        cells = [str(row["mode"])]
        for key in headers[1:]:
            value = row[key]
            cells.append("-" if value is None else f"{value:.4f}")
        lines.append("\t".join(cells))
    return "\n".join(lines)


def load_record(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
