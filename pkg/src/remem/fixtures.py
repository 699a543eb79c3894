"""Synthetic corpora for offline evaluation and tests.

Three generators:
- a planted-fact script (3 sessions, 12 fact statements, one restated
  topic that exercises the merge path) whose questions are answerable
  with the mock clients alone;
- a multi-evidence script where one topic's facts spread across several
  turns, separating the fixed-granularity modes;
- a selection bandit (basis-vector memories, one always-rewarded target)
  for reranker convergence runs.

All fact sentences start with the mock extractor's topic marker so
consolidation is fully deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .transcripts import atomic_write

TOPIC_MARKER = "#topic"

# (fact sentence, follow-up user turns, question, gold answer)
_PLANTED_FACTS = [
    ("I am allergic to penicillin and I avoid it strictly.",
     [],
     "What medication am I allergic to?",
     "penicillin"),
    ("I grew up in Lisbon before moving abroad for work.",
     ["The old tram lines there are still my favourite memory."],
     "Which city did I grow up in?",
     "Lisbon"),
    ("My dog Biscuit is a beagle who loves playing fetch.",
     [],
     "What is my dog called?",
     "Biscuit"),
    ("I am training for the Boston marathon this spring.",
     [],
     "Which marathon am I training for?",
     "Boston"),
    ("I play jazz guitar at the open mic on Fridays.",
     [],
     "What instrument do I play at the open mic?",
     "guitar"),
    ("I follow a vegan diet and cook tofu curry most weeks.",
     [],
     "What diet do I follow?",
     "vegan"),
    ("I work as a bridge engineer designing suspension spans.",
     ["Inspecting cable anchors is the part I enjoy most."],
     "What do I design as a bridge engineer?",
     "suspension spans"),
    ("My sister Clara teaches physics at a school in Geneva.",
     [],
     "What subject does my sister Clara teach?",
     "physics"),
    ("I drive an electric hatchback car with a solar roof.",
     [],
     "What car do I drive?",
     "electric hatchback"),
    ("My favourite colour is teal like shallow lagoon water.",
     [],
     "What is my favourite colour?",
     "teal"),
    ("I keep honeybees in two hives up on my roof.",
     [],
     "What insects do I keep on my roof?",
     "honeybees"),
    # restates fact 0; the decider merges it into the allergy entry
    ("I am allergic to penicillin and I avoid it strictly, plus shellfish "
     "lately.",
     [],
     "Besides penicillin what am I allergic to?",
     "shellfish"),
]


def _session(session_id: str, fact_rows: list[tuple]) -> tuple[dict, dict]:
    """Build one scripted session; returns (session record, fact->turn map)."""
    turns = []
    marker_turn: dict[int, int] = {}
    for fact_index, (fact, follow_ups, _, _) in fact_rows:
        marker_turn[fact_index] = len(turns)
        turns.append({"index": len(turns),
                      "user_utterance": f"{TOPIC_MARKER} {fact}",
                      "agent_utterance": f"Understood, noted ({session_id})."})
        for text in follow_ups:
            turns.append({"index": len(turns), "user_utterance": text,
                          "agent_utterance": "Good to know."})
    record = {"session_id": session_id, "turns": turns, "closed": True}
    return record, marker_turn


def planted_fact_script() -> dict:
    """3 sessions, 12 planted facts, 12 questions with turn-level evidence."""
    groups = [("s1", [0, 1, 2, 3]), ("s2", [4, 5, 6, 7]),
              ("s3", [8, 9, 10, 11])]
    sessions = []
    questions = []
    for session_id, fact_indices in groups:
        rows = [(i, _PLANTED_FACTS[i]) for i in fact_indices]
        record, marker_turn = _session(session_id, rows)
        sessions.append(record)
        for i in fact_indices:
            _, _, question, gold = _PLANTED_FACTS[i]
            questions.append({
                "qid": f"q{i:02d}",
                "question": question,
                "gold_answer": gold,
                "gold_evidence": [{"session_id": session_id,
                                   "turn_indices": [marker_turn[i]]}],
            })
    return {"sessions": sessions, "questions": questions}


# Only the opening turn names the topic; the follow-ups rely on context,
# which is exactly what fragments fixed turn-level retrieval.
_MARATHON_TURNS = [
    ("I am training for the coastal marathon happening in April.",
     "Sounds ambitious."),
    ("Long runs happen on Saturday mornings by the harbour.",
     "Nice routine."),
    ("Coach Elena sets the interval sessions on Tuesdays.",
     "Good structure."),
    ("The goal is finishing in just under four hours.",
     "Very achievable."),
]

_DISTRACTOR_TOPICS = [
    "I took up wheel-thrown pottery at my studio downtown.",
    "I play correspondence chess with my club in Reykjavik.",
    "I grow rare cacti in my small greenhouse by the shed.",
    "I practice my violin for an amateur chamber group.",
    "I bake my sourdough bread with a rye starter every weekend.",
    "I paddle my sea kayak along the estuary most summers.",
    "I built my backyard telescope to photograph the moon.",
    "I am learning Spanish with my tutor twice a week.",
]


def multi_evidence_script() -> dict:
    """One topic whose facts spread over four turns, plus distractors.

    Only the first turn carries the topic marker, so topic-granularity
    consolidation yields a single entry covering all four turns, while
    turn granularity fragments them.
    """
    marathon_turns = [{"index": i,
                       "user_utterance": (f"{TOPIC_MARKER} {text}" if i == 0
                                          else text),
                       "agent_utterance": reply}
                      for i, (text, reply) in enumerate(_MARATHON_TURNS)]
    sessions = []
    for k in range(2):
        turns = []
        for text in _DISTRACTOR_TOPICS[4 * k:4 * k + 4]:
            turns.append({"index": len(turns),
                          "user_utterance": f"{TOPIC_MARKER} {text}",
                          "agent_utterance": "Interesting hobby."})
        sessions.append({"session_id": f"d{k + 1}", "turns": turns,
                         "closed": True})
    sessions.append({"session_id": "m1", "turns": marathon_turns,
                     "closed": True})
    questions = [{
        "qid": "marathon",
        "question": "Tell me everything about my coastal marathon training",
        "gold_answer": "coastal marathon",
        "gold_evidence": [{"session_id": "m1",
                           "turn_indices": [0, 1, 2, 3]}],
    }]
    return {"sessions": sessions, "questions": questions}


@dataclass
class BanditFixture:
    """Selection bandit: orthonormal memories, one always-useful target.

    Queries are a fixed mean direction plus unit Gaussian noise, which
    makes the basis memories exchangeable at zero init (top-5 inclusion
    is exactly 5/20) while leaving a learnable signal.
    """

    dimension: int = 20
    n_memories: int = 20
    target_index: int = 7
    signal_scale: float = 4.0
    noise_scale: float = 1.0
    eval_seed: int = 12345
    n_eval_queries: int = 200

    @property
    def memories(self) -> np.ndarray:
        return np.eye(self.dimension)[:self.n_memories]

    def query_stream(self, seed: int):
        rng = np.random.default_rng(seed)
        mean = self.signal_scale * np.ones(self.dimension) / np.sqrt(
            self.dimension)
        while True:
            yield mean + self.noise_scale * rng.normal(size=self.dimension)

    def eval_queries(self) -> list[np.ndarray]:
        stream = self.query_stream(self.eval_seed)
        return [next(stream) for _ in range(self.n_eval_queries)]

    def rewards_for(self, selected_positions: list[int]) -> list[int]:
        return [1 if p == self.target_index else -1
                for p in selected_positions]

    def to_dict(self) -> dict:
        return {"dimension": self.dimension, "n_memories": self.n_memories,
                "target_index": self.target_index,
                "signal_scale": self.signal_scale,
                "noise_scale": self.noise_scale,
                "eval_seed": self.eval_seed,
                "n_eval_queries": self.n_eval_queries}


def write_fixtures(out_dir: str | Path) -> list[Path]:
    """Emit the fixture files consumed by the eval CLI."""
    out_dir = Path(out_dir)
    written = []
    for name, payload in (
            ("planted.json", planted_fact_script()),
            ("multi_evidence.json", multi_evidence_script()),
            ("bandit.json", BanditFixture().to_dict())):
        path = out_dir / name
        atomic_write(path, json.dumps(payload, indent=2) + "\n")
        written.append(path)
    return written
