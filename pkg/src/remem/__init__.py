"""Long-term dialogue memory engine.

Topic-level memory consolidation after each session, exact dense
retrieval over topic summaries, and a stochastic reranker refined online
by REINFORCE from citation rewards emitted during response generation.
"""

from .agent import AgentConfig, AgentEngine, TurnResult
from .attribution import (AttributedResponse, build_generation_prompt,
                          parse_citations, rewards_from_citations)
from .bank import MemoryBank, MemoryEntry, RetrievalResult
from .embedding import (EmbedderConfig, EmbeddingVector, embed, embed_many,
                        similarity)
from .evaluation import (EvalQuestion, MetricsReport, compare_modes,
                         judge_accuracy, metrics_report, recall_at_k,
                         token_f1)
from .reflection import (ExtractedMemory, ReflectionReport, UpdateAction,
                         extract_memories, parse_actions, reflect_session)
from .reranker import Reranker, RerankerParams, SelectionTrace, UpdateStats
from .transcripts import SegmentRef, Session, TranscriptStore, Turn

__all__ = [
    "AgentConfig", "AgentEngine", "TurnResult",
    "AttributedResponse", "build_generation_prompt", "parse_citations",
    "rewards_from_citations",
    "EmbedderConfig", "EmbeddingVector", "embed", "embed_many", "similarity",
    "MemoryBank", "MemoryEntry", "RetrievalResult",
    "EvalQuestion", "MetricsReport", "compare_modes", "judge_accuracy",
    "metrics_report", "recall_at_k", "token_f1",
    "ExtractedMemory", "ReflectionReport", "UpdateAction",
    "extract_memories", "parse_actions", "reflect_session",
    "Reranker", "RerankerParams", "SelectionTrace", "UpdateStats",
    "SegmentRef", "Session", "TranscriptStore", "Turn",
]

__version__ = "0.1.0"
