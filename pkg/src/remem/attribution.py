"""Generation prompt assembly and citation-to-reward conversion.

The generator is asked, in a single call, for both the response and
bracket citations of the memories it actually used, e.g. "... [0, 2]" or
the literal [NO_CITE]. Parsed citations become the binary reward vector
driving the reranker update: +1 for a cited memory, -1 otherwise.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path

from .bank import MemoryEntry
from .llm import NO_CITE
from .transcripts import TranscriptStore, Turn

_PROMPT_DIR = Path(__file__).parent / "prompts"

_CITE_GROUP_RE = re.compile(r"\[\s*(\d+(?:\s*,\s*\d+)*)\s*\]")
_NO_CITE_RE = re.compile(re.escape(NO_CITE))


def load_template(name: str) -> str:
    return (_PROMPT_DIR / f"{name}.txt").read_text(encoding="utf-8")


def template_hash(name: str) -> str:
    raw = (_PROMPT_DIR / f"{name}.txt").read_bytes()
    return hashlib.sha256(raw).hexdigest()[:12]


def fill_template(template: str, *values: str) -> str:
    """Replace each {} placeholder, left to right."""
    parts = template.split("{}")
    if len(parts) != len(values) + 1:
        raise ValueError(
            f"template has {len(parts) - 1} slots, got {len(values)} values")
    out = [parts[0]]
    for value, part in zip(values, parts[1:]):
        out.append(value)
        out.append(part)
    return "".join(out)


def render_session_context(turns: list[Turn]) -> str:
    if not turns:
        return "(none)"
    lines = []
    for turn in turns:
        lines.append(f"SPEAKER_1: {turn.user_utterance}")
        if turn.agent_utterance:
            lines.append(f"SPEAKER_2: {turn.agent_utterance}")
    return "\n".join(lines)


def render_memories(memories: list[MemoryEntry],
                    transcripts: TranscriptStore) -> str:
    """"Memory [i]" blocks: the topic summary, then the raw turns of each
    segment as starred speaker pairs."""
    if not memories:
        return "(none)"
    blocks = []
    for i, entry in enumerate(memories):
        lines = [f"Memory [{i}]: {entry.topic_summary}"]
        for segment in entry.segments:
            for turn in transcripts.resolve(segment):
                lines.append(f"* Speaker 1: {turn.user_utterance}")
                if turn.agent_utterance:
                    lines.append(f"  Speaker 2: {turn.agent_utterance}")
        blocks.append("\n".join(lines))
    return "\n".join(blocks)


def build_generation_prompt(query: str, session_context: list[Turn],
                            memories: list[MemoryEntry],
                            transcripts: TranscriptStore) -> str:
    return fill_template(
        load_template("generate"),
        query,
        render_session_context(session_context),
        render_memories(memories, transcripts),
    )


@dataclass(frozen=True)
class AttributedResponse:
    text: str
    citations: tuple[int, ...]
    parse_status: str  # cited | no_cite | malformed_recovered | malformed_failed
    raw: str


def parse_citations(raw_llm_output: str, m: int) -> AttributedResponse:
    """Recover citation indices < m from bracket groups; never raises.

    No recognisable marker at all is malformed_failed; out-of-range
    indices are dropped and flagged as malformed_recovered.
    """
    groups = _CITE_GROUP_RE.findall(raw_llm_output)
    has_no_cite = bool(_NO_CITE_RE.search(raw_llm_output))
    seen: set[int] = set()
    for group in groups:
        seen.update(int(piece) for piece in group.split(","))
    valid = {i for i in seen if 0 <= i < m}

    if groups:
        if seen != valid or has_no_cite:
            status = "malformed_recovered"
        else:
            status = "cited"
        citations = tuple(sorted(valid))
    elif has_no_cite:
        status = "no_cite"
        citations = ()
    else:
        status = "malformed_failed"
        citations = ()

    text = _NO_CITE_RE.sub(" ", _CITE_GROUP_RE.sub(" ", raw_llm_output))
    text = re.sub(r"\s+", " ", text).strip()
    return AttributedResponse(text=text, citations=citations,
                              parse_status=status, raw=raw_llm_output)


def rewards_from_citations(resp: AttributedResponse, m: int) -> list[int]:
    """+1 for each cited memory position, -1 otherwise."""
    cited = set(resp.citations)
    return [1 if i in cited else -1 for i in range(m)]


def build_judge_prompt(question: str, gold_answer: str,
                       response: str) -> str:
    return fill_template(load_template("judge"), question, gold_answer,
                         response)
