"""End-of-session memory consolidation.

When a session closes, an extraction call splits it into topic-scoped
memories (summary + turn references). Each memory is then integrated
into the bank by a decision call over the most similar existing entries:
Add() stores it as a new topic, Merge(index, merged_summary) folds it
into an existing one. Sessions are consolidated exactly once; a
file-backed ledger guards against re-runs.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from .attribution import fill_template, load_template
from .bank import MemoryBank
from .embedding import embed
from .errors import LlmUnavailable, MalformedLlmOutput, SessionNotClosed
from .llm import NO_TRAIT, LlmClient
from .transcripts import SegmentRef, Session, atomic_write

logger = logging.getLogger(__name__)

DEFAULT_K_UPDATE = 5

JSON_REPAIR_SUFFIX = (
    "Your previous reply was not valid JSON. Reply with only a JSON object "
    'of the form {"extracted_memories": [...]} or NO_TRAIT.')

_MERGE_RE = re.compile(r"^\s*Merge\(\s*(\d+)\s*,\s*(.*)\)\s*$")
_ADD_RE = re.compile(r"^\s*Add\(\s*\)\s*$")


@dataclass(frozen=True)
class ExtractedMemory:
    summary: str
    reference: tuple[int, ...]
    owner: str


@dataclass(frozen=True)
class UpdateAction:
    kind: str  # "add" | "merge"
    merge_index: int | None = None
    merged_summary: str | None = None

    def __post_init__(self):
        if self.kind == "merge":
            if self.merge_index is None or not self.merged_summary:
                raise ValueError("merge needs an index and a summary")
        elif self.kind == "add":
            if self.merge_index is not None or self.merged_summary:
                raise ValueError("add carries no payload")
        else:
            raise ValueError(f"unknown action kind {self.kind!r}")


ADD = UpdateAction(kind="add")


def render_session(session: Session) -> str:
    blocks = []
    for turn in session.turns:
        blocks.append(f"Turn {turn.index}:\n"
                      f"SPEAKER_1: {turn.user_utterance}\n"
                      f"SPEAKER_2: {turn.agent_utterance}")
    return "\n\n".join(blocks)


def build_extraction_prompt(session: Session, speaker: str) -> str:
    if speaker not in ("SPEAKER_1", "SPEAKER_2"):
        raise ValueError(f"unknown speaker role {speaker!r}")
    template = load_template(
        "extract_speaker1" if speaker == "SPEAKER_1" else "extract_speaker2")
    return fill_template(template, render_session(session))


def build_update_prompt(history_summaries: list[str], new_summary: str) -> str:
    return fill_template(
        load_template("update"),
        json.dumps({"history_summaries": history_summaries}),
        json.dumps({"new_summary": new_summary}),
    )


def _parse_extraction_json(raw: str) -> list[dict] | None:
    """None signals unparseable; [] is a valid empty extraction."""
    stripped = raw.strip()
    if NO_TRAIT in stripped:
        return []
    start = stripped.find("{")
    end = stripped.rfind("}")
    if start < 0 or end <= start:
        return None
    try:
        payload = json.loads(stripped[start:end + 1])
    except ValueError:
        return None
    memories = payload.get("extracted_memories")
    if not isinstance(memories, list):
        return None
    return memories


def extract_memories(session: Session, owner: str, llm: LlmClient,
                     speaker: str = "SPEAKER_1") -> list[ExtractedMemory]:
    """One extraction call (plus one JSON-repair retry) for one speaker.

    Memories with out-of-range turn references are dropped with a warning.
    """
    if not session.closed:
        raise SessionNotClosed(session.session_id)
    if not session.turns:
        return []
    prompt = build_extraction_prompt(session, speaker)
    raw = llm.complete(prompt)
    records = _parse_extraction_json(raw)
    if records is None:
        raw = llm.complete(prompt + "\n\n" + JSON_REPAIR_SUFFIX)
        records = _parse_extraction_json(raw)
        if records is None:
            raise MalformedLlmOutput(
                f"extraction output unparseable after repair: {raw[:200]!r}")
    n_turns = len(session.turns)
    memories = []
    for record in records:
        try:
            summary = str(record["summary"]).strip()
            refs = record["reference"]
            if isinstance(refs, int):
                refs = [refs]
            flat = []
            for r in refs:
                flat.extend(r if isinstance(r, list) else [r])
            reference = tuple(sorted({int(r) for r in flat}))
        except (KeyError, TypeError, ValueError):
            logger.warning("dropping malformed extraction record: %r", record)
            continue
        if not summary or not reference:
            logger.warning("dropping empty extraction record: %r", record)
            continue
        if reference[0] < 0 or reference[-1] >= n_turns:
            logger.warning("dropping memory with out-of-range reference %s "
                           "(session has %d turns)", reference, n_turns)
            continue
        memories.append(ExtractedMemory(summary=summary, reference=reference,
                                        owner=owner))
    return memories


def parse_actions(raw: str, candidate_count: int) -> list[UpdateAction]:
    """Parse newline-separated Add()/Merge(i, text) lines.

    Merge text runs to the final closing paren, split on the first comma
    only, so it may itself contain commas. A merge index at or beyond
    candidate_count degrades to Add with a warning.
    """
    actions = []
    lines = raw.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if _ADD_RE.match(line):
            actions.append(ADD)
            continue
        merge = _MERGE_RE.match(line)
        if merge:
            index = int(merge.group(1))
            summary = merge.group(2).strip()
            if not summary:
                raise MalformedLlmOutput(
                    f"line {lineno}: empty merge summary: {line.strip()!r}")
            if index >= candidate_count:
                logger.warning("merge index %d out of range (%d candidates); "
                               "degrading to Add", index, candidate_count)
                actions.append(ADD)
            else:
                actions.append(UpdateAction(kind="merge", merge_index=index,
                                            merged_summary=summary))
            continue
        raise MalformedLlmOutput(
            f"line {lineno}: not an update action: {line.strip()!r}")
    if not actions:
        raise MalformedLlmOutput("no actions in update output")
    return actions


def render_actions(actions: list[UpdateAction]) -> str:
    lines = []
    for action in actions:
        if action.kind == "add":
            lines.append("Add()")
        else:
            lines.append(f"Merge({action.merge_index}, "
                         f"{action.merged_summary})")
    return "\n".join(lines)


def decide_update(new_memory: ExtractedMemory, candidates: list,
                  llm: LlmClient) -> list[UpdateAction]:
    """Ask the decider whether to add or merge; empty history forces Add."""
    if not candidates:
        return [ADD]
    prompt = build_update_prompt(
        [entry.topic_summary for entry in candidates], new_memory.summary)
    raw = llm.complete(prompt)
    return parse_actions(raw, candidate_count=len(candidates))


@dataclass
class ReflectionReport:
    session_id: str
    extracted: int = 0
    added: int = 0
    merged: int = 0
    dropped: int = 0
    already_reflected: bool = False
    errors: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"session_id": self.session_id, "extracted": self.extracted,
                "added": self.added, "merged": self.merged,
                "dropped": self.dropped,
                "already_reflected": self.already_reflected,
                "errors": list(self.errors)}


class ReflectionLedger:
    """Which sessions were already consolidated; survives restarts."""

    def __init__(self, path: str | Path | None = None):
        self._path = Path(path) if path else None
        self._seen: set[str] = set()
        if self._path and self._path.exists():
            self._seen = set(json.loads(
                self._path.read_text(encoding="utf-8")))

    def __contains__(self, session_id: str) -> bool:
        return session_id in self._seen

    def mark(self, session_id: str) -> None:
        self._seen.add(session_id)
        if self._path:
            atomic_write(self._path,
                         json.dumps(sorted(self._seen)) + "\n")


def reflect_session(bank: MemoryBank, session: Session,
                    extractor: LlmClient, decider: LlmClient,
                    ledger: ReflectionLedger | None = None,
                    k_update: int = DEFAULT_K_UPDATE,
                    speakers: dict[str, str] | None = None
                    ) -> ReflectionReport:
    """Extract topic memories from a closed session and fold them in.

    ``speakers`` maps speaker role -> owner label for the created entries;
    the default consolidates only the user side under the bank's owner.
    A per-memory failure skips that memory, never the whole session.
    """
    report = ReflectionReport(session_id=session.session_id)
    if ledger is not None and session.session_id in ledger:
        report.already_reflected = True
        return report
    if not session.closed:
        raise SessionNotClosed(session.session_id)
    speakers = speakers or {"SPEAKER_1": bank.owner}

    for speaker, owner in speakers.items():
        try:
            memories = extract_memories(session, owner, extractor,
                                        speaker=speaker)
        except (MalformedLlmOutput, LlmUnavailable) as exc:
            report.errors.append(f"{speaker}: {exc}")
            continue
        report.extracted += len(memories)
        for memory in memories:
            try:
                _apply_memory(bank, session, memory, decider, k_update,
                              report)
            except (MalformedLlmOutput, LlmUnavailable) as exc:
                report.dropped += 1
                report.errors.append(f"{memory.summary[:40]!r}: {exc}")
    if ledger is not None:
        ledger.mark(session.session_id)
    return report


def _apply_memory(bank: MemoryBank, session: Session,
                  memory: ExtractedMemory, decider: LlmClient,
                  k_update: int, report: ReflectionReport) -> None:
    segment = SegmentRef(session.session_id, memory.reference)
    query = embed(memory.summary, bank.embedder)
    results = bank.search_top_k(query, k_update) if len(bank) else []
    candidates = [bank.get(r.entry_id) for r in results]
    for action in decide_update(memory, candidates, decider):
        if action.kind == "add":
            bank.make_entry(memory.summary, [segment])
            report.added += 1
        else:
            target = candidates[action.merge_index]
            bank.merge_entry(target.entry_id, action.merged_summary,
                             [segment])
            report.merged += 1
