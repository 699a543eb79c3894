"""Per-owner memory bank: (topic summary, raw dialogue segments) entries.

The topic summary is the sole search key; retrieval is an exact
brute-force dot-product scan, which keeps the bank its own oracle at desk
scale. Mutations are add (new topic) and merge (updated topic); merges
rewrite the summary and recompute its embedding, never average vectors.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .embedding import EmbedderConfig, EmbeddingVector, embed
from .errors import (CorruptFile, DimensionMismatch, DuplicateEntryId,
                     EmbedderMismatch, SessionNotClosed, UnknownEntryId)
from .transcripts import (LogicalClock, SegmentRef, Session, atomic_write,
                          canonical_json)

INGESTION_MODES = ("topic", "turn", "session", "mix")


@dataclass
class MemoryEntry:
    entry_id: str
    owner: str
    topic_summary: str
    segments: list[SegmentRef]
    embedding: EmbeddingVector
    created_at: str
    updated_at: str
    merge_count: int = 0

    def __post_init__(self):
        if not self.topic_summary:
            raise ValueError("topic summary must be non-empty")
        if not self.segments:
            raise ValueError("entry must reference at least one segment")

    def to_dict(self) -> dict:
        return {
            "entry_id": self.entry_id,
            "owner": self.owner,
            "topic_summary": self.topic_summary,
            "segments": [s.to_dict() for s in self.segments],
            "embedding": [float(x) for x in self.embedding.values],
            "created_at": self.created_at,
            "updated_at": self.updated_at,
            "merge_count": self.merge_count,
        }


@dataclass(frozen=True)
class RetrievalResult:
    entry_id: str
    score: float
    rank: int


class MemoryBank:
    """Single-writer, multi-reader store of memory entries for one owner."""

    def __init__(self, bank_id: str, owner: str, embedder: EmbedderConfig,
                 ingestion_mode: str = "topic", clock=None):
        if ingestion_mode not in INGESTION_MODES:
            raise ValueError(f"unknown ingestion mode {ingestion_mode!r}")
        self.bank_id = bank_id
        self.owner = owner
        self.embedder = embedder
        self.ingestion_mode = ingestion_mode
        self.clock = clock or LogicalClock()
        self._entries: dict[str, MemoryEntry] = {}
        self._write_lock = threading.RLock()
        self._id_counter = 0

    # -- introspection ----------------------------------------------------

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, entry_id: str) -> bool:
        return entry_id in self._entries

    def get(self, entry_id: str) -> MemoryEntry:
        try:
            return self._entries[entry_id]
        except KeyError:
            raise UnknownEntryId(entry_id) from None

    def entries(self) -> list[MemoryEntry]:
        return list(self._entries.values())

    def allocate_id(self) -> str:
        with self._write_lock:
            self._id_counter += 1
            return f"m{self._id_counter:06d}"

    def state_hash(self) -> str:
        """Content hash of the canonical serialization (for replay checks)."""
        return hashlib.sha256(self.serialize().encode("utf-8")).hexdigest()

    # -- search ------------------------------------------------------------

    def search_top_k(self, query_embedding: EmbeddingVector,
                     k: int) -> list[RetrievalResult]:
        """Exact top-k by dot product; empty list on an empty bank.

        Ties break by older created_at first, then lexicographic entry_id.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        if query_embedding.embedder_id != self.embedder.embedder_id:
            raise EmbedderMismatch(
                f"query from {query_embedding.embedder_id!r}, bank uses "
                f"{self.embedder.embedder_id!r}")
        if query_embedding.dimension != self.embedder.dimension:
            raise DimensionMismatch(
                f"query dim {query_embedding.dimension}, bank dim "
                f"{self.embedder.dimension}")
        entries = list(self._entries.values())
        if not entries:
            return []
        q = query_embedding.values
        scored = [(float(np.dot(q, e.embedding.values)), e) for e in entries]
        scored.sort(key=lambda se: (-se[0], se[1].created_at, se[1].entry_id))
        return [RetrievalResult(entry_id=e.entry_id, score=s, rank=i + 1)
                for i, (s, e) in enumerate(scored[:k])]

    # -- mutation ----------------------------------------------------------

    def _check_compatible(self, entry: MemoryEntry) -> None:
        if entry.embedding.embedder_id != self.embedder.embedder_id:
            raise EmbedderMismatch(
                f"entry embedded by {entry.embedding.embedder_id!r}, bank "
                f"uses {self.embedder.embedder_id!r}")
        if entry.embedding.dimension != self.embedder.dimension:
            raise DimensionMismatch(
                f"entry dim {entry.embedding.dimension}, bank dim "
                f"{self.embedder.dimension}")

    def add_entry(self, entry: MemoryEntry) -> MemoryEntry:
        with self._write_lock:
            self._check_compatible(entry)
            if entry.entry_id in self._entries:
                raise DuplicateEntryId(entry.entry_id)
            self._entries[entry.entry_id] = entry
            return entry

    def make_entry(self, topic_summary: str, segments: list[SegmentRef],
                   entry_id: str | None = None) -> MemoryEntry:
        """Build and add an entry, embedding the summary under this bank."""
        with self._write_lock:
            now = self.clock()
            entry = MemoryEntry(
                entry_id=entry_id or self.allocate_id(),
                owner=self.owner,
                topic_summary=topic_summary,
                segments=list(segments),
                embedding=embed(topic_summary, self.embedder),
                created_at=now,
                updated_at=now,
            )
            return self.add_entry(entry)

    def merge_entry(self, target_entry_id: str, merged_summary: str,
                    new_segments: list[SegmentRef]) -> MemoryEntry:
        """Rewrite an entry with a merged summary; union + dedupe segments."""
        if not merged_summary:
            raise ValueError("merged summary must be non-empty")
        with self._write_lock:
            old = self.get(target_entry_id)
            seen = dict.fromkeys(old.segments)
            for seg in new_segments:
                seen.setdefault(seg)
            updated = replace(
                old,
                topic_summary=merged_summary,
                segments=list(seen),
                embedding=embed(merged_summary, self.embedder),
                updated_at=self.clock(),
                merge_count=old.merge_count + 1,
            )
            self._entries[target_entry_id] = updated
            return updated

    def ingest_fixed_granularity(self, session: Session,
                                 mode: str | None = None) -> list[MemoryEntry]:
        """Store a closed session at a fixed granularity.

        turn: one entry per turn, summary is the verbatim turn text.
        session: one entry whose summary is the whole transcript.
        mix: both of the above.
        """
        mode = mode or self.ingestion_mode
        if mode not in ("turn", "session", "mix"):
            raise ValueError(f"invalid fixed granularity {mode!r}")
        if self.ingestion_mode not in (mode, "mix"):
            raise ValueError(
                f"bank ingests {self.ingestion_mode!r}, asked for {mode!r}")
        if not session.closed:
            raise SessionNotClosed(session.session_id)
        added = []
        with self._write_lock:
            if mode in ("turn", "mix"):
                for turn in session.turns:
                    text = f"{turn.user_utterance}\n{turn.agent_utterance}"
                    added.append(self.make_entry(
                        text,
                        [SegmentRef(session.session_id, (turn.index,))],
                        entry_id=f"{session.session_id}:turn:{turn.index}"))
            if mode in ("session", "mix"):
                transcript = "\n".join(
                    f"{t.user_utterance}\n{t.agent_utterance}"
                    for t in session.turns)
                all_idx = tuple(t.index for t in session.turns)
                added.append(self.make_entry(
                    transcript,
                    [SegmentRef(session.session_id, all_idx)],
                    entry_id=f"{session.session_id}:session"))
        return added

    # -- persistence ---------------------------------------------------------

    def serialize(self) -> str:
        header = {
            "bank_id": self.bank_id,
            "owner": self.owner,
            "embedder_id": self.embedder.embedder_id,
            "dimension": self.embedder.dimension,
            "ingestion_mode": self.ingestion_mode,
        }
        lines = [canonical_json(header)]
        lines.extend(canonical_json(e.to_dict())
                     for e in self._entries.values())
        return "".join(line + "\n" for line in lines)

    def save(self, path: str | Path) -> None:
        atomic_write(path, self.serialize())

    @classmethod
    def load(cls, path: str | Path, embedder: EmbedderConfig,
             clock=None) -> "MemoryBank":
        text = Path(path).read_text(encoding="utf-8")
        lines = text.splitlines()
        if not lines:
            raise CorruptFile(f"{path}: empty bank file")

        def parse(lineno: int, line: str) -> dict:
            try:
                return json.loads(line)
            except ValueError as exc:
                raise CorruptFile(f"{path}: line {lineno}: {exc}") from exc

        header = parse(1, lines[0])
        for key in ("bank_id", "owner", "embedder_id", "dimension",
                    "ingestion_mode"):
            if key not in header:
                raise CorruptFile(f"{path}: line 1: header missing {key!r}")
        if (header["embedder_id"] != embedder.embedder_id
                or int(header["dimension"]) != embedder.dimension):
            raise EmbedderMismatch(
                f"bank written under {header['embedder_id']!r} d="
                f"{header['dimension']}, runtime uses "
                f"{embedder.embedder_id!r} d={embedder.dimension}")
        bank = cls(bank_id=header["bank_id"], owner=header["owner"],
                   embedder=embedder,
                   ingestion_mode=header["ingestion_mode"], clock=clock)
        staged = []
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            record = parse(lineno, line)
            try:
                entry = MemoryEntry(
                    entry_id=record["entry_id"],
                    owner=record["owner"],
                    topic_summary=record["topic_summary"],
                    segments=[SegmentRef.from_dict(s)
                              for s in record["segments"]],
                    embedding=EmbeddingVector(
                        values=np.asarray(record["embedding"],
                                          dtype=np.float64),
                        embedder_id=embedder.embedder_id),
                    created_at=record["created_at"],
                    updated_at=record["updated_at"],
                    merge_count=int(record["merge_count"]),
                )
            except (KeyError, ValueError) as exc:
                raise CorruptFile(f"{path}: line {lineno}: {exc}") from exc
            staged.append(entry)
        for entry in staged:
            bank.add_entry(entry)
            if entry.entry_id.startswith("m"):
                suffix = entry.entry_id[1:]
                if suffix.isdigit():
                    bank._id_counter = max(bank._id_counter, int(suffix))
        return bank
