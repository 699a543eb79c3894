"""Raw conversational records: turns, sessions, and their JSONL store.

A turn is one (user utterance, agent utterance) pair; a session is an
ordered list of turns that becomes immutable once closed. Memory entries
never copy dialogue text; they hold ``SegmentRef``s pointing back into
this store.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

from .errors import AlreadyClosed, CorruptFile, SessionNotClosed


class LogicalClock:
    """Deterministic ISO-8601 clock: fixed epoch, one second per tick.

    Replay determinism (same inputs, same seeds => byte-identical stores)
    rules out wall time for created_at/updated_at stamps.
    """

    def __init__(self, start: str = "2024-01-01T00:00:00+00:00"):
        self._t = datetime.fromisoformat(start)

    def __call__(self) -> str:
        stamp = self._t.isoformat()
        self._t += timedelta(seconds=1)
        return stamp


def wall_clock() -> str:
    """Real UTC time; opt-in for interactive use."""
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class Turn:
    index: int
    user_utterance: str
    agent_utterance: str
    timestamp: str | None = None

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("turn index must be non-negative")
        if not self.user_utterance:
            raise ValueError("user utterance must be non-empty")

    def to_dict(self) -> dict:
        d = {"index": self.index, "user_utterance": self.user_utterance,
             "agent_utterance": self.agent_utterance}
        if self.timestamp is not None:
            d["timestamp"] = self.timestamp
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Turn":
        return cls(index=int(d["index"]),
                   user_utterance=d["user_utterance"],
                   agent_utterance=d.get("agent_utterance", ""),
                   timestamp=d.get("timestamp"))


@dataclass
class Session:
    session_id: str
    turns: list[Turn] = field(default_factory=list)
    closed: bool = False

    def append_turn(self, user_utterance: str, agent_utterance: str,
                    timestamp: str | None = None) -> Turn:
        if self.closed:
            raise AlreadyClosed(f"session {self.session_id} is closed")
        turn = Turn(index=len(self.turns), user_utterance=user_utterance,
                    agent_utterance=agent_utterance, timestamp=timestamp)
        self.turns.append(turn)
        return turn

    def close(self) -> None:
        if self.closed:
            raise AlreadyClosed(f"session {self.session_id} is closed")
        self.closed = True

    def validate(self) -> None:
        for i, turn in enumerate(self.turns):
            if turn.index != i:
                raise ValueError(
                    f"session {self.session_id}: turn index {turn.index} "
                    f"at position {i}")

    def to_dict(self) -> dict:
        return {"session_id": self.session_id,
                "turns": [t.to_dict() for t in self.turns],
                "closed": self.closed}

    @classmethod
    def from_dict(cls, d: dict) -> "Session":
        s = cls(session_id=d["session_id"],
                turns=[Turn.from_dict(t) for t in d.get("turns", [])],
                closed=bool(d.get("closed", False)))
        s.validate()
        return s


@dataclass(frozen=True, order=True)
class SegmentRef:
    """Pointer to one or more turns of a stored session."""

    session_id: str
    turn_indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(sorted(set(int(i) for i in self.turn_indices)))
        if not idx:
            raise ValueError("segment must reference at least one turn")
        if idx[0] < 0:
            raise ValueError("turn indices must be non-negative")
        object.__setattr__(self, "turn_indices", idx)

    def to_dict(self) -> dict:
        return {"session_id": self.session_id,
                "turn_indices": list(self.turn_indices)}

    @classmethod
    def from_dict(cls, d: dict) -> "SegmentRef":
        return cls(session_id=d["session_id"],
                   turn_indices=tuple(d["turn_indices"]))


def atomic_write(path: str | Path, data: str) -> None:
    """Write via temp file + rename so readers never see partial files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def canonical_json(record: dict) -> str:
    """Canonical one-line JSON: sorted keys, no spaces, UTF-8 kept literal."""
    return json.dumps(record, sort_keys=True, ensure_ascii=False,
                      separators=(",", ":"))


class TranscriptStore:
    """All sessions for one owner, persisted as JSON Lines (one per session)."""

    def __init__(self):
        self._sessions: dict[str, Session] = {}

    def __len__(self) -> int:
        return len(self._sessions)

    def __contains__(self, session_id: str) -> bool:
        return session_id in self._sessions

    def add(self, session: Session) -> None:
        if session.session_id in self._sessions:
            raise ValueError(f"session {session.session_id} already stored")
        session.validate()
        self._sessions[session.session_id] = session

    def get(self, session_id: str) -> Session:
        return self._sessions[session_id]

    def session_ids(self) -> list[str]:
        return list(self._sessions)

    def resolve(self, ref: SegmentRef) -> list[Turn]:
        """Turns a segment points at; raises KeyError/IndexError if dangling."""
        session = self._sessions[ref.session_id]
        turns = []
        for i in ref.turn_indices:
            if i >= len(session.turns):
                raise IndexError(
                    f"turn {i} not in session {ref.session_id}")
            turns.append(session.turns[i])
        return turns

    def has_turn(self, session_id: str, turn_index: int) -> bool:
        session = self._sessions.get(session_id)
        return session is not None and 0 <= turn_index < len(session.turns)

    def save(self, path: str | Path) -> None:
        lines = [canonical_json(self._sessions[sid].to_dict())
                 for sid in self._sessions]
        atomic_write(path, "".join(line + "\n" for line in lines))

    @classmethod
    def load(cls, path: str | Path) -> "TranscriptStore":
        store = cls()
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                session = Session.from_dict(record)
            except (ValueError, KeyError) as exc:
                raise CorruptFile(
                    f"{path}: line {lineno}: {exc}") from exc
            store.add(session)
        return store

    def require_closed(self, session_id: str) -> Session:
        session = self.get(session_id)
        if not session.closed:
            raise SessionNotClosed(f"session {session_id} is still open")
        return session
