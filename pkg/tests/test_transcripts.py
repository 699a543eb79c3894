import pytest

from remem.errors import AlreadyClosed, CorruptFile
from remem.transcripts import (LogicalClock, SegmentRef, Session,
                               TranscriptStore, Turn)


def test_turn_validation():
    with pytest.raises(ValueError):
        Turn(-1, "hi", "hello")
    with pytest.raises(ValueError):
        Turn(0, "", "hello")


def test_session_turn_indices_contiguous():
    s = Session("s0")
    s.append_turn("a", "b")
    s.append_turn("c", "d")
    assert [t.index for t in s.turns] == [0, 1]
    s.close()
    with pytest.raises(AlreadyClosed):
        s.append_turn("e", "f")
    with pytest.raises(AlreadyClosed):
        s.close()


def test_segment_ref_sorts_and_dedupes():
    ref = SegmentRef("s0", (3, 1, 3, 2))
    assert ref.turn_indices == (1, 2, 3)
    with pytest.raises(ValueError):
        SegmentRef("s0", ())


def test_store_resolve_and_has_turn():
    store = TranscriptStore()
    s = Session("s0")
    s.append_turn("a", "b")
    s.append_turn("c", "d")
    store.add(s)
    turns = store.resolve(SegmentRef("s0", (0, 1)))
    assert [t.user_utterance for t in turns] == ["a", "c"]
    assert store.has_turn("s0", 1)
    assert not store.has_turn("s0", 2)
    assert not store.has_turn("ghost", 0)
    with pytest.raises(IndexError):
        store.resolve(SegmentRef("s0", (5,)))


def test_store_round_trip(tmp_path):
    store = TranscriptStore()
    s = Session("s0")
    s.append_turn("a", "b", timestamp="2024-01-01T00:00:00+00:00")
    s.close()
    store.add(s)
    path = tmp_path / "transcripts.jsonl"
    store.save(path)
    loaded = TranscriptStore.load(path)
    assert loaded.get("s0").to_dict() == s.to_dict()
    store.save(tmp_path / "again.jsonl")
    assert (tmp_path / "again.jsonl").read_bytes() == path.read_bytes()


def test_store_corrupt_line_diagnostics(tmp_path):
    path = tmp_path / "broken.jsonl"
    path.write_text('{"session_id": "ok", "turns": [], "closed": true}\n'
                    "{oops\n")
    with pytest.raises(CorruptFile) as err:
        TranscriptStore.load(path)
    assert "line 2" in str(err.value)


def test_logical_clock_monotone_and_deterministic():
    c1, c2 = LogicalClock(), LogicalClock()
    a = [c1() for _ in range(3)]
    b = [c2() for _ in range(3)]
    assert a == b
    assert a == sorted(a)
    assert len(set(a)) == 3
