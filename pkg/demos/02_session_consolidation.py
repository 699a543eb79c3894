"""End-of-session consolidation: extract topics, then add or merge.

Runs two sessions through the mock extraction/decision clients. The
second session restates an earlier topic, so instead of a near-duplicate
entry the bank merges it: same entry id, rewritten summary, segments
from both sessions.
"""

import json

from remem.bank import MemoryBank
from remem.embedding import EmbedderConfig
from remem.llm import MockDeciderClient, MockExtractorClient
from remem.reflection import ReflectionLedger, reflect_session
from remem.transcripts import Session

bank = MemoryBank("demo", "alice", EmbedderConfig(dimension=512))
extractor = MockExtractorClient()   # splits sessions at "#topic" markers
decider = MockDeciderClient()       # merges when summaries are similar
ledger = ReflectionLedger()


def show_bank(title):
    print(title)
    for entry in bank.entries():
        segs = ", ".join(f"{s.session_id}:{list(s.turn_indices)}"
                         for s in entry.segments)
        print(f"  {entry.entry_id} merges={entry.merge_count} "
              f"{entry.topic_summary[:68]!r} <- {segs}")
    print()


first = Session("mon")
first.append_turn("#topic I run on the treadmill at the gym every monday",
                  "Good habit!")
first.append_turn("It helps me clear my head before work.",
                  "Sounds refreshing.")
first.append_turn("#topic My favourite cuisine is Ethiopian food",
                  "Injera is great.")
first.close()

report = reflect_session(bank, first, extractor, decider, ledger=ledger)
print("session 'mon' report:", json.dumps(report.to_dict()))
show_bank("bank after first session:")

# The restated treadmill topic merges into the existing entry.
second = Session("fri")
second.append_turn("#topic I run on the treadmill at the gym every friday",
                   "Twice a week now!")
second.close()

report = reflect_session(bank, second, extractor, decider, ledger=ledger)
print("session 'fri' report:", json.dumps(report.to_dict()))
show_bank("bank after second session (note the merge):")

# Consolidation is exactly-once per session.
again = reflect_session(bank, second, extractor, decider, ledger=ledger)
print("re-running session 'fri':", json.dumps(again.to_dict()))
