import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from remem.attribution import (AttributedResponse, build_generation_prompt,
                               build_judge_prompt, fill_template,
                               parse_citations, render_memories,
                               rewards_from_citations, template_hash)
from remem.bank import MemoryBank
from remem.embedding import EmbedderConfig
from remem.llm import (MockGeneratorClient, MockJudgeClient,
                       render_citation_group)
from remem.transcripts import SegmentRef, Session, TranscriptStore, Turn


@pytest.fixture
def store_and_bank():
    store = TranscriptStore()
    s = Session("s0")
    s.append_turn("I love spending my weekends hiking in the mountains.",
                  "That sounds amazing! Do you go alone or with friends?")
    s.append_turn("I've been practicing guitar for years and love playing "
                  "at open mics.",
                  "That's awesome! What songs do you usually play?")
    s.append_turn("I recently bought a telescope to get a closer look at "
                  "planets.",
                  "That's so cool! What have you seen so far?")
    s.close()
    store.add(s)
    bank = MemoryBank("b", "u", EmbedderConfig(dimension=32))
    bank.make_entry("SPEAKER_1 enjoys hiking and often goes on weekend "
                    "trips.", [SegmentRef("s0", (0,))])
    bank.make_entry("SPEAKER_1 plays the guitar and occasionally performs "
                    "at open mics.", [SegmentRef("s0", (1,))])
    bank.make_entry("SPEAKER_1 is interested in astronomy and enjoys "
                    "stargazing.", [SegmentRef("s0", (2,))])
    return store, bank


def test_fill_template_exact():
    assert fill_template("a {} b {} c", "X", "Y") == "a X b Y c"
    with pytest.raises(ValueError):
        fill_template("a {}", "X", "Y")


def test_prompt_contains_indexed_memory_blocks(store_and_bank):
    store, bank = store_and_bank
    prompt = build_generation_prompt("What hobbies do I enjoy?", [],
                                     bank.entries(), store)
    for marker in ("Memory [0]:", "Memory [1]:", "Memory [2]:"):
        assert marker in prompt
    assert prompt.index("Memory [0]:") < prompt.index("Memory [1]:")
    assert prompt.rindex("Memory [1]:") < prompt.rindex("Memory [2]:")


def test_memory_block_layout(store_and_bank):
    store, bank = store_and_bank
    block = render_memories(bank.entries()[:1], store)
    lines = block.split("\n")
    assert lines[0].startswith("Memory [0]: SPEAKER_1 enjoys hiking")
    assert lines[1].startswith("* Speaker 1: I love spending my weekends")
    assert lines[2].startswith("  Speaker 2: That sounds amazing!")


def test_prompt_well_formed_with_zero_memories(store_and_bank):
    store, _ = store_and_bank
    prompt = build_generation_prompt("hello?", [], [], store)
    assert "User Query: hello?" in prompt
    assert "(none)" in prompt
    assert prompt.rstrip().endswith("Output:")


def test_session_context_rendered(store_and_bank):
    store, bank = store_and_bank
    turns = [Turn(0, "first question", "first answer")]
    prompt = build_generation_prompt("next?", turns, [], store)
    assert "SPEAKER_1: first question" in prompt
    assert "SPEAKER_2: first answer" in prompt


# -- citation parsing -----------------------------------------------------------

def test_parse_cited_case():
    resp = parse_citations(
        "You enjoy hiking, playing the guitar, and stargazing. [0, 1, 2]",
        m=3)
    assert resp.citations == (0, 1, 2)
    assert resp.parse_status == "cited"
    assert resp.text == "You enjoy hiking, playing the guitar, and stargazing."


def test_parse_no_cite_case():
    resp = parse_citations(
        "I don't have enough information to answer that. [NO_CITE]", m=3)
    assert resp.citations == ()
    assert resp.parse_status == "no_cite"
    assert resp.text == "I don't have enough information to answer that."


def test_parse_out_of_range_recovered():
    resp = parse_citations("Answer. [1] [7]", m=5)
    assert resp.citations == (1,)
    assert resp.parse_status == "malformed_recovered"


def test_parse_no_marker_failed():
    resp = parse_citations("Just some text with no citations", m=5)
    assert resp.citations == ()
    assert resp.parse_status == "malformed_failed"


def test_parse_multiple_groups_unioned():
    resp = parse_citations("Both things. [0] and also [2, 3]", m=5)
    assert resp.citations == (0, 2, 3)
    assert resp.parse_status == "cited"


@given(st.sets(st.integers(0, 7), max_size=8), st.integers(1, 8))
@settings(max_examples=200, deadline=None)
def test_render_parse_round_trip(cited, m):
    cited = {c for c in cited if c < m}
    if not cited:
        return
    raw = f"some answer text {render_citation_group(cited)}"
    resp = parse_citations(raw, m)
    assert set(resp.citations) == cited
    assert resp.parse_status == "cited"


@given(st.text(max_size=120), st.integers(0, 6))
@settings(max_examples=300, deadline=None)
def test_fuzzed_noise_never_out_of_range(noise, m):
    resp = parse_citations(noise, m)
    assert all(0 <= c < m for c in resp.citations)
    assert resp.parse_status in ("cited", "no_cite", "malformed_recovered",
                                 "malformed_failed")
    if resp.parse_status == "no_cite":
        assert resp.citations == ()


# -- rewards ----------------------------------------------------------------------

def test_rewards_positional():
    resp = AttributedResponse("t", (0, 2), "cited", "t [0, 2]")
    assert rewards_from_citations(resp, 5) == [1, -1, 1, -1, -1]


def test_rewards_all_negative_on_no_cite():
    resp = AttributedResponse("t", (), "no_cite", "t [NO_CITE]")
    assert rewards_from_citations(resp, 5) == [-1] * 5


def test_rewards_all_positive():
    resp = AttributedResponse("t", (0, 1, 2, 3, 4), "cited", "t")
    assert rewards_from_citations(resp, 5) == [1] * 5


@given(st.sets(st.integers(0, 9), max_size=10), st.integers(1, 10))
@settings(max_examples=100, deadline=None)
def test_reward_sum_identity(cited, m):
    cited = {c for c in cited if c < m}
    resp = AttributedResponse("t", tuple(sorted(cited)), "cited", "t")
    rewards = rewards_from_citations(resp, m)
    assert sum(rewards) == 2 * len(cited) - m


# -- mock generator ----------------------------------------------------------------

def test_mock_generator_cites_by_token_overlap(store_and_bank):
    store, bank = store_and_bank
    # "guitar"/"mics"/"play" hit memory 1's raw turns, "weekends"/"hiking"
    # hit memory 0's; memory 2's turns share no query token.
    query = "play guitar open mics weekends hiking"
    prompt = build_generation_prompt(query, [], bank.entries(), store)
    out = MockGeneratorClient().complete(prompt)
    resp = parse_citations(out, 3)
    assert 1 in resp.citations
    assert 2 not in resp.citations


def test_mock_generator_no_cite_when_no_overlap(store_and_bank):
    store, bank = store_and_bank
    prompt = build_generation_prompt("zzz qqq", [], bank.entries(), store)
    out = MockGeneratorClient().complete(prompt)
    assert out.endswith("[NO_CITE]")


def test_mock_generator_deterministic(store_and_bank):
    store, bank = store_and_bank
    prompt = build_generation_prompt("guitar open mics", [], bank.entries(),
                                     store)
    gen = MockGeneratorClient()
    assert gen.complete(prompt) == gen.complete(prompt)


def test_mock_generator_hand_counted_overlap(store_and_bank):
    store, bank = store_and_bank
    # Tokens shared with memory 0's raw turns: {spending, weekends, hiking}
    # (>= 2 -> cited); memory 1 and 2 share at most {i} (< 2 -> not cited).
    query = "spending weekends hiking"
    prompt = build_generation_prompt(query, [], bank.entries(), store)
    out = MockGeneratorClient().complete(prompt)
    resp = parse_citations(out, 3)
    assert resp.citations == (0,)
    assert out.startswith("SPEAKER_1 enjoys hiking")


# -- judge prompt + mock judge -------------------------------------------------------

def test_judge_prompt_and_mock_yes():
    prompt = build_judge_prompt("What is the capital of France?", "Paris",
                                "The capital of France is Paris.")
    assert MockJudgeClient().complete(prompt) == "Yes"


def test_mock_judge_no():
    prompt = build_judge_prompt("What is the capital of France?", "Paris",
                                "France is a country in Europe.")
    assert MockJudgeClient().complete(prompt) == "No"


def test_template_hash_stable():
    assert template_hash("generate") == template_hash("generate")
    assert template_hash("generate") != template_hash("judge")


def test_single_call_per_generation(store_and_bank):
    store, bank = store_and_bank
    gen = MockGeneratorClient()
    prompt = build_generation_prompt("q", [], bank.entries(), store)
    gen.complete(prompt)
    assert gen.call_count == 1
