"""LLM client interface, remote chat client, and deterministic test doubles.

Real model backends sit behind ``LlmClient.complete``. The mock clients
re-parse the rendered prompts (last-occurrence markers, so few-shot
examples inside templates are skipped) and apply documented closed-form
rules, which makes the whole generation/extraction/decision/judging loop
runnable and exactly reproducible with no model at all.
"""

from __future__ import annotations

import json
import re
import threading

import requests

from .embedding import EmbedderConfig, embed, similarity, tokenize
from .errors import LlmUnavailable

DEFAULT_DEADLINE_S = 60.0
NO_TRAIT = "NO_TRAIT"
NO_CITE = "[NO_CITE]"
FALLBACK_RESPONSE = "Sorry, I cannot respond right now."


class LlmClient:
    """Base: a total ``complete`` with an atomic call counter."""

    kind = "abstract"

    def __init__(self, client_id: str):
        self.client_id = client_id
        self._calls = 0
        self._lock = threading.Lock()

    @property
    def call_count(self) -> int:
        return self._calls

    def complete(self, prompt: str) -> str:
        with self._lock:
            self._calls += 1
        return self._complete(prompt)

    def _complete(self, prompt: str) -> str:
        raise NotImplementedError


class RemoteChatClient(LlmClient):
    """POST {"model", "prompt", "temperature"} -> {"text"}."""

    kind = "remote_chat"

    def __init__(self, endpoint: str, model: str, *, temperature: float = 0.0,
                 deadline_s: float = DEFAULT_DEADLINE_S,
                 client_id: str = "remote"):
        super().__init__(client_id)
        self.endpoint = endpoint
        self.model = model
        self.temperature = temperature
        self.deadline_s = deadline_s

    def _complete(self, prompt: str) -> str:
        payload = {"model": self.model, "prompt": prompt,
                   "temperature": self.temperature}
        try:
            resp = requests.post(self.endpoint, json=payload,
                                 timeout=self.deadline_s)
        except requests.RequestException as exc:
            raise LlmUnavailable(f"{self.endpoint}: {exc}") from exc
        if resp.status_code != 200:
            raise LlmUnavailable(
                f"{self.endpoint} returned HTTP {resp.status_code}")
        try:
            return resp.json()["text"]
        except (ValueError, KeyError) as exc:
            raise LlmUnavailable(
                f"{self.endpoint}: malformed response body") from exc


class ScriptedClient(LlmClient):
    """Replays canned outputs in order; raises when the script runs dry."""

    kind = "scripted"

    def __init__(self, outputs: list[str], client_id: str = "scripted"):
        super().__init__(client_id)
        self._outputs = list(outputs)
        self._next = 0

    def _complete(self, prompt: str) -> str:
        if self._next >= len(self._outputs):
            raise LlmUnavailable("scripted client exhausted")
        out = self._outputs[self._next]
        self._next += 1
        return out


def _after_last(text: str, marker: str) -> str:
    pos = text.rfind(marker)
    return text[pos + len(marker):] if pos >= 0 else ""


def _rest_of_line(text: str, marker: str) -> str:
    tail = _after_last(text, marker)
    return tail.split("\n", 1)[0].strip()


def render_citation_group(indices) -> str:
    return "[" + ", ".join(str(i) for i in sorted(indices)) + "]"


class MockGeneratorClient(LlmClient):
    """Cites every memory whose rendered raw turns share >= min_overlap
    distinct tokens with the query and echoes the best-overlap summary.
    With no qualifying memory it falls back to echoing the best-matching
    current-session line (still [NO_CITE]: citations index memories)."""

    kind = "mock_generator"

    def __init__(self, client_id: str = "mock-generator", min_overlap: int = 2):
        super().__init__(client_id)
        self.min_overlap = min_overlap

    def _complete(self, prompt: str) -> str:
        query = _rest_of_line(prompt, "User Query:")
        section = _after_last(prompt, "Memories:")
        query_tokens = set(tokenize(query))
        memories: list[tuple[int, str, list[str]]] = []
        current = None
        for line in section.split("\n"):
            header = re.match(r"Memory \[(\d+)\]: (.*)$", line)
            if header:
                current = (int(header.group(1)), header.group(2), [])
                memories.append(current)
            elif current is not None:
                turn = re.match(r"\s*\*?\s*Speaker \d: (.*)$", line)
                if turn:
                    current[2].append(turn.group(1))
        overlaps = {}
        for idx, _, turns in memories:
            shared = set(tokenize(" ".join(turns))) & query_tokens
            if len(shared) >= self.min_overlap:
                overlaps[idx] = len(shared)
        if overlaps:
            best = max(overlaps, key=lambda i: (overlaps[i], -i))
            summary = next(s for i, s, _ in memories if i == best)
            return f"{summary} {render_citation_group(overlaps)}"

        context = _after_last(prompt, "Current Session:")
        context = context[:context.find("Memories:")]
        best_line, best_overlap = None, 0
        for line in context.split("\n"):
            utterance = re.match(r"SPEAKER_\d+: (.*)$", line.strip())
            if not utterance:
                continue
            shared = set(tokenize(utterance.group(1))) & query_tokens
            if len(shared) > best_overlap:
                best_line, best_overlap = utterance.group(1), len(shared)
        if best_line is not None and best_overlap >= self.min_overlap:
            return f"{best_line} {NO_CITE}"
        return f"I don't have enough information to answer that. {NO_CITE}"


class MockExtractorClient(LlmClient):
    """Splits the session at user lines starting with the topic marker;
    each segment becomes one memory summarised by its first utterance
    from the requested speaker."""

    kind = "mock_extractor"

    def __init__(self, client_id: str = "mock-extractor",
                 marker: str = "#topic"):
        super().__init__(client_id)
        self.marker = marker

    def _complete(self, prompt: str) -> str:
        task_line = _rest_of_line(prompt, "personal summaries for ")
        role = re.match(r"(SPEAKER_\d+)", task_line)
        speaker = role.group(1) if role else "SPEAKER_1"
        body = _after_last(prompt, "Input:")
        turns: list[tuple[int, str, str]] = []
        index = None
        speakers: dict[str, str] = {}
        for line in body.split("\n"):
            line = line.strip()
            head = re.match(r"Turn (\d+):$", line)
            if head:
                if index is not None:
                    turns.append((index, speakers.get("SPEAKER_1", ""),
                                  speakers.get("SPEAKER_2", "")))
                index = int(head.group(1))
                speakers = {}
                continue
            utterance = re.match(r"(SPEAKER_\d+): (.*)$", line)
            if utterance and index is not None:
                speakers[utterance.group(1)] = utterance.group(2)
        if index is not None:
            turns.append((index, speakers.get("SPEAKER_1", ""),
                          speakers.get("SPEAKER_2", "")))
        if not turns:
            return NO_TRAIT

        segments: list[list[tuple[int, str, str]]] = []
        for turn in turns:
            if turn[1].startswith(self.marker) or not segments:
                segments.append([])
            segments[-1].append(turn)

        memories = []
        for segment in segments:
            texts = [(u if speaker == "SPEAKER_1" else a)
                     for _, u, a in segment]
            first = next((t for t in texts if t), "")
            if first.startswith(self.marker):
                first = first[len(self.marker):].strip()
            if not first:
                continue
            memories.append({"summary": first,
                             "reference": [i for i, _, _ in segment]})
        if not memories:
            return NO_TRAIT
        return json.dumps({"extracted_memories": memories})


class MockDeciderClient(LlmClient):
    """Merges into the most similar history summary when the hashing
    similarity clears the threshold; the merged text is "old; new"."""

    kind = "mock_decider"

    def __init__(self, client_id: str = "mock-decider",
                 threshold: float = 0.8, dimension: int = 64):
        super().__init__(client_id)
        self.threshold = threshold
        self._cfg = EmbedderConfig(dimension=dimension)

    def _complete(self, prompt: str) -> str:
        history_line = _rest_of_line(prompt, "History Personal Summaries: ")
        new_line = _rest_of_line(prompt, "New Personal Summary: ")
        try:
            history = json.loads(history_line)["history_summaries"]
            new = json.loads(new_line)["new_summary"]
        except (ValueError, KeyError):
            return "Add()"
        if not history:
            return "Add()"
        new_vec = embed(new, self._cfg)
        scores = [similarity(new_vec, embed(old, self._cfg))
                  for old in history]
        best = max(range(len(scores)), key=lambda i: (scores[i], -i))
        if scores[best] > self.threshold:
            return f"Merge({best}, {history[best]}; {new})"
        return "Add()"


class MockJudgeClient(LlmClient):
    """Yes iff the normalised gold answer is a substring of the response."""

    kind = "mock_judge"

    def __init__(self, client_id: str = "mock-judge"):
        super().__init__(client_id)

    @staticmethod
    def _normalize(text: str) -> str:
        return " ".join(tokenize(text))

    def _complete(self, prompt: str) -> str:
        gold = _rest_of_line(prompt, "Ground-truth Answer:")
        response = _rest_of_line(prompt, "Response:")
        if self._normalize(gold) and (
                self._normalize(gold) in self._normalize(response)):
            return "Yes"
        return "No"
