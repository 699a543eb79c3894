"""Exception types shared across the package."""


class RememError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(RememError):
    """Vector or matrix dimensions disagree."""


class EmptyText(RememError):
    """Text input is empty after whitespace trimming."""


class RemoteUnavailable(RememError):
    """A remote embedding endpoint could not be reached or misbehaved."""


class DuplicateEntryId(RememError):
    """An entry with this id already exists in the bank."""


class UnknownEntryId(RememError):
    """No entry with this id exists in the bank."""


class SessionNotClosed(RememError):
    """Operation requires a closed session."""


class AlreadyClosed(RememError):
    """Session is already closed."""


class SessionStillOpen(RememError):
    """Only one session may be open per owner at a time."""


class NoOpenSession(RememError):
    """Operation requires an open session."""


class CorruptFile(RememError):
    """A persisted file failed to parse; message carries line diagnostics."""


class EmbedderMismatch(RememError):
    """Persisted state was written under an incompatible embedder."""


class LlmUnavailable(RememError):
    """LLM call failed or timed out."""


class MalformedLlmOutput(RememError):
    """LLM output did not conform to the expected grammar or schema."""


class MTooLarge(RememError):
    """Requested selection size exceeds the candidate count."""


class StaleTrace(RememError):
    """Selection trace no longer matches the inputs it was created from."""


class NonFiniteGradient(RememError):
    """A gradient contained NaN or Inf; the update was rejected."""


class TraceModeMismatch(RememError):
    """Operation requires a trace produced in a different mode."""


class ScriptOrderViolation(RememError):
    """An evaluation question precedes the session holding its evidence."""


class QuestionSetMismatch(RememError):
    """Run records being compared do not share the same question set."""


class EmptyGold(RememError):
    """Question has no gold evidence for retrieval scoring."""


class BindFailure(RememError):
    """Service could not bind its address."""


class StoreCorruption(RememError):
    """Persisted stores failed to load at service startup."""
