"""Exception types shared across the pipeline.

Argument misuse (bad ranges, mismatched lengths) raises plain ValueError;
the classes here cover failures of external inputs and protocols, so
callers can tell a retryable network hiccup from corrupt data.
"""


class PipelineError(Exception):
    """Base class for pipeline failures."""


class TransportError(PipelineError):
    """Network-level failure talking to an HTTP endpoint or child process."""

    def __init__(self, message: str, *, retryable: bool = False):
        super().__init__(message)
        self.retryable = retryable


class ParseError(PipelineError):
    """Malformed payload. ``offset`` is the byte offset where parsing failed,
    when known."""

    def __init__(self, message: str, *, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class DecodeError(PipelineError):
    """Image bytes that cannot be decoded."""


class IntegrityError(PipelineError):
    """Payload decoded but contradicts its declared metadata."""


class ValidationError(PipelineError):
    """An input file or config value violates its documented invariants.

    The message always names the offending file or field.
    """


class ProtocolError(PipelineError):
    """Detector backend response violates the wire schema."""

    def __init__(self, message: str, *, field: str | None = None):
        super().__init__(message)
        self.field = field


class BackendError(PipelineError):
    """Detector backend reported an in-protocol error object."""


class UndefinedCorrelationError(PipelineError):
    """Correlation requested for a constant series (zero variance)."""


class DaySkipped(PipelineError):
    """A day could not be summarized; ``reason`` records why."""

    def __init__(self, day, reason: str):
        super().__init__(f"{day}: {reason}")
        self.day = day
        self.reason = reason
