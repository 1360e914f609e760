"""Typed exceptions shared across the package."""

from __future__ import annotations


class SegTTOError(Exception):
    """Base class for every library-defined failure."""


class ConfigError(SegTTOError, ValueError):
    """A configuration field failed validation; the message names the field."""


class EncoderError(SegTTOError):
    """A backend encoder failed. Carries the offending source id when known."""

    def __init__(self, message: str, source_id: str | None = None):
        super().__init__(message)
        self.source_id = source_id


class DecoderContractError(SegTTOError):
    """Decoder inputs violate the shared-embedding-space contract."""


class ViewGenerationError(SegTTOError):
    """Augmented view sampling could not produce a legal crop."""


class SelectionError(SegTTOError):
    """View selection had nothing to keep."""


class NonFiniteLossError(SegTTOError):
    """A tuning step produced a non-finite loss. The partial trace is attached."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class AttributeRetrievalError(SegTTOError):
    """The attribute source (network or cache) could not serve a request."""


class AttributeParseError(SegTTOError):
    """No attributes could be parsed from a completion; raw text attached."""

    def __init__(self, message: str, raw_response: str = ""):
        super().__init__(message)
        self.raw_response = raw_response


class DegenerateAggregationError(SegTTOError):
    """Weighted attribute sum collapsed below the normalization floor."""


class MetricError(SegTTOError):
    """Metric accumulation or reduction was asked for something impossible."""


class StageError(SegTTOError):
    """A pipeline stage failed; names the stage and chains the cause."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
