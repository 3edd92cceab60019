"""Exception types shared across the pipeline."""

from __future__ import annotations


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


# --- graph model ---

class DuplicateIdError(PipelineError):
    pass


class InvalidNodeError(PipelineError):
    pass


class InvalidEdgeKindError(PipelineError):
    pass


class MissingAssertionError(PipelineError):
    pass


# --- ingestion / storage formats ---

class FormatError(PipelineError):
    """Malformed input file.  Carries location info when known."""

    def __init__(self, message, *, path=None, line=None, offset=None, field=None):
        parts = [message]
        if path is not None:
            parts.append(f"path={path}")
        if line is not None:
            parts.append(f"line={line}")
        if offset is not None:
            parts.append(f"byte_offset={offset}")
        if field is not None:
            parts.append(f"field={field}")
        super().__init__(" | ".join(str(p) for p in parts))
        self.path = path
        self.line = line
        self.offset = offset
        self.field = field


class EmptyFieldError(FormatError):
    pass


class MissingAssetError(PipelineError):
    pass


class VersionMismatchError(PipelineError):
    pass


# --- schema / config ---

class SchemaUnknownError(PipelineError):
    pass


class ConfigError(PipelineError):
    """Invalid or missing configuration; ``key`` names the offending entry."""

    def __init__(self, key, message=None):
        self.key = key
        super().__init__(message or f"invalid or missing config key: {key}")


# --- gateway ---

class AllEndpointsFailedError(PipelineError):
    """Every attempt failed; ``last_errors`` maps endpoint name to its last error."""

    def __init__(self, last_errors):
        self.last_errors = dict(last_errors)
        detail = "; ".join(f"{k}: {v}" for k, v in self.last_errors.items())
        super().__init__(f"all endpoints failed ({detail or 'no attempts recorded'})")


class AssetUnreadableError(PipelineError):
    pass


class JudgeUnavailableError(PipelineError):
    pass


# --- builder ---

class ExtractionParseError(PipelineError):
    pass


# --- sampling ---

class EmptyGraphError(PipelineError):
    pass


class NoBackboneFoundError(PipelineError):
    pass


class NoValidTraceError(PipelineError):
    pass


class DanglingTraceError(PipelineError):
    pass


# --- synthesis ---

class UnknownTemplateError(PipelineError):
    pass


class GenerationParseError(PipelineError):
    pass


# --- quality ---

class ComplexityParseError(PipelineError):
    pass


class MissingScoreError(PipelineError):
    def __init__(self, record_id, field):
        self.record_id = record_id
        self.field = field
        super().__init__(f"record {record_id} is missing required score: {field}")


# --- analysis ---

class UnknownFormatError(PipelineError):
    pass
