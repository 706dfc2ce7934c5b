"""Error hierarchy shared by all pubbie modules.

Every error carries a stable machine-readable ``code`` so the service layer
can surface it to clients without leaking internals. Codes form a closed,
documented set (see README).
"""

from __future__ import annotations


class PubbieError(Exception):
    """Base class for all agent errors.

    Attributes:
        code: stable machine-readable identifier.
        retryable: whether retrying the same request may succeed.
    """

    code = "INTERNAL"
    retryable = False

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)
        self.message = message or self.code


# --- store ---------------------------------------------------------------

class EmptyInputError(PubbieError):
    code = "EMPTY_INPUT"


class HeaderMissingRequiredError(PubbieError):
    code = "HEADER_MISSING_REQUIRED"


class ExecError(PubbieError):
    code = "EXEC_ERROR"


class StoreUnavailableError(PubbieError):
    code = "STORE_UNAVAILABLE"
    retryable = True


# --- sql guard -----------------------------------------------------------

class GuardError(PubbieError):
    """Base for SQL validation rejections."""


class InvalidLabelError(GuardError):
    # Also raised outside the guard wherever a program label fails to parse.
    code = "INVALID_LABEL"


class NotSqlError(GuardError):
    code = "NOT_SQL"


class MultiStatementError(GuardError):
    code = "MULTI_STATEMENT"


class ForbiddenStatementError(GuardError):
    code = "FORBIDDEN_STATEMENT"


class ForbiddenTableError(GuardError):
    code = "FORBIDDEN_TABLE"


class ForbiddenColumnError(GuardError):
    code = "FORBIDDEN_COLUMN"


class SqlSyntaxError(GuardError):
    code = "SYNTAX_ERROR"

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


# --- llm provider --------------------------------------------------------

class ProviderUnreachableError(PubbieError):
    code = "PROVIDER_UNREACHABLE"
    retryable = True


class ProviderError(PubbieError):
    code = "PROVIDER_ERROR"

    def __init__(self, status: int, body: str):
        super().__init__(f"provider returned HTTP {status}")
        self.status = status
        self.body = body


class MockNoMatchError(PubbieError):
    code = "MOCK_NO_MATCH"


class CacheMissError(PubbieError):
    code = "CACHE_MISS"

    def __init__(self, text_hash: str):
        super().__init__(f"no cached embedding for hash {text_hash}")
        self.text_hash = text_hash


class DimensionMismatchError(PubbieError):
    code = "DIMENSION_MISMATCH"


class ScriptIoError(PubbieError):
    code = "IO_ERROR"


class ScriptParseError(PubbieError):
    code = "PARSE_ERROR"

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


# --- classifier ----------------------------------------------------------

class EmptyCorpusError(PubbieError):
    code = "EMPTY_CORPUS"


class LengthMismatchError(PubbieError):
    code = "LENGTH_MISMATCH"


class EmptyEvalError(PubbieError):
    code = "EMPTY"


class TooSmallError(PubbieError):
    code = "TOO_SMALL"


# --- orchestrator --------------------------------------------------------

class UnparseableStageOutputError(PubbieError):
    code = "UNPARSEABLE_STAGE_OUTPUT"

    def __init__(self, stage: str, text: str):
        super().__init__(f"stage {stage} produced unparseable output: {text!r}")
        self.stage = stage
        self.text = text


class SqlGenerationFailedError(PubbieError):
    code = "SQL_GENERATION_FAILED"

    def __init__(self, cause: GuardError):
        super().__init__(f"generated SQL rejected: {cause.code}: {cause.message}")
        self.cause = cause


class NoResultToExportError(PubbieError):
    code = "NO_RESULT_TO_EXPORT"


class SessionNotFoundError(PubbieError):
    code = "SESSION_NOT_FOUND"


class SessionBusyError(PubbieError):
    code = "SESSION_BUSY"
    retryable = True


# --- service -------------------------------------------------------------

class TextTooLongError(PubbieError):
    code = "TEXT_TOO_LONG"


class EmptyTextError(PubbieError):
    code = "EMPTY_TEXT"


class PayloadTooLargeError(PubbieError):
    code = "PAYLOAD_TOO_LARGE"


class TemplateError(PubbieError):
    code = "TEMPLATE_ERROR"


class ConfigError(PubbieError):
    code = "CONFIG_ERROR"
