"""
Exception hierarchy for the risk-guided search package.

Every error carries the process exit code the CLI maps it to.
"""

from typing import Any, Optional


class RiskRagError(Exception):
    """Base class for all package errors."""

    exit_code: int = 1


class InvalidArgumentError(RiskRagError, ValueError):
    """A precondition on an operation's arguments was violated."""

    exit_code = 2


class ConfigError(RiskRagError):
    """Configuration could not be loaded or failed validation."""

    exit_code = 2


class IngestError(RiskRagError):
    """A dataset or world file could not be ingested."""

    exit_code = 2

    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class TemplateError(RiskRagError, KeyError):
    """A prompt template could not be rendered."""

    exit_code = 2

    def __init__(self, placeholder: str, template_name: str = ""):
        super().__init__(placeholder)
        self.placeholder = placeholder
        self.template_name = template_name

    def __str__(self) -> str:
        return f"unbound placeholder {{{self.placeholder}}} in template '{self.template_name}'"


class ParseError(RiskRagError, ValueError):
    """Model output did not follow the expected format."""

    exit_code = 2


class ExpansionError(RiskRagError):
    """No usable child could be produced for a node."""


class BackendError(RiskRagError):
    """The policy backend failed to serve a request."""

    exit_code = 3

    def __init__(self, message: str, retryable: bool = False):
        super().__init__(message)
        self.retryable = retryable


class ProtocolError(BackendError):
    """The backend answered with a malformed response."""


class CapabilityError(BackendError):
    """The backend does not support the requested operation."""


class SearchError(RiskRagError):
    """A search was aborted; `tree` holds the partial, annotated tree."""

    exit_code = 3

    def __init__(self, message: str, tree: Any = None):
        super().__init__(message)
        self.tree = tree
