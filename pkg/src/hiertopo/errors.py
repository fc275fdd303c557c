"""Error types shared across the package.

Error categories map onto process exit codes and HTTP error payloads:
ConfigError -> exit 2, FormatError/DataError -> exit 3.
"""


class DimensionError(ValueError):
    """Operands disagree in length, dimension, or metric."""


class DomainError(ValueError):
    """Input is outside the domain an operation is defined on."""


class FormatError(ValueError):
    """A serialized file is malformed. Carries the byte offset of the defect."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DataError(ValueError):
    """Well-formed input whose content is inconsistent (e.g. frame out of range)."""


class ConfigError(ValueError):
    """Invalid run configuration."""
