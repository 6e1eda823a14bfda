"""Exception hierarchy shared by every module of the package."""


class LaneError(Exception):
    """Base class for all errors raised by clrlane."""


class DimensionError(LaneError, ValueError):
    """Array shapes or point counts do not agree."""


class DomainError(LaneError, ValueError):
    """An argument lies outside the domain of an operation."""


class ConfigError(LaneError, ValueError):
    """Invalid or unknown configuration value."""


class ParseError(LaneError, ValueError):
    """Malformed text input. ``lineno`` is 1-based."""

    def __init__(self, message, lineno=None, source=None):
        self.lineno = lineno
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}:"
        if lineno is not None:
            where += f"{lineno}:"
        super().__init__(f"{where} {message}".strip() if where else message)


class FormatError(LaneError, ValueError):
    """Structurally valid input that violates a file-format contract."""

    def __init__(self, message, key=None, lineno=None):
        self.key = key
        self.lineno = lineno
        prefix = f"line {lineno}: " if lineno is not None else ""
        super().__init__(prefix + message)
