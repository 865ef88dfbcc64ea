"""Exception types raised across the package."""


class LneditError(Exception):
    """Base class for all package errors."""


class ConfigError(LneditError, ValueError):
    """Invalid configuration value, key or file syntax.

    ``key`` and ``line`` are filled in when known so the CLI can point at
    the offending entry.
    """

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        self.detail = message
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class DimensionError(LneditError, ValueError):
    """Array shapes that do not line up."""


class NumericalError(LneditError, ArithmeticError):
    """Non-finite inputs, failed factorizations or failed internal checks."""


class CheckpointError(LneditError, ValueError):
    """Unreadable or incompatible NIW checkpoint file."""


class TraceError(LneditError, ValueError):
    """Malformed gradient trace CSV."""
