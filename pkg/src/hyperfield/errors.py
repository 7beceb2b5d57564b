"""Exception types shared across the package.

Every error raised on a contract violation carries a stable ``code`` string
so callers (and the CLI) can branch on the failure kind without parsing
messages.
"""


class HyperfieldError(Exception):
    """Base class; ``code`` is a stable machine-readable identifier."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class FormatError(HyperfieldError):
    """Malformed or unsupported on-disk data (tensor files, PPM, archives)."""


class ConfigError(HyperfieldError):
    """Invalid configuration value or unknown key. Maps to CLI exit 2."""


class ShapeError(HyperfieldError):
    """Tensor/shape contract violation between components."""


class StageError(HyperfieldError):
    """Checkpoint stage does not match what the operation requires."""


class NumericsError(HyperfieldError):
    """Degenerate numerical state (vanishing norms, diverged training)."""
