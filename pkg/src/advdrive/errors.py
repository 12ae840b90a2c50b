class ConfigurationError(ValueError):
    """Invalid configuration, unknown key, or incompatible checkpoint."""


class ProtocolError(RuntimeError):
    """A caller broke an interface contract (bad action, stale batch, shape mismatch)."""


class NumericError(ArithmeticError):
    """Non-finite loss or gradient."""


class CheckpointError(ConfigurationError):
    """Unreadable, truncated, or mismatched checkpoint file."""


class LogParseError(ValueError):
    """Malformed episode log; the message names the file and line."""
