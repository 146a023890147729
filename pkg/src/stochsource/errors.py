"""Exception types shared across the package, mapped to CLI exit codes."""


class ConfigError(ValueError):
    """Invalid configuration file or option combination (exit code 2)."""


class DataFormatError(RuntimeError):
    """Corrupt, truncated, or incompatible data file (exit code 3)."""


class NumericFailure(RuntimeError):
    """A numeric routine failed (singular factorization, NaN data, ...; exit code 4)."""
