"""Error types that map onto the command-line exit codes."""


class ConfigError(Exception):
    """Bad configuration file, flag value, or artifact/config mismatch."""


class NumericsError(RuntimeError):
    """Non-finite value reached the training loop; aborts the run."""
