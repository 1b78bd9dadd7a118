"""Exception types raised across the package.

The CLI maps each class to its own exit code, so keep the hierarchy flat.
"""


class DiffuirError(Exception):
    exit_code = 1
    kind = "error"


class ConfigError(DiffuirError, ValueError):
    exit_code = 2
    kind = "config"


class DimensionError(DiffuirError, ValueError):
    exit_code = 2
    kind = "dimension"


class TimestepError(DiffuirError, IndexError):
    exit_code = 2
    kind = "timestep"


class DomainError(DiffuirError, ValueError):
    exit_code = 2
    kind = "domain"


class MissingFileError(DiffuirError, FileNotFoundError):
    exit_code = 3
    kind = "missing-file"


class CheckpointError(DiffuirError):
    exit_code = 4
    kind = "checkpoint"


class NonFiniteLossError(DiffuirError, RuntimeError):
    exit_code = 6
    kind = "non-finite-loss"
