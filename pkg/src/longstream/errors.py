"""Exception taxonomy shared across the package."""


class LongstreamError(Exception):
    """Base class for all package errors."""


class DimensionError(LongstreamError):
    """Shapes do not satisfy an operation's contract."""


class ContractError(LongstreamError):
    """A documented precondition was violated by the caller."""


class GraphReuseError(LongstreamError):
    """backward() called twice on the same tape."""


class ConfigError(LongstreamError):
    """Invalid configuration value or combination."""


class OracleError(LongstreamError):
    """A verification oracle could not run (e.g. non-deterministic target)."""


class UnknownPromptError(ConfigError):
    """Prompt text not in the command vocabulary."""


class MissingArtifactError(LongstreamError):
    """A required file (checkpoint, config) does not exist."""


class NumericFailure(LongstreamError):
    """A non-finite value halted a run; diagnostics travel on the exception."""
