"""Exception taxonomy shared across the toolkit.

The CLI maps these onto exit codes: configuration problems are the
caller's fault, data problems mean an input file is unusable, and
divergence/controller errors are runtime conditions.
"""


class BudgetLMError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(BudgetLMError):
    """Invalid configuration: bad flag value, malformed config file, precondition violation."""


class DataError(BudgetLMError):
    """Unusable input data (corrupt shard, empty validation set, missing vocab)."""


class ShardFormatError(DataError):
    """A shard file failed structural validation; message carries the byte offset."""


class DivergenceError(BudgetLMError):
    """Training produced a non-finite loss, gradient, or activation."""


class ControllerError(BudgetLMError):
    """The sweep controller observed an inconsistent trial state."""
