"""Exception taxonomy shared across the package.

Callers can rely on these categories: contract violations are programming
errors at call sites (bad arguments, ordering violations), the lookup and
conflict errors are data-dependent, and DecoderMiss is recoverable (the
evaluation harness substitutes a zero action and logs it).
"""


class ContractViolation(ValueError):
    """An argument or call-ordering precondition was violated."""


class LabelNotFound(KeyError):
    """A label/skill/task id was requested that the store does not contain."""


class LabelConflict(ValueError):
    """An append would overwrite an existing label in prototype mode."""


class DecoderMiss(RuntimeError):
    """Retrieval scope for a decode query is empty."""


class GenerationError(RuntimeError):
    """Demo generation exhausted its resample budget."""


class ConfigError(ValueError):
    """Scenario configuration failed validation."""
