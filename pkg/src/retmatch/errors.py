class ConfigError(ValueError):
    """Invalid configuration or parameter value."""


class DegenerateInputError(ValueError):
    """Input for which the requested quantity is undefined."""


class BudgetError(RuntimeError):
    """Exhaustive search would exceed the configured enumeration budget."""


class ConsistencyError(KeyError):
    """State references an id it does not know about."""
