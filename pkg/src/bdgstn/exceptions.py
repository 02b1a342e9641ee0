"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(ValueError):
    """A hyperparameter or configuration value is invalid."""


class ContractError(ValueError):
    """A precondition of an operation was violated by the caller."""


class DataFormatError(ValueError):
    """An input file does not conform to its documented format."""
