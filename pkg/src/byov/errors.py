"""Exception hierarchy shared across the package."""


class ByovError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(ByovError):
    """Operands have incompatible or malformed shapes."""


class ContractError(ByovError):
    """A documented precondition was violated by the caller."""


class FormatError(ByovError):
    """A binary container or manifest is malformed."""


class ValidationError(ByovError):
    """A config or dataset record failed validation."""


class DegenerateAttentionError(ByovError):
    """An attention row has no allowed keys."""


class NumericError(ByovError):
    """A non-finite value was produced where finiteness is required."""


class DataError(ByovError):
    """The dataset cannot support the requested operation."""
