"""Exception hierarchy shared across the package."""


class GpldlaError(Exception):
    """Base class for all package errors."""


class ShapeError(GpldlaError):
    """Operands have incompatible shapes."""


class ContractError(GpldlaError):
    """A caller violated an operation's precondition."""


class CapacityError(GpldlaError):
    """A dataset split cannot supply the requested episode."""


class ParseError(GpldlaError):
    """A data or config file failed to parse."""


class ValidationError(GpldlaError):
    """Parsed input is structurally valid but semantically wrong."""


class ConfigError(GpldlaError):
    """A run configuration is missing, malformed, or inconsistent."""


class NumericsError(GpldlaError):
    """A numerical operation produced an unusable result."""
