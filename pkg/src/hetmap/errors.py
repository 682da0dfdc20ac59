"""Exception types shared across the package."""


class HetmapError(Exception):
    """Base class for all package-specific errors."""


class ParseError(HetmapError):
    """Input file is syntactically malformed or missing required keys."""


class ValidationError(HetmapError):
    """Structurally valid data that violates a model invariant."""


class DomainError(HetmapError):
    """Numeric precondition violated (non-positive utility, zero CPU time, ...)."""


class UnderDeterminedError(HetmapError):
    """Fewer distinct training configurations than model coefficients."""


class InstanceTooLargeError(HetmapError):
    """Exact solver invoked beyond its enumeration bound."""
