"""Exception taxonomy shared across the package."""


class VcreError(Exception):
    """Base class for all package errors."""


class SchemaError(VcreError):
    """A required column is missing or the declared schema is inconsistent."""


class CsvParseError(VcreError):
    """A cell could not be parsed; the message carries the 1-based row number."""


class DataValidationError(VcreError):
    """Input violates a structural requirement (sizes, ranks, dimensions)."""


class NumericalError(VcreError):
    """A numerical operation could not be completed."""


class EmptyWindowError(NumericalError):
    """No observation carries positive kernel weight at the requested point."""


class SingularWindowError(NumericalError):
    """The local weighted moment matrix is singular."""


class RankError(NumericalError):
    """A design matrix is rank deficient."""


class DegenerateKernelError(NumericalError):
    """Kernel moments violate mu0*mu2 - mu1^2 > 0."""
