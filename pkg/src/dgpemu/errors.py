"""Exception hierarchy shared by every module."""


class DgpError(Exception):
    """Base class for errors raised by dgpemu."""


class DomainError(DgpError, ValueError):
    """An argument lies outside the domain of the operation."""


class FactorizationFailed(DgpError, ArithmeticError):
    """A Cholesky factorization failed even after the full jitter ladder."""


class StepFailed(DgpError, ArithmeticError):
    """An optimizer step could not keep the variational covariance PSD."""


class ParseError(DgpError, ValueError):
    """A data or configuration file is malformed."""


class SchemaError(DgpError, KeyError):
    """A required column or key is missing."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class DegenerateColumn(DgpError, ValueError):
    """A design column has zero range and cannot be mapped to [0, 1]."""


class DimMismatch(DgpError, ValueError):
    """Input dimensionality does not match the model."""
