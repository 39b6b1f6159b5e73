"""Exception hierarchy shared across the package."""


class BielabError(Exception):
    """Base class for all package errors."""


class GeometryError(BielabError):
    """Invalid or inconsistent boundary geometry."""


class UnsupportedGeometryError(GeometryError):
    """Operation requires mesh structure (graph chart, closed surface) that is absent."""


class SpecError(BielabError):
    """Kernel or problem parameters outside their admissible range."""


class PoleError(BielabError):
    """Fundamental solution evaluated at its pole."""


class EvaluationPointError(BielabError):
    """Potential evaluated at an inadmissible point (on the boundary)."""


class CompatibilityError(BielabError):
    """Boundary data violates the compatibility conditions of the problem."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals or {}


class SolverError(BielabError):
    """Linear-algebra failure in a boundary-equation solve."""


class NumericalError(BielabError):
    """Numerical accuracy failure (too few samples, degenerate data)."""


class ConfigError(BielabError):
    """Malformed run configuration or missing referenced file."""
