"""Exception types raised across the package."""


class ElasticNetError(Exception):
    """Base class for all package errors."""


class DegenerateCurve(ElasticNetError, ValueError):
    """A curve has (numerically) vanishing speed somewhere."""


class OrderTooHigh(ElasticNetError, ValueError):
    """Requested derivative order exceeds the configured cap."""


class InvalidNetwork(ElasticNetError, ValueError):
    """A network violates one of its structural invariants."""


class ParseError(ElasticNetError, ValueError):
    """Malformed curve or network file.

    Parameters
    ----------
    message : str
        Human readable description.
    line : int, optional
        1-based line number where parsing failed.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NonUnitTangent(ElasticNetError, ValueError):
    """Junction tangents are not unit vectors."""


class DegenerateJunction(ElasticNetError, ArithmeticError):
    """The junction system is (numerically) singular."""


class StepRejected(ElasticNetError):
    """The energy increased beyond tolerance during a step."""


class BlowUp(ElasticNetError, FloatingPointError):
    """Non-finite values or curvature above the configured cap."""


class LinearSolveFailure(ElasticNetError, ArithmeticError):
    """The implicit linear system could not be solved."""


class HaltAssumptionViolated(ElasticNetError):
    """A runtime monitor of the non-degeneracy assumptions fired.

    Parameters
    ----------
    reason : str
        One of ``"Length"``, ``"Delta"`` or ``"Span"``.
    detail : str
        Free-form explanation with the offending values.
    """

    def __init__(self, reason, detail=""):
        self.reason = reason
        self.detail = detail
        self.state = None
        self.records = None
        super().__init__(f"{reason}: {detail}" if detail else reason)


class InfeasibleGeometry(ElasticNetError, ValueError):
    """Generator inputs cannot produce a regular network."""


class ProjectionFailed(ElasticNetError, ArithmeticError):
    """The junction balance projection did not converge."""
