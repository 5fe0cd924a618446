"""Exception hierarchy.

Numerical failures derive from :class:`NumericalError` so callers (the CLI in
particular) can tell them apart from bad input.
"""


class FbturError(Exception):
    """Base class for all package errors."""


class NumericalError(FbturError, RuntimeError):
    """A computation could not be completed to the requested accuracy."""


class NonHermitianInput(FbturError, ValueError):
    """A matrix expected to be Hermitian is not, beyond tolerance."""


class NegativeEigenvalue(FbturError, ValueError):
    """A matrix expected to be positive semidefinite has a negative eigenvalue."""


class DimensionMismatch(FbturError, ValueError):
    """Operators of incompatible shapes were combined."""


class InvalidParameter(FbturError, ValueError):
    """A scalar parameter lies outside its admissible range."""


class InvalidModel(FbturError, ValueError):
    """A model specification failed validation.

    The offending violations are kept on ``violations``.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        lines = [f"{v.invariant}: residual {v.residual:.3e} ({v.where})" for v in self.violations]
        super().__init__("model failed validation:\n  " + "\n  ".join(lines))


class ConvergenceFailure(NumericalError):
    """An iterative or LAPACK routine did not converge."""


class StepUnderflow(NumericalError):
    """The adaptive integrator needed a step below the minimum allowed."""


class PositivityLoss(NumericalError):
    """The propagated density matrix acquired a significantly negative eigenvalue."""


class DegenerateStationarySpace(NumericalError):
    """The generator has more than one stationary state."""

    def __init__(self, dimension):
        self.dimension = int(dimension)
        super().__init__(f"stationary space has dimension {self.dimension}, expected 1")


class StepTooCoarse(NumericalError):
    """A jump probability per time step reached or exceeded one."""


class ZeroMeanCurrent(FbturError, ArithmeticError):
    """A quantity normalised by the mean current was requested with zero mean."""


class ConfigError(FbturError, ValueError):
    """A run configuration file is malformed."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if field is not None:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
