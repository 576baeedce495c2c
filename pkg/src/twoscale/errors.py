"""Exception hierarchy shared by every module of the package."""


class TwoScaleError(Exception):
    """Base class for all errors raised by twoscale."""


class SingularMatrix(TwoScaleError):
    pass


class RankDeficient(TwoScaleError):
    pass


class NoConvergence(TwoScaleError):
    pass


class NonFiniteEvaluation(TwoScaleError):
    pass


class DimensionMismatch(TwoScaleError, ValueError):
    pass


class InvalidEpsilon(TwoScaleError, ValueError):
    pass


class ModeShapeMismatch(TwoScaleError, ValueError):
    pass


class SingularJacobian(SingularMatrix):
    """The fast-state Jacobian is (numerically) singular at the evaluation point."""


class InvalidParams(TwoScaleError, ValueError):
    pass


class NonPhysicalState(TwoScaleError):
    pass


class NonFiniteState(TwoScaleError):
    """Integration produced a non-finite state.

    Attributes
    ----------
    time : float
        Simulation time of the first non-finite sample.
    """

    def __init__(self, time, message=None):
        self.time = time
        super().__init__(message or f"non-finite state at t={time:.9g} s")


class GridMismatch(TwoScaleError, ValueError):
    pass


class ParseError(TwoScaleError, ValueError):
    """Malformed parameter or scenario file.

    ``line`` is the 1-based line number, or None when the problem is not
    tied to a single line (e.g. a missing key).
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InvalidScenario(TwoScaleError, ValueError):
    pass
