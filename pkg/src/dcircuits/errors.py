"""Exception hierarchy shared by all modules."""


class CircuitError(Exception):
    """Base class for every error raised by the package."""


class SpaceMismatch(CircuitError, ValueError):
    """Two objects live on different finite spaces."""


class StochasticityError(CircuitError, ValueError):
    """A matrix row or distribution is not a probability vector."""


class TypeMismatch(CircuitError, TypeError):
    """A wiring or solver precondition on interface types fails."""


class BallViolation(CircuitError, ValueError):
    """A value function lies outside the declared invariant ball."""


class NonContraction(CircuitError, ValueError):
    """An operator that must be a contraction has modulus >= 1."""


class SingularSystem(CircuitError, ArithmeticError):
    pass


class UnguardedTrace(CircuitError, ValueError):
    """Feedback is not uniformly contractive in the traced wire."""


class UncertifiableTrace(CircuitError, ValueError):
    """A trace node has no certificate or its external modulus is >= 1."""

    def __init__(self, message, path=None):
        super().__init__(message if path is None else f"{message} (node {path})")
        self.path = path


class NotExact(CircuitError, ValueError):
    """An abstraction map expected to be a homomorphism has nonzero mismatch."""


class ObligationFailed(CircuitError, AssertionError):
    """A local contract obligation T(C) <= C' does not hold."""

    def __init__(self, message, obligation=None, witness=None):
        super().__init__(message)
        self.obligation = obligation
        self.witness = witness


class MaxIterExceeded(CircuitError, RuntimeError):
    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class BudgetExceeded(CircuitError, RuntimeError):
    pass


class AbsoluteContinuityViolation(CircuitError, ValueError):
    def __init__(self, message, step=None, state=None, action=None):
        super().__init__(message)
        self.step = step
        self.state = state
        self.action = action


class BoundViolation(CircuitError, AssertionError):
    """A measured quantity exceeded its certified bound."""


class ParseError(CircuitError, ValueError):
    def __init__(self, message, location=None):
        super().__init__(message if location is None else f"{location}: {message}")
        self.location = location
