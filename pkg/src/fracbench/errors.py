"""Exception types raised by fracbench."""


class FracbenchError(Exception):
    """Base class for all library errors."""


class InvalidParameterError(FracbenchError, ValueError):
    """A numeric parameter is out of its admissible range."""


class InvalidStateError(FracbenchError, ValueError):
    """A plant state violates its invariants (e.g. a negative level)."""


class SingularStateError(InvalidStateError):
    """The linearizing feedback is undefined at this state."""


class SingularLoopError(FracbenchError, ArithmeticError):
    """1 + L(jw) vanishes, so S and T are undefined."""


class ConfigurationError(FracbenchError, ValueError):
    """A run or tuning configuration is unusable."""
