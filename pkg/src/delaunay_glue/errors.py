"""Exception hierarchy shared by all modules.

The CLI maps ``PreconditionError`` (and subclasses) to exit code 2 and
``NumericalError`` (and subclasses) to exit code 3.
"""


class GlueError(Exception):
    """Base class for library errors."""


class PreconditionError(GlueError, ValueError):
    """An input violates a documented precondition."""


class DomainError(PreconditionError):
    """A parameter lies outside its admissible domain."""


class RangeError(PreconditionError):
    """A requested evaluation point or interval is not covered."""


class ConfigurationError(PreconditionError):
    """Required auxiliary data or configuration is missing or unsupported."""


class ConsistencyError(PreconditionError):
    """A computed quantity violates a smallness or consistency requirement."""


class NumericalError(GlueError, RuntimeError):
    """A numerical procedure failed to meet its tolerance."""


class IntegrationError(NumericalError):
    """ODE integration drifted off its invariant."""


class DegenerateImmersionError(NumericalError):
    """The first fundamental form is singular (EG - F^2 <= 0)."""


class DivergenceError(NumericalError):
    """A fixed-point or Newton iteration stopped contracting."""


class EllipticRegimeError(NumericalError):
    """A monodromy trace satisfies |tr| <= 2 (no real Floquet exponent)."""
