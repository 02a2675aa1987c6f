"""Exception hierarchy for the condwalk package.

All condwalk errors derive from CondwalkError so callers can catch the
package's failures with a single except clause while still distinguishing
configuration mistakes from numeric breakdowns (the CLI maps these onto
distinct exit codes).
"""


class CondwalkError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(CondwalkError):
    """Invalid run configuration (schema violation, missing field, bad value)."""


class DomainError(CondwalkError):
    """Argument outside the domain of a model evaluator (e.g. tilt outside t_domain)."""


class RangeError(CondwalkError):
    """Target mean not attainable by the tilted family, or a recursion left the attainable range."""


class NoConvergence(CondwalkError):
    """Iterative solver exhausted its iteration budget; message reports the bracket."""


class IntegrationFailure(CondwalkError):
    """Numerical quadrature failed its self-consistency check."""


class SupportError(CondwalkError):
    """Point outside the support of an exact conditional density (density zero)."""


class EnvelopeViolation(CondwalkError):
    """Acceptance-rejection envelope bound observed to fail; envelope misconfigured."""


class GridTooCoarse(CondwalkError):
    """Grid-convolution oracle unstable under grid halving at the requested tolerance."""


class NotReached(CondwalkError):
    """Run-length scan exhausted its grid without satisfying the stopping rule."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
