"""Exception hierarchy shared by all modules.

The CLI maps ``ValidationError`` to exit code 1 and ``NumericalError`` to
exit code 2, so library code should raise one of these two families.
"""


class ShrinkerLabError(Exception):
    pass


class ValidationError(ShrinkerLabError, ValueError):
    """Bad input: wrong shapes, out-of-range parameters, malformed config."""


class NumericalError(ShrinkerLabError, RuntimeError):
    """A computation ran but a checked property or solve failed."""


class ResonanceError(NumericalError):
    pass


class MetricDegenerateError(NumericalError):
    pass


class HypothesisError(NumericalError):
    """Barrier parameters do not satisfy the supersolution hypothesis."""


class GlueError(NumericalError):
    pass


class NoCrossingError(NumericalError):
    pass
