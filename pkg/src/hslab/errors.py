"""Exception hierarchy shared by all hslab modules."""


class HslabError(Exception):
    """Base class for every error raised by hslab."""


class ParameterError(HslabError, ValueError):
    """Inputs fall outside the admissible parameter range."""


class ExcludedCaseError(ParameterError):
    """The CKN endpoint b = a + 1 (linear problem) was requested."""


class ChartError(HslabError, ValueError):
    """A point lies outside the boundary-flattening chart."""


class SingularPointError(HslabError, ValueError):
    """Evaluation at the centre of an inversion."""


class IntegrabilityError(HslabError, ValueError):
    """The weighted integral does not converge for this configuration."""


class NehariError(HslabError):
    """The ray t -> Phi(t u) has no maximum, or more than one."""


class InvariantViolation(HslabError):
    """A numerical invariant that must hold was observed to fail."""


class DiagnosticsError(HslabError):
    """The solver left the admissible set (e.g. energy runaway)."""


class ScaleError(HslabError):
    """A blow-up scale underflowed or is otherwise unusable."""


class RegimeError(HslabError):
    """Parameters fall outside the regime where a solution is expected."""


class RmaxTooSmallError(HslabError):
    """The truncation radius is too small for a tail-controlled integral."""


class OracleFailure(HslabError):
    """A reference solution or constant failed its certification."""


class SweepRangeError(HslabError):
    """A maximum was found at the edge of the scanned range."""
