"""Error and warning types with stable machine-readable codes.

Every exception carries a ``code`` attribute used by the CLI for diagnostics
and exit-status mapping, and asserted by tests.
"""

from __future__ import annotations


class RelaxbvError(Exception):
    code = "ERROR"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)


class DimensionMismatchError(RelaxbvError):
    code = "DIMENSION_MISMATCH"


class NonfiniteValueError(RelaxbvError):
    code = "NONFINITE_VALUE"


class SamplingEmptyError(RelaxbvError):
    code = "SAMPLING_EMPTY"


class AllStartsFailedError(RelaxbvError):
    code = "ALL_STARTS_FAILED"


class NonunitNormalError(RelaxbvError):
    code = "NONUNIT_NORMAL"


class DegenerateNormalError(RelaxbvError):
    code = "DEGENERATE_NORMAL"


class UDependentDensityError(RelaxbvError):
    code = "U_DEPENDENT_DENSITY"


class RegionOverlapError(RelaxbvError):
    code = "REGION_OVERLAP"


class TraceMismatchError(RelaxbvError):
    code = "TRACE_MISMATCH"


class CantorIn2DError(RelaxbvError):
    code = "CANTOR_IN_2D"


class HypothesisFailError(RelaxbvError):
    code = "HYPOTHESIS_FAIL"


class NotAStepFieldError(RelaxbvError):
    code = "NOT_A_STEP_FIELD"


class ConfigParseError(RelaxbvError):
    code = "CONFIG_PARSE"


class UnknownDensityError(RelaxbvError):
    code = "UNKNOWN_DENSITY"


class OutputIOError(RelaxbvError):
    code = "IO_ERROR"


class NotConvergedWarning(UserWarning):
    """Scale-limit tail gap above tolerance; the value is still usable."""

    code = "NOT_CONVERGED"


class QuadratureUnderresolvedWarning(UserWarning):
    """Heuristic: a piece gradient varies faster than the sample grid."""

    code = "QUADRATURE_UNDERRESOLVED"
