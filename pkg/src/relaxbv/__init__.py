"""Numerical toolkit for relaxed bulk + jump + Cantor energies of pairs of
a bounded-variation field and a companion integrable field."""

from .density import (
    CATALOG_NAMES,
    DEFAULT_SCHEDULE,
    INFINITY,
    Dimensions,
    HypothesisReport,
    Integrand,
    RecessionDensity,
    SamplePlan,
    check_hypotheses_p,
    density_from_expression,
    evaluate_density,
    grid_box,
    make_density,
    recession_infty,
    recession_p,
    yosida_transform,
)
from .envelope import (
    EnvelopeProblem,
    EnvelopeSolution,
    cq_envelope,
    cq_recession_p,
    envelope_integrand,
    is_cq_at,
)
from .surface import (
    CellSolution,
    JumpData,
    closed_form_K,
    make_rotation,
    solve_Kinfty,
    solve_Kp,
    solve_Kr,
)
from .fields import (
    CantorComponent,
    DerivativeDecomposition,
    JumpRecord,
    LpField,
    Piece,
    PiecewiseBVField,
    QuadratureSpec,
    build_field,
    build_lp_field,
    decompose_derivative,
    total_variation,
)
from .energy import (
    EnergyBreakdown,
    SandwichReport,
    SolverSettings,
    mollified_estimate,
    recovery_estimate,
    relaxed_energy,
    sandwich_report,
)
from .errors import (
    AllStartsFailedError,
    CantorIn2DError,
    ConfigParseError,
    DegenerateNormalError,
    DimensionMismatchError,
    HypothesisFailError,
    NonfiniteValueError,
    NonunitNormalError,
    NotAStepFieldError,
    NotConvergedWarning,
    OutputIOError,
    QuadratureUnderresolvedWarning,
    RegionOverlapError,
    RelaxbvError,
    SamplingEmptyError,
    TraceMismatchError,
    UDependentDensityError,
    UnknownDensityError,
)

__version__ = "0.1.0"
