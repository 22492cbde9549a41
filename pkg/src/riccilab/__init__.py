"""Desk-scale laboratory for Type I singularities of rotationally symmetric flows.

The package evolves warped-product metrics to their singular time and
verifies the associated machinery: Type I rate bounds, reduced distance and
volume based at the singular time, density and its gap classification,
nested singular sets and their coincidence, singular-set volume decay, and
blow-up convergence to nontrivial self-similar profiles.
"""

from .geometry import (
    BallInclusionCheck,
    CurvatureField,
    InvalidMetricError,
    Topology,
    WarpedMetric,
    ball_inclusion_check,
    curvature_field,
    distance,
    read_metric,
    volume,
    write_metric,
)
from .solutions import (
    ExactFamily,
    ExactFlow,
    RigidityVerdict,
    SolitonStructure,
    make_exact_flow,
    rigidity_probe,
    soliton_potential,
    soliton_residual,
)
from .flow import (
    FlowConfig,
    FlowHistory,
    SolverInstabilityError,
    TypeIConstants,
    dumbbell_profile,
    estimate_singular_time,
    evolve,
    exact_history,
    type_one_constants,
    volume_identity_residuals,
)
from .reduced import (
    DensityEstimate,
    MinimizingCurve,
    adjoint_heat_residual,
    density_estimate,
    envelope_fit,
    monotonicity_check,
    reduced_distance,
    reduced_distance_field,
    reduced_volume,
    reduced_volume_series,
)
from .singular import (
    ProfileComparison,
    RescaledHistory,
    SingularSetReport,
    blowup_profile,
    classify_singular_points,
    coincidence_check,
    parabolic_rescale,
    rate_band_decomposition,
    volume_decay,
)

__version__ = "0.1.0"
