"""Distribution-grid state estimation with calibrated confidence ellipses."""
from .assessment import (
    CampaignConfig,
    ConfidenceRangeReport,
    GridModel,
    HitRateReport,
    confidence_range,
    hit_rate_deviation,
    run_campaign,
    sweep,
)
from .estimator import (
    ConfidenceEllipse,
    EstimateResult,
    NonIdentifiable,
    assemble,
    confidence_ellipse,
    confidence_interval,
    crlb_check,
    ellipse_contains,
    estimator_covariance,
    solve,
)
from .grid import (
    ConstraintSystem,
    GridError,
    GridTopology,
    SelectionMatrix,
    StateOrdering,
    StateVector,
    build_constraints,
    build_ordering,
    build_selection,
    load_topology,
)
from .loadflow import LoadFlowResult, LoadScenario, solve_loadflow
from .metering import NoiseSpec, em_moments, rho_to_sigma

__version__ = "0.1.0"
