"""Intervention planning for multivariate spatiotemporal self-exciting networks.

The package simulates the process, evaluates closed-form post-intervention
expectations, solves the budget-constrained node-selection problem, fits
model parameters from event data, and drives the strategy-comparison
experiments.
"""

from .errors import (
    BadScaleError,
    BudgetNegativeError,
    EmptyFileError,
    EventAfterTauError,
    InfeasiblePlanError,
    IoFailureError,
    MissingColumnError,
    NegativeEntryError,
    NoConvergenceError,
    NoImprovementError,
    NonFiniteError,
    NonStationaryError,
    StHawkesError,
    TimeBeforeTauError,
    TooFewEventsError,
    UnknownAreaError,
    ZeroBaselineError,
)
from .estimator import EMConfig, EMFit, EMInit, em_fit, log_likelihood
from .expectation import (
    ExpectationResult,
    StateVector,
    eta_at,
    expected_counts,
    reduction_metrics,
    sensitivity,
    state_at,
    totals,
)
from .harness import LAReport, SweepCell, SweepConfig, SweepResult, emit_report, run_la_pipeline, run_sweep
from .ingest import (
    LoadResult,
    ProjectionSpec,
    RawRecord,
    build_area_index,
    load_csv,
    read_event_csv,
    to_history,
    write_event_csv,
)
from .model import (
    BackgroundModel,
    Event,
    History,
    InterventionPlan,
    NetworkParams,
    SingleGaussian,
    ValidatedParams,
    WeightedKDE,
    background_mass,
    canonicalize_triggering,
    load_params,
    save_params,
    validate,
)
from .planner import (
    Objective,
    PlanSolution,
    build_objective,
    heuristic_plan,
    solve_exact,
    solve_lp_relax,
)
from .propagators import PropagatorSet, expm, propagators_at, spectral_radius
from .simulate import (
    MCEstimate,
    SimConfig,
    SimResult,
    mc_estimate,
    philox_stream,
    simulate,
    simulate_intervened,
)

__version__ = "0.1.0"
