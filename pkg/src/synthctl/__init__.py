"""Synthetic control estimation with placebo inference."""

from synthctl.effects import EffectReport, breakeven_projection, effect_table
from synthctl.errors import CoverageError, DegeneratePoolError, IngestError, PanelError, ScmError
from synthctl.estimator import (
    FitOptions,
    ScmFit,
    build_matrices,
    fit,
    optimize_importance,
    solve_weights_given_v,
    tracking_error_reduction,
)
from synthctl.inference import (
    FilterMode,
    PlaceboSuite,
    filter_placebos,
    implied_p_value,
    mspe_ratio_ranking,
    run_placebos,
)
from synthctl.panel import (
    CovariateMean,
    OutcomeLag,
    Panel,
    PredictorSpec,
    StudySpec,
    donor_pool,
    split_periods,
    validate_panel,
)

__version__ = "0.1.0"

__all__ = [
    "CoverageError",
    "CovariateMean",
    "DegeneratePoolError",
    "EffectReport",
    "FilterMode",
    "FitOptions",
    "IngestError",
    "OutcomeLag",
    "Panel",
    "PanelError",
    "PlaceboSuite",
    "PredictorSpec",
    "ScmError",
    "ScmFit",
    "StudySpec",
    "breakeven_projection",
    "build_matrices",
    "donor_pool",
    "effect_table",
    "filter_placebos",
    "fit",
    "implied_p_value",
    "mspe_ratio_ranking",
    "optimize_importance",
    "run_placebos",
    "solve_weights_given_v",
    "split_periods",
    "tracking_error_reduction",
    "validate_panel",
]
