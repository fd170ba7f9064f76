"""Simulation and parametric estimation for 2-D hypoelliptic SDEs."""

from .model import (
    DiffusionParams,
    DriftParams,
    FhnParams,
    ModelSpec,
    ParamBounds,
    State,
    check_hypoellipticity,
    check_partials,
    fhn_drift,
    fhn_from_config,
    fhn_jacobian,
    fhn_model,
)
from .optimize import Objective, OptimResult, Options, minimize, transform, untransform
from .scheme import (
    CovMatrix2,
    LowerFactor2,
    StepMoments,
    Trajectory,
    cholesky2,
    downsample,
    drift_approx,
    euler_maruyama,
    ll_step,
    noise_stream,
    one_step_moments_mc,
    read_trajectory,
    sigma_delta,
    simulate,
    write_trajectory,
)
from .estimators import (
    ContrastEval,
    Dataset,
    EstimationResult,
    SweepCell,
    consistency_sweep,
    contrast,
    contrast_rate,
    drift_gap_rough,
    drift_gap_smooth,
    estimate_linearized,
    estimate_qv,
    qv_criterion,
    sigma_explicit,
)
from .harness import (
    DensityExport,
    ExperimentConfig,
    InitPolicy,
    ReplicationSummary,
    config_from_dict,
    export_density,
    load_config,
    run_experiment,
    summarize,
    write_summary_files,
)

__version__ = "0.1.0"
