"""Ranking-and-selection workbench: adaptive allocation policies, the
rate-optimal static allocation, and a reproducible benchmark harness."""

from .allocation import SolverError, SolverReport, balance_residual, rate_of, scale_constant, solve_gj
from .bench import (
    ConfigName,
    ExperimentSpec,
    MetricsSeries,
    Trajectory,
    build_instance,
    run_experiment,
    run_replication,
    summarize,
)
from .core import (
    PosteriorState,
    ProblemInstance,
    RngStream,
    current_best,
    f_acq,
    norm_cdf,
    norm_pdf,
    sample_output,
    update_posterior,
)
from .policies import (
    Policy,
    PolicyDecision,
    PolicyKind,
    aomap_choose,
    aomap_xi,
    cei_value,
    ei_value,
    gcei_choose,
    gcei_grad,
    mcei_choose,
    static_choose,
    ttts_choose,
)

__version__ = "0.1.0"
