"""Hybrid accelerated extremum-seeking dynamics: simulation library and CLI."""

from .algorithms import (
    ContractionFactors,
    EsState,
    HaesConfig,
    StateLayout,
    build,
    build_case1,
    build_case2,
    build_case3,
    build_case4,
    build_grad_es,
    contraction_factors,
    dwell_ok,
    initial_state,
    quasi_optimal_tmax,
)
from .average import (
    AverageState,
    build_average,
    lyapunov_case1,
    lyapunov_case1_jump_delta,
    lyapunov_case2,
    nesterov_rhs,
)
from .costs import ConstraintData, CostProblem, builtin, kkt_point, probe
from .dither import (
    DitherParams,
    DitherState,
    common_period,
    dither_advance,
    extract_probe,
    verify_average,
)
from .errors import (
    ConfigError,
    HybridseekError,
    IntegrationDivergedError,
    InvalidInputError,
    InvalidStartError,
    OracleUnavailableError,
)
from .harness import (
    DisturbanceSpec,
    RunMetrics,
    RunSetup,
    compute_metrics,
    perturb,
    run_experiment,
    run_setup,
    sweep,
)
from .hybrid import (
    HybridArc,
    HybridSystem,
    HybridTime,
    SolveSpec,
    closeness,
    integrate_flow_step,
    inter_jump_times,
    solve,
    validate_arc,
)

__version__ = "0.1.0"
