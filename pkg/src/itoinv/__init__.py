"""Invariant-manifold diagnostics and invariantization transforms for Ito
stochastic differential equations, with Euler-Maruyama ensemble simulation
and built-in Kubo-oscillator and Landau-Lifshitz model families."""

from .core import (
    DifferentiableMap,
    DimensionMismatchError,
    DomainError,
    EvaluationError,
    ManifoldSpec,
    NoisePath,
    SdeSystem,
    as_state,
    grad_fd,
    hess_fd,
    identity_map,
    ito_correction,
    ito_transform,
    scalar_map,
)
from .invariance import (
    CombinedResiduals,
    ConditionCheck,
    FixedPointSampler,
    InvarianceReport,
    ManifoldSampler,
    ResidualStats,
    check_correction_vanishes,
    check_diffusion_tangency,
    check_drift_tangency,
    combined_generator_residual,
    sphere_diffusion_norm,
    strong_invariance_report,
)
from .transforms import (
    CoupledInvariantizedSystem,
    HorizonError,
    NotInvariantizableError,
    ScaleLaw,
    coupled_step_representation,
    invariantize,
    project_state,
    projected_sde,
    scale_law_from_correction,
    snap_to_level,
)
from .simulate import (
    PathAborted,
    TimeGrid,
    TrajectoryEnsemble,
    child_seed,
    em_step,
    simulate_coupled,
    simulate_coupled_ensemble,
    simulate_ensemble,
    simulate_path,
    write_trajectory_csv,
)
from .models import (
    KuboParams,
    LLParams,
    build_model,
    cross,
    kubo_invariantized_closed_form,
    kubo_system,
    larmor_system,
    ll_deterministic,
    ll_invariantized,
    ll_modified,
    ll_sigma_matrix,
    ll_stochastic,
    model_manifold,
    sphere_manifold,
    REGISTRY,
)
from .lab import (
    AnalysisError,
    DegenerateScalingError,
    DeviationSeries,
    EquilibriumRecord,
    FGrowthResult,
    RunConfig,
    deviation_stats,
    epsilon_scaling_check,
    equilibrium_residuals,
    f_growth_check,
    run,
)

__version__ = "0.1.0"
