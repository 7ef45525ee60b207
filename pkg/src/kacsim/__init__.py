"""Event-driven simulator and experiment harness for the 1D Kac collision
model: three equivalent jump dynamics, their parallel coupling, and the
mean-field limit, with Monte Carlo verification of the contraction rates."""

from .coupling import (
    AggregatedCosts,
    CoupledRun,
    CouplingConfig,
    aggregate_replicas,
    cost2_energy,
    cost4,
    fourth_moment_center,
    lambda_theory,
    run_coupled,
    sphere_fourth_moment,
    verify_corollary,
    verify_eigenfunction_decay,
    verify_theorem1,
)
from .dynamics import (
    AxisPoint,
    Custom,
    EnergyState,
    Formulation,
    TwoLevel,
    UniformSphere,
    VelocityState,
    apply_event,
    collide_energy,
    collide_radial,
    collide_rotation,
    evolve,
    init_state,
    init_vector,
)
from .events import (
    CollisionEvent,
    EndOfHorizon,
    EventStream,
    StreamConfig,
    events_checksum,
    pair_collision_rate,
    rng_for,
    total_system_rate,
)
from .experiments import ExperimentConfig, ExperimentReport, parse_config, run_experiment
from .meanfield import (
    EnsembleState,
    GaussianEnsemble,
    MeanfieldConfig,
    NonlinearEvent,
    TwoLevelEnsemble,
    apply_nonlinear,
    empirical_quantile,
    nonlinear_collision,
    run_nonlinear_coupled,
)
from .stats import (
    RateFit,
    TimeSeries,
    angle_average_check,
    fit_exponential_rate,
    ks_statistic,
    ks_threshold,
    mc_mean_stderr,
    wasserstein_1d,
)

__version__ = "0.1.0"
