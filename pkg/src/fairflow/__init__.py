"""Flow-level bandwidth sharing under weighted alpha-fair allocation."""

__version__ = "0.1.0"

from .allocator import Allocation, AlphaFairAllocator, allocate, kkt_residual, objective
from .ctmc import (
    EventPath,
    FluidLimitReport,
    ScaledPath,
    fluid_limit_experiment,
    rescale,
    simulate,
    transition_rates,
)
from .exceptions import (
    AllocationError,
    ConfigError,
    EventCapExceeded,
    GridCoverageError,
    HorizonTooShort,
    InvariantViolation,
)
from .fluid import FluidTrajectory, drift, feasibility_margin, integrate
from .harness import ExperimentSpec, RunManifest, compare_trajectories, run
from .manifold import (
    InvarianceCheck,
    LiftResult,
    ManifoldPoint,
    WorkloadProjector,
    cone_closed_form_linear,
    cone_contains,
    dissipation_K,
    gap_H,
    invariant_from_q,
    is_invariant,
    lift_delta,
    lower_F,
    lyapunov_F,
    workload,
)
from .network import (
    NetworkModel,
    Topology,
    TrafficParams,
    critical_resources,
    linear_network,
    load_config,
    load_ratios,
    parse_config,
    to_config,
    validate,
)
