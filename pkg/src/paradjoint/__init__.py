"""Parallel-in-time direct-adjoint looping toolkit.

Three schemes accelerate the direct-adjoint loops of PDE-constrained
optimization: a linear scheme (time-partitioned inhomogeneous solves plus
homogeneous exponential chains), an iterative scheme for nonlinear governing
equations, and a hybrid scheme that overlaps a serial direct sweep with the
parallel adjoint on a geometric partition. Closed-form speedup models, an
independent schedule simulator, and equispaced checkpointing round out the
toolkit; the bundled testbeds are the forced 2D advection-diffusion and
viscous Burgers equations on a periodic box.
"""

from .checkpointing import CheckpointRun, CheckpointSchedule, run_checkpointed_loop
from .config import RunConfig, load_config, load_field, parse_config, save_field
from .errors import (
    CollectiveFailure,
    ConfigError,
    IntegrationFailure,
    IterationDivergence,
    PilotTooShort,
    PropagationFailure,
)
from .hybrid import (
    GanttEvent,
    HybridPlan,
    HybridResult,
    estimate_k,
    make_hybrid_plan,
    partition_geometric,
    solve_hybrid,
)
from .linalg import SparseOperator
from .nonlinear import (
    IterationState,
    NonlinearResult,
    iteration_error,
    solve_direct_nonlinear,
)
from .optimization import (
    DescentResult,
    GradientReport,
    LoopResult,
    adjoint_forcing,
    cost,
    descend,
    direct_adjoint_loop,
    gradient_wrt_forcing,
    initial_condition_gradient,
    synthesize_truth,
)
from .paraexp import (
    PiecewiseSolution,
    TimePartition,
    WorkerPlan,
    partition_equidistant,
    recording_density,
    solve_adjoint_linear,
    solve_adjoint_varying,
    solve_direct_linear,
    worker_plans,
)
from .problems import (
    ADVECTION_DIFFUSION,
    BURGERS,
    Grid2D,
    ProblemSpec,
    average_jacobian,
    build_advdiff_operator,
    burgers_adjoint_apply,
    burgers_jacobian,
    burgers_nonlinear_split,
    burgers_rhs,
    eval_forcing,
    sin_product_field,
)
from .scaling import (
    SimEvent,
    SimResult,
    SpeedupPrediction,
    TimingProfile,
    measure_profile,
    predict_hybrid,
    predict_linear,
    predict_nonlinear,
    simulate_checkpointed,
    simulate_schedule,
)
from .serial import solve_adjoint_serial, solve_direct_serial
from .systems import System, build_system
from .timestepping import (
    LejaConfig,
    RKConfig,
    Trajectory,
    leja_points,
    relpm_propagate,
    rk45_integrate,
    spectral_interval,
)
from .workers import MessageRecorder, run_collective

__all__ = [name for name in dir() if not name.startswith("_")]
