"""Performance model: timing profiles, closed-form speedups, schedule simulator.

The closed forms and the event-driven simulator are independent derivations
of the same cost model (exact per-time-unit kernel costs, zero communication
cost); agreement between them validates both. Wall-clock measurement is kept
separate and only feeds the profile.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import PilotTooShort
from .hybrid import _timed_median, partition_geometric
from .paraexp import TimePartition, interval_grid, partition_equidistant
from .serial import solve_adjoint_serial, solve_direct_serial
from .systems import System
from .timestepping import LejaConfig, RKConfig, relpm_propagate, rk45_integrate

LINEAR = "linear"
NONLINEAR = "nonlinear"
HYBRID = "hybrid"


@dataclass(frozen=True)
class TimingProfile:
    """Measured seconds per simulated time unit for each kernel."""

    tau_I: float          # direct inhomogeneous
    tau_H: float          # direct homogeneous (exponential)
    tau_I_adj: float      # adjoint inhomogeneous
    tau_H_adj: float      # adjoint homogeneous
    tau_D_serial: float   # direct equation solved in series

    def __post_init__(self):
        for name in ("tau_I", "tau_H", "tau_I_adj", "tau_H_adj", "tau_D_serial"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class SpeedupPrediction:
    N: int
    s: float
    s_max: float
    N_min: int | None = None
    K: int = 1
    achievable: bool = True


def predict_linear(profile: TimingProfile, N: int) -> SpeedupPrediction:
    """1/s = 1/N + ((N−1)/N)·(τ_H+τ_H†)/(τ_I+τ_I†)."""
    if N < 1:
        raise ValueError("N must be at least 1")
    rho = (profile.tau_H + profile.tau_H_adj) / (profile.tau_I + profile.tau_I_adj)
    s_inv = 1.0 / N + (N - 1) / N * rho
    return SpeedupPrediction(N, 1.0 / s_inv, 1.0 / rho)


def predict_nonlinear(profile: TimingProfile, N: int, K: int) -> SpeedupPrediction:
    """1/s = (1/N)·(Kτ_I+τ_I†)/(τ_D^S+τ_I†) + ((N−1)/N)·(Kτ_H+τ_H†)/(τ_D^S+τ_I†).

    The minimum worker count for s > 1 follows from rearranging s > 1:
    N·(τ_D^S+τ_I† − Kτ_H − τ_H†) > K(τ_I−τ_H) + τ_I† − τ_H†. When the
    bracket is non-positive no worker count helps (``achievable`` False).
    """
    if N < 1 or K < 1:
        raise ValueError("need N >= 1 and K >= 1")
    serial = profile.tau_D_serial + profile.tau_I_adj
    s_inv = (1.0 / N) * (K * profile.tau_I + profile.tau_I_adj) / serial + (
        (N - 1) / N
    ) * (K * profile.tau_H + profile.tau_H_adj) / serial
    s_max = serial / (K * profile.tau_H + profile.tau_H_adj)
    denom = serial - K * profile.tau_H - profile.tau_H_adj
    if denom <= 0:
        return SpeedupPrediction(N, 1.0 / s_inv, s_max, None, K, achievable=False)
    threshold = (
        K * (profile.tau_I - profile.tau_H) + profile.tau_I_adj - profile.tau_H_adj
    ) / denom
    n_min = max(2, int(np.floor(threshold)) + 1)
    return SpeedupPrediction(N, 1.0 / s_inv, s_max, n_min, K)


def predict_hybrid(
    profile: TimingProfile,
    partition: TimePartition,
    has_final_condition: bool = False,
) -> SpeedupPrediction:
    """1/s = (T·τ_D + (T_N−T_{N−1})·τ_I† + T_H·τ_H†) / (T·(τ_D+τ_I†)).

    The hybrid direct sweep is the serial direct solve, so its per-unit cost
    is τ_D^S; T_H is T with an adjoint final-time condition, T_{N−1} without.
    """
    b = partition.boundaries
    T = partition.T
    T_H = T if has_final_condition else float(b[-2])
    serial = T * (profile.tau_D_serial + profile.tau_I_adj)
    loop = (
        T * profile.tau_D_serial
        + float(b[-1] - b[-2]) * profile.tau_I_adj
        + T_H * profile.tau_H_adj
    )
    s_max = (profile.tau_D_serial + profile.tau_I_adj) / (
        profile.tau_D_serial + profile.tau_H_adj
    )
    return SpeedupPrediction(partition.N, serial / loop, s_max)


# ---------------------------------------------------------------------------
# Event-driven schedule simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimEvent:
    worker: int
    phase: str
    start: float
    end: float


@dataclass
class SimResult:
    makespan: float
    serial_time: float
    events: list[SimEvent] = field(default_factory=list)
    adjoint_inhom_finish: list[float] = field(default_factory=list)

    @property
    def speedup(self) -> float:
        return self.serial_time / self.makespan


def _simulate_direct_phase(widths, tau_I, tau_H, start_times, events, sweep=""):
    """One Paraexp direct sweep; returns per-worker completion times."""
    N = len(widths)
    inhom_done = [start_times[p] + widths[p] * tau_I for p in range(N)]
    for p in range(N):
        events.append(SimEvent(p, f"direct_inhom{sweep}", start_times[p], inhom_done[p]))
    free = list(inhom_done)
    chain_done = [[0.0] * p for p in range(N)]
    for p in range(1, N):
        for j in range(p):
            dep = inhom_done[p - 1] if j == 0 else chain_done[p - 1][j - 1]
            begin = max(free[p], dep)
            chain_done[p][j] = begin + widths[p] * tau_H
            events.append(SimEvent(p, f"direct_hom{sweep}", begin, chain_done[p][j]))
            free[p] = chain_done[p][j]
    return free


def _simulate_adjoint_phase(widths, tau_I_adj, tau_H_adj, start_times, events):
    N = len(widths)
    inhom_done = [start_times[p] + widths[p] * tau_I_adj for p in range(N)]
    for p in range(N):
        events.append(SimEvent(p, "adjoint_inhom", start_times[p], inhom_done[p]))
    free = list(inhom_done)
    chain_done = [[0.0] * (N - 1 - p) for p in range(N)]
    for p in range(N - 2, -1, -1):
        for j in range(N - 1 - p):
            dep = inhom_done[p + 1] if j == 0 else chain_done[p + 1][j - 1]
            begin = max(free[p], dep)
            chain_done[p][j] = begin + widths[p] * tau_H_adj
            events.append(SimEvent(p, "adjoint_hom", begin, chain_done[p][j]))
            free[p] = chain_done[p][j]
    return free, inhom_done


def simulate_schedule(
    algorithm: str,
    profile: TimingProfile,
    partition: TimePartition,
    K: int = 1,
    has_final_condition: bool = False,
) -> SimResult:
    """Event-driven worker-timeline simulation under exact per-unit costs.

    Dependencies: homogeneous chains wait on the neighbor state that seeds
    them; the nonlinear sweeps are separated by the global error reduction;
    the hybrid direct sweep is sequential across workers with the adjoint
    inhomogeneous solves overlapped, and homogeneous spans start only after
    both the scatter and their seed are available. Communication itself is
    free, matching the cost model of the closed forms.
    """
    widths = partition.widths().tolist()
    T = partition.T
    N = partition.N
    events: list[SimEvent] = []

    if algorithm == LINEAR:
        serial = T * (profile.tau_I + profile.tau_I_adj)
        free = _simulate_direct_phase(widths, profile.tau_I, profile.tau_H,
                                      [0.0] * N, events)
        free, inhom_done = _simulate_adjoint_phase(
            widths, profile.tau_I_adj, profile.tau_H_adj, free, events
        )
        return SimResult(max(free), serial, events, inhom_done)

    if algorithm == NONLINEAR:
        serial = T * (profile.tau_D_serial + profile.tau_I_adj)
        barrier = 0.0
        for sweep in range(K):
            free = _simulate_direct_phase(
                widths, profile.tau_I, profile.tau_H, [barrier] * N, events,
                sweep=f"_{sweep}",
            )
            barrier = max(free)  # global error reduction
        free, inhom_done = _simulate_adjoint_phase(
            widths, profile.tau_I_adj, profile.tau_H_adj, [barrier] * N, events
        )
        return SimResult(max(free), serial, events, inhom_done)

    if algorithm == HYBRID:
        serial = T * (profile.tau_D_serial + profile.tau_I_adj)
        direct_done = np.cumsum([w * profile.tau_D_serial for w in widths]).tolist()
        starts = [0.0] + direct_done[:-1]
        for p in range(N):
            events.append(SimEvent(p, "direct", starts[p], direct_done[p]))
        adj_done = [direct_done[p] + widths[p] * profile.tau_I_adj for p in range(N)]
        for p in range(N):
            events.append(SimEvent(p, "adjoint_inhom", direct_done[p], adj_done[p]))
        scatter_at = direct_done[-1]
        completions = list(adj_done)
        for j in range(N - 1):  # homogeneous span [T_{j+1}, 0] on worker j
            begin = max(adj_done[j], adj_done[j + 1], scatter_at)
            done = begin + float(partition.boundaries[j + 1]) * profile.tau_H_adj
            events.append(SimEvent(j, "adjoint_hom", begin, done))
            completions.append(done)
        if has_final_condition:
            begin = max(adj_done[N - 1], scatter_at)
            done = begin + T * profile.tau_H_adj
            events.append(SimEvent(N - 1, "adjoint_hom_final", begin, done))
            completions.append(done)
        return SimResult(max(completions), serial, events, adj_done)

    raise ValueError(f"unknown algorithm {algorithm!r}")


def simulate_checkpointed(
    algorithm: str,
    profile: TimingProfile,
    T: float,
    N: int,
    checkpoints: int,
    K: int = 1,
    k_ratio: float | None = None,
) -> SimResult:
    """Makespan of the checkpointed loop: rough sweep + per-segment loops.

    Segments run strictly in sequence; inside each segment the chosen
    algorithm's schedule applies to the segment horizon. Every segment but
    the last enters the backward pass with a non-zero carried adjoint state,
    which adds the final-condition homogeneous problem.
    """
    segments = checkpoints + 1
    T_seg = T / segments

    def seg_partition():
        if algorithm == HYBRID:
            if k_ratio is None:
                raise ValueError("hybrid checkpointed schedule needs the cost ratio k")
            return partition_geometric(T_seg, N, k_ratio)
        return partition_equidistant(T_seg, N)

    part = seg_partition()
    # rough phase: direct-only up to the last checkpoint
    if algorithm == HYBRID:
        rough = (T - T_seg) * profile.tau_D_serial
    else:
        sweeps = K if algorithm == NONLINEAR else 1
        events: list[SimEvent] = []
        barrier = 0.0
        for sweep in range(sweeps):
            free = _simulate_direct_phase(
                part.widths().tolist(), profile.tau_I, profile.tau_H,
                [barrier] * N, events, sweep=f"_{sweep}",
            )
            barrier = max(free)
        rough = (segments - 1) * barrier

    total = rough
    for seg in range(segments - 1, -1, -1):
        res = simulate_schedule(
            algorithm, profile, part, K=K, has_final_condition=seg != segments - 1
        )
        total += res.makespan
    serial = T * (
        (profile.tau_I if algorithm == LINEAR else profile.tau_D_serial)
        + profile.tau_I_adj
    )
    return SimResult(total, serial, [])


# ---------------------------------------------------------------------------
# Profile measurement
# ---------------------------------------------------------------------------


def measure_profile(
    system: System,
    pilot_fraction: float,
    rk: RKConfig,
    leja: LejaConfig,
    repeats: int = 3,
) -> TimingProfile:
    """Wall-clock seconds per simulated time unit for each kernel.

    Short pilot solves over pilot_fraction·T, median of ``repeats``; very
    fast kernels are batched internally so the timer resolution does not
    dominate. Raises :class:`PilotTooShort` when the pilot span cannot
    resolve even a few steps.
    """
    if not 0.0 < pilot_fraction <= 0.1:
        raise ValueError("pilot_fraction must lie in (0, 0.1]")
    span = pilot_fraction * system.spec.T
    if span < 100.0 * rk.h_min:
        raise PilotTooShort(
            "pilot span too short to time reliably; widen pilot_fraction"
        )
    q0 = np.zeros(system.n)
    grid = interval_grid(0.0, span, rk.rtol)
    waypoints = grid[1:-1]

    def run_serial_direct():
        return solve_direct_serial(system.full_rhs, q0, span, rk)

    pilot_traj = run_serial_direct()
    if len(pilot_traj) < 3:
        raise PilotTooShort("pilot resolved fewer than 2 steps")

    # inhomogeneous kernel: absorbed-source linear problem, waypoint grid
    if system.is_linear:
        op = system.A
        csr = op.matrix

        def inhom_rhs(t, y):
            return csr @ y + system.forcing(t)

    else:
        jac = system.average_advection_jacobian(pilot_traj)
        op = system.A + jac
        csr = op.matrix
        nonlin = system.nonlinear

        def inhom_rhs(t, y):
            qp = pilot_traj.eval(t)
            return csr @ y + (nonlin(qp) + system.forcing(t) - jac.apply(qp))

    def run_inhom():
        return rk45_integrate(inhom_rhs, q0, 0.0, span, rk, waypoints=waypoints)

    # homogeneous kernel: exponential propagation of the pilot's end state
    hom_state = pilot_traj.final_state
    gaps = len(grid) - 1

    def run_hom():
        return relpm_propagate(op, hom_state, span, leja, record=gaps)

    apply_T = system.adjoint_apply(pilot_traj)

    def adj_forcing(t):
        return 2.0 * pilot_traj.eval(t)

    def run_adj_inhom():
        return solve_adjoint_serial(apply_T, np.zeros(system.n), adj_forcing, span, rk)

    op_T = system.frozen_adjoint_op(pilot_traj)

    def run_adj_hom():
        return relpm_propagate(op_T, hom_state, span, leja, record=gaps)

    for fn in (run_inhom, run_hom, run_adj_inhom, run_adj_hom):
        fn()  # warmup / JIT caches (Leja tables, transposes)

    return TimingProfile(
        tau_I=_timed_median(run_inhom, repeats) / span,
        tau_H=_timed_median(run_hom, repeats) / span,
        tau_I_adj=_timed_median(run_adj_inhom, repeats) / span,
        tau_H_adj=_timed_median(run_adj_hom, repeats) / span,
        tau_D_serial=_timed_median(run_serial_direct, repeats) / span,
    )
