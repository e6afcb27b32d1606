"""Hybrid algorithm: serial direct sweep overlapped with parallel adjoint.

The direct equation is integrated in sequence across workers; as soon as a
worker finishes its chunk it starts its adjoint inhomogeneous solve (zero
terminal data, final-time condition NOT absorbed), overlapping with the
remaining direct sweep. The partition is geometric so that all adjoint
inhomogeneous solves finish simultaneously. Afterwards the direct solution
is scattered to every worker and the adjoint homogeneous problems are solved
over their full spans [T_{j+1}, 0]; a non-zero adjoint terminal condition
adds one more homogeneous problem over [T, 0].
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import PilotTooShort
from .paraexp import (
    GEOMETRIC,
    PiecewiseSolution,
    TimePartition,
    interval_grid,
    states_at,
)
from .serial import solve_adjoint_serial, solve_direct_serial
from .systems import System
from .timestepping import LejaConfig, RKConfig, Trajectory, relpm_propagate, rk45_integrate
from .workers import MessageRecorder, run_collective


def partition_geometric(T: float, N: int, k: float) -> TimePartition:
    """Boundaries T_n = T·(1−r^n)/(1−r^N), r = k/(k+1).

    Later intervals shrink by the factor r so that the serial direct sweep
    plus each worker's adjoint inhomogeneous solve finish at one common time.
    """
    if N < 1:
        raise ValueError("need at least one interval")
    if T <= 0 or k <= 0:
        raise ValueError("need positive T and k")
    r = k / (k + 1.0)
    n = np.arange(N + 1, dtype=np.float64)
    boundaries = T * (1.0 - r**n) / (1.0 - r**N)
    boundaries[0] = 0.0
    boundaries[-1] = T
    if np.any(np.diff(boundaries) <= 0):
        raise ValueError(
            f"geometric partition degenerates for k={k:.3g}, N={N}: "
            "the last widths underflow; reduce N"
        )
    return TimePartition(boundaries, kind=GEOMETRIC, ratio=k)


@dataclass(frozen=True)
class HybridPlan:
    """Geometric partition plus the measured cost ratio that produced it.

    The overlap schedule is implied: worker p's direct chunk waits on worker
    p−1's direct chunk; its adjoint inhomogeneous solve starts right after
    its own direct chunk; homogeneous solves start after the global scatter.
    """

    partition: TimePartition
    k: float

    def __post_init__(self):
        widths = self.partition.widths()
        r = self.k / (self.k + 1.0)
        if len(widths) > 1:
            expected = widths[:-1] * r
            if np.max(np.abs(widths[1:] - expected)) > 1e-10 * np.max(widths):
                raise ValueError("partition widths do not follow the k/(k+1) ratio")

    @property
    def N(self) -> int:
        return self.partition.N


def make_hybrid_plan(T: float, N: int, k: float, h_min: float = 0.0) -> HybridPlan:
    """Build the geometric plan; reject partitions finer than the stepper."""
    part = partition_geometric(T, N, k)
    if h_min > 0.0 and float(np.min(part.widths())) < 2.0 * h_min:
        raise ValueError(
            "smallest partition width is below twice the minimum step size; "
            "reduce N or the cost ratio"
        )
    return HybridPlan(part, k)


# ---------------------------------------------------------------------------
# Pilot measurement of the cost ratio k
# ---------------------------------------------------------------------------


def _pilot_times(system: System, span: float, rk: RKConfig, repeats: int) -> tuple[float, float]:
    """Median wall seconds for a direct and an adjoint pilot over [0, span]."""
    q0 = np.zeros(system.n)

    def run_direct():
        return solve_direct_serial(system.full_rhs, q0, span, rk)

    if span < 100.0 * rk.h_min:
        # structurally unresolvable: the span cannot hold enough steps for a
        # per-time-unit rate. (Pilots that are merely fast are batched below.)
        raise PilotTooShort(
            "pilot span too short to time reliably; widen pilot_fraction"
        )
    dtraj = run_direct()  # warmup; also supplies the adjoint pilot's data
    if len(dtraj) < 3:
        raise PilotTooShort(
            "pilot resolved fewer than 2 steps; widen pilot_fraction"
        )
    apply_T = system.adjoint_apply(dtraj)

    def adj_forcing(t):
        return 2.0 * dtraj.eval(t)

    def run_adjoint():
        return solve_adjoint_serial(apply_T, np.zeros(system.n), adj_forcing, span, rk)

    run_adjoint()  # warmup
    return _timed_median(run_direct, repeats), _timed_median(run_adjoint, repeats)


def _timed_median(fn: Callable[[], object], repeats: int) -> float:
    """Median wall time of fn; fast calls are batched for timer resolution."""
    once = time.perf_counter()
    fn()
    once = time.perf_counter() - once
    inner = max(1, int(np.ceil(0.01 / max(once, 1e-9))))
    samples = []
    for _ in range(repeats):
        tick = time.perf_counter()
        for _ in range(inner):
            fn()
        samples.append((time.perf_counter() - tick) / inner)
    return float(np.median(samples))


def estimate_k(
    system: System,
    pilot_fraction: float,
    rk: RKConfig,
    repeats: int = 3,
) -> float:
    """Measure k = τ_I†/τ_I from short direct and adjoint pilot solves."""
    if not 0.0 < pilot_fraction <= 0.1:
        raise ValueError("pilot_fraction must lie in (0, 0.1]")
    span = pilot_fraction * system.spec.T
    t_dir, t_adj = _pilot_times(system, span, rk, repeats)
    return t_adj / t_dir


# ---------------------------------------------------------------------------
# The hybrid solve
# ---------------------------------------------------------------------------


@dataclass
class GanttEvent:
    worker: int
    phase: str
    wall_start: float
    wall_end: float


@dataclass
class HybridResult:
    direct: PiecewiseSolution
    adjoint: PiecewiseSolution
    events: list[GanttEvent] = field(default_factory=list)


def _hybrid_worker(p, links, system, q0, qdag_T, adj_source, part, rk, leja):
    n_workers = part.N
    ta, tb = part.boundaries[p], part.boundaries[p + 1]
    grid = interval_grid(ta, tb, rk.rtol)
    events: list[GanttEvent] = []
    has_final = float(np.linalg.norm(qdag_T)) > 0.0

    # serial direct sweep: wait for the upstream state, integrate, pass on
    start_state = links.recv_prev() if p > 0 else q0
    tick = time.perf_counter()
    dtraj = rk45_integrate(system.full_rhs, start_state, ta, tb, rk, waypoints=grid[1:-1])
    events.append(GanttEvent(p, "direct", tick, time.perf_counter()))
    if p < n_workers - 1:
        links.send_next(dtraj.final_state, tag="direct", sim_time=tb)

    # adjoint inhomogeneous, overlapped with downstream direct chunks;
    # terminal condition NOT absorbed (it is not known yet)
    apply_T_local = system.adjoint_apply(dtraj)
    reflect = ta + tb

    def rhs(sigma, y):
        t = reflect - sigma
        return apply_T_local(t, y) + adj_source(t, dtraj.eval(t))

    tick = time.perf_counter()
    atraj_sigma = rk45_integrate(rhs, np.zeros(system.n), ta, tb, rk, waypoints=grid[1:-1])
    events.append(GanttEvent(p, "adjoint_inhom", tick, time.perf_counter()))

    # one-time scatter: the full direct solution plus each worker's adjoint
    # inhomogeneous terminal state (the chain initial conditions)
    gathered = links.allgather((dtraj, atraj_sigma.final_state))
    all_direct = [g[0] for g in gathered]

    # homogeneous problems over full spans, against the scattered solution
    def propagate_span(ic: np.ndarray, top_interval: int) -> dict[int, Trajectory]:
        segments: dict[int, Trajectory] = {}
        state = ic
        for m in range(top_interval, -1, -1):
            ma, mb = part.boundaries[m], part.boundaries[m + 1]
            op_T = system.frozen_adjoint_op(all_direct[m])
            sigma_nodes = interval_grid(ma, mb, rk.rtol)
            end, recorded = relpm_propagate(
                op_T, state, mb - ma, leja, record=len(sigma_nodes) - 1
            )
            states = np.vstack([state[None, :], recorded])
            segments[m] = Trajectory(sigma_nodes, states).reversed_in(ma, mb)
            state = end
        return segments

    chain_segments: dict[int, Trajectory] = {}
    final_segments: dict[int, Trajectory] = {}
    tick = time.perf_counter()
    if p < n_workers - 1:
        chain_segments = propagate_span(gathered[p + 1][1], top_interval=p)
    if p == n_workers - 1 and has_final:
        final_segments = propagate_span(qdag_T, top_interval=n_workers - 1)
    events.append(GanttEvent(p, "adjoint_hom", tick, time.perf_counter()))

    aphys = atraj_sigma.reversed_in(ta, tb)
    return dtraj, aphys, chain_segments, final_segments, events


def solve_hybrid(
    system: System,
    q0: np.ndarray,
    qdag_T: np.ndarray,
    adj_source: Callable[[float, np.ndarray], np.ndarray],
    plan: HybridPlan,
    rk: RKConfig,
    leja: LejaConfig,
    backend: str = "thread",
    recorder: MessageRecorder | None = None,
) -> HybridResult:
    """Serial direct sweep with overlapped parallel adjoint.

    ``adj_source(t, q_t)`` supplies the adjoint source s(t) given the local
    direct state q(t) (for the tracking functional: 2(q_t − q_true(t))), so
    each worker can start its adjoint solve from purely local data.
    """
    part = plan.partition

    def worker(p, links):
        return _hybrid_worker(p, links, system, q0, qdag_T, adj_source, part, rk, leja)

    results = run_collective(part.N, worker, backend=backend, recorder=recorder)

    direct_pieces = [r[0] for r in results]
    inhom_pieces = [r[1] for r in results]
    chain_by_owner = {p: r[2] for p, r in enumerate(results)}
    final_segments = results[-1][3]
    events = [e for r in results for e in r[4]]

    N = part.N
    adjoint_pieces: list[Trajectory] = []
    for m in range(N):
        ma, mb = part.boundaries[m], part.boundaries[m + 1]
        contributions = [chain_by_owner[j][m] for j in range(m, N - 1) if m in chain_by_owner[j]]
        if m in final_segments:
            contributions.append(final_segments[m])
        if not contributions:
            adjoint_pieces.append(inhom_pieces[m])
            continue
        nodes = interval_grid(ma, mb, rk.rtol)
        total = states_at(inhom_pieces[m], nodes)
        for piece in contributions:
            total = total + states_at(piece, nodes)
        adjoint_pieces.append(Trajectory(nodes, total))

    return HybridResult(
        PiecewiseSolution(part, direct_pieces),
        PiecewiseSolution(part, adjoint_pieces),
        events,
    )
