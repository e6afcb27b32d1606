"""Time-partitioned parallel solution of linear direct and adjoint equations.

Each worker owns one interval of the partition. It solves the inhomogeneous
problem there (zero initial data, source absorbed) with the adaptive stepper,
then runs its share of homogeneous exponential propagations, receiving start
states from one neighbor and forwarding end states to the other. The full
solution on an interval is the superposition of the local pieces.

Workers and their homogeneous chains synchronize on a shared per-interval
recording grid: the adaptive stepper lands on those times exactly (waypoints)
and the exponential propagator records on them exactly, so the superposition
never interpolates. The grid is uniform, which also lets one divided-
difference table drive every homogeneous step on the interval.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .linalg import SparseOperator
from .timestepping import LejaConfig, RKConfig, Trajectory, relpm_propagate, rk45_integrate
from .workers import MessageRecorder, run_collective

EQUIDISTANT = "equidistant"
GEOMETRIC = "geometric"


@dataclass(frozen=True)
class TimePartition:
    """Ordered boundaries 0 = T_0 < T_1 < … < T_N = T."""

    boundaries: np.ndarray
    kind: str = EQUIDISTANT
    ratio: float | None = None  # cost ratio k for geometric partitions

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=np.float64)
        object.__setattr__(self, "boundaries", b)
        if b.ndim != 1 or len(b) < 2:
            raise ValueError("partition needs at least two boundaries")
        if b[0] != 0.0:
            raise ValueError("partition must start at 0")
        if not np.all(np.diff(b) > 0):
            raise ValueError("partition boundaries must be strictly increasing")
        if self.kind == EQUIDISTANT:
            widths = np.diff(b)
            if np.max(np.abs(widths - widths[0])) > 1e-12 * b[-1]:
                raise ValueError("equidistant partition has unequal widths")

    @property
    def N(self) -> int:
        return len(self.boundaries) - 1

    @property
    def T(self) -> float:
        return float(self.boundaries[-1])

    def width(self, p: int) -> float:
        return float(self.boundaries[p + 1] - self.boundaries[p])

    def widths(self) -> np.ndarray:
        return np.diff(self.boundaries)

    def interval_of(self, t: float) -> int:
        idx = int(np.searchsorted(self.boundaries, t, side="right")) - 1
        return min(max(idx, 0), self.N - 1)


def partition_equidistant(T: float, N: int) -> TimePartition:
    """Split [0, T] into N equal intervals."""
    if N < 1:
        raise ValueError("need at least one interval")
    if T <= 0:
        raise ValueError("T must be positive")
    return TimePartition(T * np.arange(N + 1) / N, kind=EQUIDISTANT)


@dataclass(frozen=True)
class WorkerPlan:
    """Sub-problem counts for one worker of an N-interval partition."""

    p: int
    t_start: float
    t_end: float
    direct_homogeneous: int
    adjoint_homogeneous: int


def worker_plans(part: TimePartition) -> list[WorkerPlan]:
    """Worker p solves p direct and N−1−p adjoint homogeneous problems."""
    return [
        WorkerPlan(p, part.boundaries[p], part.boundaries[p + 1], p, part.N - 1 - p)
        for p in range(part.N)
    ]


class PiecewiseSolution:
    """One trajectory per partition interval, evaluable in global time."""

    def __init__(self, partition: TimePartition, pieces: Sequence[Trajectory]):
        if len(pieces) != partition.N:
            raise ValueError("need exactly one trajectory per interval")
        self.partition = partition
        self.pieces = list(pieces)

    @classmethod
    def from_trajectory(cls, traj: Trajectory) -> "PiecewiseSolution":
        part = TimePartition(np.array([traj.t_start, traj.t_end]))
        return cls(part, [traj])

    @property
    def t_end(self) -> float:
        return self.partition.T

    @property
    def initial_state(self) -> np.ndarray:
        return self.pieces[0].initial_state

    @property
    def final_state(self) -> np.ndarray:
        return self.pieces[-1].final_state

    def eval(self, t: float) -> np.ndarray:
        return self.pieces[self.partition.interval_of(t)].eval(t)

    def eval_many(self, ts: np.ndarray) -> np.ndarray:
        ts = np.asarray(ts, dtype=np.float64)
        out = np.empty((len(ts), self.pieces[0].states.shape[1]))
        idx = np.clip(
            np.searchsorted(self.partition.boundaries, ts, side="right") - 1,
            0,
            self.partition.N - 1,
        )
        for p in range(self.partition.N):
            mask = idx == p
            if np.any(mask):
                out[mask] = self.pieces[p].eval_many(ts[mask])
        return out

    def node_count(self) -> int:
        return sum(len(piece) for piece in self.pieces)


# ---------------------------------------------------------------------------
# Shared recording grid
# ---------------------------------------------------------------------------


def recording_density(rtol: float) -> int:
    """Recorded nodes per simulated time unit, tied to the tolerance.

    Linear interpolation between recorded nodes contributes O(gap²) error;
    gap ~ sqrt(rtol) keeps that at the tolerance level.
    """
    return int(min(2048, max(8, np.ceil(0.5 / np.sqrt(rtol)))))


def recording_gaps(span: float, rtol: float) -> int:
    return max(4, int(np.ceil(span * recording_density(rtol))))


def interval_grid(t_start: float, t_end: float, rtol: float) -> np.ndarray:
    return np.linspace(t_start, t_end, recording_gaps(t_end - t_start, rtol) + 1)


def states_at(traj: Trajectory, times: np.ndarray) -> np.ndarray:
    """Extract states at times that are (up to rounding) trajectory nodes."""
    idx = np.clip(np.searchsorted(traj.nodes, times), 0, len(traj.nodes) - 1)
    left = np.clip(idx - 1, 0, len(traj.nodes) - 1)
    idx = np.where(
        np.abs(traj.nodes[left] - times) < np.abs(traj.nodes[idx] - times), left, idx
    )
    span = max(traj.t_end - traj.t_start, 1.0)
    if np.any(np.abs(traj.nodes[idx] - times) > 1e-9 * span):
        raise ValueError("requested times are not trajectory nodes")
    return traj.states[idx]


# ---------------------------------------------------------------------------
# Direct solve
# ---------------------------------------------------------------------------


def _direct_worker(p, links, A, hom_op, q0, source, part, rk, leja):
    n_workers = part.N
    ta, tb = part.boundaries[p], part.boundaries[p + 1]
    grid = interval_grid(ta, tb, rk.rtol)
    csr = A.matrix

    def rhs(t, y):
        return csr @ y + source(t)

    zero = np.zeros_like(q0)
    waypoints = grid[1:-1]
    traj = rk45_integrate(rhs, zero, ta, tb, rk, waypoints=waypoints)
    if p < n_workers - 1:
        links.send_next(traj.final_state, tag="direct_inhom", sim_time=tb)

    if p == 0:
        nodes = traj.nodes
        total = q0[None, :] + traj.states
    else:
        nodes = grid
        total = q0[None, :] + states_at(traj, grid)
        chain_op = hom_op(p)
        for j in range(p):
            start = links.recv_prev()
            end, recorded = relpm_propagate(
                chain_op, start, tb - ta, leja, record=len(grid) - 1
            )
            if p < n_workers - 1:
                links.send_next(end, tag=f"direct_hom_{j}", sim_time=tb)
            total[0] += start
            total[1:] += recorded
    return Trajectory(nodes, total)


def solve_direct_linear(
    A: SparseOperator,
    q0: np.ndarray,
    forcing: Callable[[float], np.ndarray],
    part: TimePartition,
    rk: RKConfig,
    leja: LejaConfig,
    backend: str = "thread",
    recorder: MessageRecorder | None = None,
) -> PiecewiseSolution:
    """Parallel-in-time solve of dq/dt = A·q + f(t), q(0) = q0.

    The initial condition is absorbed into the source (A·q0 + f), each
    worker integrates the zero-initial-data problem on its interval, and
    homogeneous exponential chains carry boundary states forward.
    """
    if A.rows != len(q0):
        raise ValueError("initial state length does not match the operator")
    Aq0 = A.apply(q0)

    def source(t):
        return Aq0 + forcing(t)

    def worker(p, links):
        return _direct_worker(p, links, A, lambda _p: A, q0, source, part, rk, leja)

    pieces = run_collective(part.N, worker, backend=backend, recorder=recorder)
    return PiecewiseSolution(part, pieces)


# ---------------------------------------------------------------------------
# Adjoint solve
# ---------------------------------------------------------------------------


def _adjoint_worker(p, links, apply_T, hom_op_T, qdag_T, source, part, rk, leja):
    """Backward adjoint on one interval, run forward in σ = T_p + T_{p+1} − t.

    Solves dq†/dt = −Aᵀ(t)·q† − s(t) backward from q†(T) = qdag_T; the final
    condition is absorbed, so the local unknown is q̃† = q† − qdag_T with
    dq̃†/dσ = Aᵀ(q̃† + qdag_T) + s(t(σ)) and zero initial data.
    """
    n_workers = part.N
    ta, tb = part.boundaries[p], part.boundaries[p + 1]
    grid = interval_grid(ta, tb, rk.rtol)
    reflect = ta + tb

    def rhs(sigma, y):
        t = reflect - sigma
        return apply_T(t, y + qdag_T) + source(t)

    zero = np.zeros_like(qdag_T)
    waypoints = grid[1:-1]
    traj = rk45_integrate(rhs, zero, ta, tb, rk, waypoints=waypoints)
    if p > 0:
        links.send_prev(traj.final_state, tag="adjoint_inhom", sim_time=ta)

    n_chains = n_workers - 1 - p
    if n_chains == 0:
        nodes_sigma = traj.nodes
        total = qdag_T[None, :] + traj.states
    else:
        nodes_sigma = grid
        total = qdag_T[None, :] + states_at(traj, grid)
        chain_op = hom_op_T(p)
        for j in range(n_chains):
            start = links.recv_next()
            end, recorded = relpm_propagate(
                chain_op, start, tb - ta, leja, record=len(grid) - 1
            )
            if p > 0:
                links.send_prev(end, tag=f"adjoint_hom_{j}", sim_time=ta)
            total[0] += start
            total[1:] += recorded
    return Trajectory(nodes_sigma, total).reversed_in(ta, tb)


def solve_adjoint_linear(
    A: SparseOperator,
    qdag_T: np.ndarray,
    adj_forcing: Callable[[float], np.ndarray],
    part: TimePartition,
    rk: RKConfig,
    leja: LejaConfig,
    backend: str = "thread",
    recorder: MessageRecorder | None = None,
) -> PiecewiseSolution:
    """Parallel-in-time solve of the adjoint dq†/dt = −Aᵀq† − s(t) backward.

    ``adj_forcing`` supplies s(t) in physical time (for the tracking cost
    functional this is 2(q − q_true)(t)); the terminal condition qdag_T is
    absorbed into the per-interval sources. Workers mirror the direct solve:
    chains flow from late intervals to early ones.
    """
    AT = A.transpose()

    def apply_T(_t, y):
        return AT.apply(y)

    def worker(p, links):
        return _adjoint_worker(
            p, links, apply_T, lambda _p: AT, qdag_T, adj_forcing, part, rk, leja
        )

    pieces = run_collective(part.N, worker, backend=backend, recorder=recorder)
    return PiecewiseSolution(part, pieces)


def solve_adjoint_varying(
    apply_T: Callable[[float, np.ndarray], np.ndarray],
    frozen_T: Callable[[int], SparseOperator],
    qdag_T: np.ndarray,
    adj_forcing: Callable[[float], np.ndarray],
    part: TimePartition,
    rk: RKConfig,
    leja: LejaConfig,
    backend: str = "thread",
    recorder: MessageRecorder | None = None,
) -> PiecewiseSolution:
    """Adjoint solve with a time-varying operator (linearized problems).

    ``apply_T(t, y)`` applies the transposed linearization at time t; the
    homogeneous chains use the frozen per-interval operator ``frozen_T(p)``
    (already transposed), the interval average of the linearization.
    """

    def worker(p, links):
        return _adjoint_worker(
            p, links, apply_T, frozen_T, qdag_T, adj_forcing, part, rk, leja
        )

    pieces = run_collective(part.N, worker, backend=backend, recorder=recorder)
    return PiecewiseSolution(part, pieces)
