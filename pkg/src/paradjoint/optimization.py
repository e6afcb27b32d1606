"""Optimization layer: truth synthesis, tracking cost, gradients, descent.

The control is the spatial forcing-amplitude field f (the forcing is
f·sin(ωt)). The tracking functional J = (1/T)∫‖q − q_true‖² dt drives the
adjoint with source 2(q − q_true); the gradient with respect to f is
(1/T)∫ q†·sin(ωt) dt, and the gradient with respect to the initial state is
q†(0). All adjoint solvers integrate forward in the reflected time variable
internally, so everything here speaks in physical time.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .hybrid import HybridPlan, HybridResult, estimate_k, make_hybrid_plan, solve_hybrid
from .nonlinear import NonlinearResult, solve_direct_nonlinear
from .paraexp import (
    PiecewiseSolution,
    partition_equidistant,
    solve_adjoint_linear,
    solve_adjoint_varying,
    solve_direct_linear,
)
from .serial import solve_adjoint_serial, solve_direct_serial
from .systems import System
from .timestepping import LejaConfig, RKConfig
from .workers import MessageRecorder

LINEAR = "linear"
NONLINEAR = "nonlinear"
HYBRID = "hybrid"
SERIAL = "serial"

ALGORITHMS = (LINEAR, NONLINEAR, HYBRID, SERIAL)

DEFAULT_PROBE_NODES = 200


@dataclass(frozen=True)
class GradientReport:
    """Cost value and forcing gradient from one direct-adjoint loop."""

    J: float
    grad: np.ndarray
    rel_err_vs_oracle: float | None = None


@dataclass
class LoopResult:
    J: float
    grad: np.ndarray
    direct: PiecewiseSolution
    adjoint: PiecewiseSolution
    iterations: int = 1
    seconds: float = 0.0
    error_history: list[float] = field(default_factory=list)


def probe_times(T: float, probe_nodes: int = DEFAULT_PROBE_NODES) -> np.ndarray:
    return np.linspace(0.0, T, probe_nodes)


def synthesize_truth(
    system: System,
    f_true: np.ndarray,
    rk: RKConfig,
    leja: LejaConfig | None = None,
    algorithm: str = SERIAL,
    N: int = 1,
    backend: str = "thread",
) -> PiecewiseSolution:
    """Evolve the system from a zero state under f_true to produce q_true."""
    forced = system.with_forcing_field(np.asarray(f_true, dtype=np.float64))
    q0 = np.zeros(forced.n)
    direct, _ = _solve_direct(forced, q0, algorithm, N, rk, leja or LejaConfig(tol=rk.rtol),
                              backend=backend)
    return direct


def cost(
    q: PiecewiseSolution,
    q_true: PiecewiseSolution,
    T: float,
    probe_nodes: int = DEFAULT_PROBE_NODES,
) -> float:
    """J = (1/T)·∫‖q − q_true‖² dt by trapezoid on a uniform probe grid."""
    ts = probe_times(T, probe_nodes)
    diff = q.eval_many(ts) - q_true.eval_many(ts)
    return float(np.trapezoid(np.sum(diff**2, axis=1), ts) / T)


def adjoint_forcing(
    q: PiecewiseSolution, q_true: PiecewiseSolution
) -> Callable[[float], np.ndarray]:
    """Adjoint source s(t) = 2(q(t) − q_true(t)), in physical time."""
    return lambda t: 2.0 * (q.eval(t) - q_true.eval(t))


def gradient_wrt_forcing(
    adjoint: PiecewiseSolution,
    omega: float,
    T: float,
    probe_nodes: int = DEFAULT_PROBE_NODES,
) -> np.ndarray:
    """∂L/∂f = (1/T)·∫ q†(t)·sin(ωt) dt on the probe grid."""
    ts = probe_times(T, probe_nodes)
    vals = adjoint.eval_many(ts) * np.sin(omega * ts)[:, None]
    return np.trapezoid(vals, ts, axis=0) / T


def initial_condition_gradient(adjoint: PiecewiseSolution) -> np.ndarray:
    """∂L/∂q_0 for cost functionals without explicit q_0 dependence: q†(0)."""
    return adjoint.eval(0.0)


# ---------------------------------------------------------------------------
# One direct-adjoint loop, by algorithm
# ---------------------------------------------------------------------------


def _solve_direct(system, q0, algorithm, N, rk, leja, backend, eps=1e-3,
                  min_iter=2, max_iter=25, plan=None, q_true=None,
                  recorder: MessageRecorder | None = None):
    """Dispatch the direct solve; returns (solution, extras dict)."""
    if algorithm == SERIAL:
        traj = solve_direct_serial(system.full_rhs, q0, system.spec.T, rk)
        return PiecewiseSolution.from_trajectory(traj), {}
    part = plan.partition if (plan is not None and algorithm == HYBRID) \
        else partition_equidistant(system.spec.T, N)
    if algorithm == LINEAR:
        if not system.is_linear:
            raise ValueError("linear algorithm requires a linear testbed")
        sol = solve_direct_linear(system.A, q0, system.forcing, part, rk, leja,
                                  backend=backend, recorder=recorder)
        return sol, {}
    if algorithm == NONLINEAR:
        res: NonlinearResult = solve_direct_nonlinear(
            system.A, system.nonlinear, system.average_advection_jacobian,
            q0, system.forcing, part, rk, leja, eps=eps,
            max_iter=max_iter, min_iter=min_iter, backend=backend, recorder=recorder,
        )
        return res.solution, {"iterations": res.iterations, "history": res.error_history}
    if algorithm == HYBRID:
        # the hybrid scheme's direct sweep is a serial solve
        traj = solve_direct_serial(system.full_rhs, q0, system.spec.T, rk)
        return PiecewiseSolution.from_trajectory(traj), {}
    raise ValueError(f"unknown algorithm {algorithm!r}")


def direct_adjoint_loop(
    system: System,
    f: np.ndarray,
    q_true: PiecewiseSolution,
    algorithm: str,
    N: int = 1,
    rk: RKConfig | None = None,
    leja: LejaConfig | None = None,
    eps: float = 1e-3,
    min_iter: int = 2,
    max_iter: int = 25,
    plan: HybridPlan | None = None,
    backend: str = "thread",
    probe_nodes: int = DEFAULT_PROBE_NODES,
    recorder: MessageRecorder | None = None,
) -> LoopResult:
    """One forward solve plus one adjoint solve, yielding J and ∂L/∂f.

    ``algorithm`` picks the parallel-in-time scheme (or ``serial`` for the
    reference loop); the hybrid scheme needs a ``plan`` built from a measured
    cost ratio.
    """
    rk = rk or RKConfig()
    leja = leja or LejaConfig(tol=rk.rtol)
    forced = system.with_forcing_field(np.asarray(f, dtype=np.float64))
    q0 = np.zeros(forced.n)
    qdag_T = np.zeros(forced.n)
    T = forced.spec.T
    tick = time.perf_counter()
    extras: dict = {}

    if algorithm == HYBRID:
        if plan is None:
            raise ValueError("hybrid loops need a HybridPlan (measure k first)")

        def adj_source(t, q_t):
            return 2.0 * (q_t - q_true.eval(t))

        result: HybridResult = solve_hybrid(
            forced, q0, qdag_T, adj_source, plan, rk, leja,
            backend=backend, recorder=recorder,
        )
        direct, adjoint = result.direct, result.adjoint
    elif algorithm == SERIAL:
        traj = solve_direct_serial(forced.full_rhs, q0, T, rk)
        direct = PiecewiseSolution.from_trajectory(traj)
        adj = solve_adjoint_serial(
            forced.adjoint_apply(direct), qdag_T, adjoint_forcing(direct, q_true), T, rk
        )
        adjoint = PiecewiseSolution.from_trajectory(adj)
    else:
        direct, extras = _solve_direct(
            forced, q0, algorithm, N, rk, leja, backend, eps=eps,
            min_iter=min_iter, max_iter=max_iter, recorder=recorder,
        )
        part = direct.partition
        source = adjoint_forcing(direct, q_true)
        if forced.is_linear:
            adjoint = solve_adjoint_linear(
                forced.A, qdag_T, source, part, rk, leja,
                backend=backend, recorder=recorder,
            )
        else:
            frozen = forced.frozen_adjoint_ops(direct, part)
            adjoint = solve_adjoint_varying(
                forced.adjoint_apply(direct), lambda p: frozen[p],
                qdag_T, source, part, rk, leja,
                backend=backend, recorder=recorder,
            )

    J = cost(direct, q_true, T, probe_nodes)
    grad = gradient_wrt_forcing(adjoint, forced.spec.omega, T, probe_nodes)
    return LoopResult(
        J, grad, direct, adjoint,
        iterations=extras.get("iterations", 1),
        seconds=time.perf_counter() - tick,
        error_history=extras.get("history", []),
    )


@dataclass
class DescentResult:
    f_final: np.ndarray
    J_history: list[float]
    grad_norms: list[float]
    step_seconds: list[float]


def descend(
    system: System,
    f_init: np.ndarray,
    q_true: PiecewiseSolution,
    steps: int,
    lr: float,
    algorithm: str = SERIAL,
    N: int = 1,
    rk: RKConfig | None = None,
    leja: LejaConfig | None = None,
    eps: float = 1e-3,
    plan: HybridPlan | None = None,
    backend: str = "thread",
    probe_nodes: int = DEFAULT_PROBE_NODES,
) -> DescentResult:
    """Fixed-step gradient descent on the forcing amplitude field."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    rk = rk or RKConfig()
    leja = leja or LejaConfig(tol=rk.rtol)
    if algorithm == HYBRID and plan is None:
        k = estimate_k(system.with_forcing_field(np.asarray(f_init, float)), 0.05, rk)
        plan = make_hybrid_plan(system.spec.T, N, k, h_min=rk.h_min)

    f = np.array(f_init, dtype=np.float64)
    J_history: list[float] = []
    grad_norms: list[float] = []
    step_seconds: list[float] = []
    for _ in range(steps):
        loop = direct_adjoint_loop(
            system, f, q_true, algorithm, N=N, rk=rk, leja=leja, eps=eps,
            plan=plan, backend=backend, probe_nodes=probe_nodes,
        )
        if not np.isfinite(loop.J):
            raise FloatingPointError("cost became non-finite during descent")
        J_history.append(loop.J)
        grad_norms.append(float(np.linalg.norm(loop.grad)))
        step_seconds.append(loop.seconds)
        f -= lr * loop.grad
    return DescentResult(f, J_history, grad_norms, step_seconds)
