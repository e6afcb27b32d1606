"""Serial reference solvers: plain adaptive integration over the full horizon.

These are the oracles the parallel algorithms are checked against, and the
kernels timed for the serial-loop baseline.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .paraexp import PiecewiseSolution
from .timestepping import RKConfig, Trajectory, rk45_integrate


def solve_direct_serial(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    q0: np.ndarray,
    T: float,
    rk: RKConfig,
    t0: float = 0.0,
) -> Trajectory:
    """Integrate the governing equation forward over [t0, T]."""
    return rk45_integrate(rhs, q0, t0, T, rk)


def solve_adjoint_serial(
    apply_T: Callable[[float, np.ndarray], np.ndarray],
    qdag_T: np.ndarray,
    adj_forcing: Callable[[float], np.ndarray],
    T: float,
    rk: RKConfig,
    t0: float = 0.0,
) -> Trajectory:
    """Integrate dq†/dt = −Aᵀ(t)q† − s(t) backward from q†(T) = qdag_T.

    Runs forward in σ = T − t (plus the interval offset) and returns the
    trajectory in physical time.
    """
    reflect = t0 + T

    def rhs(sigma, y):
        t = reflect - sigma
        return apply_T(t, y) + adj_forcing(t)

    traj = rk45_integrate(rhs, qdag_T, t0, T, rk)
    return traj.reversed_in(t0, T)


def as_piecewise(traj: Trajectory) -> PiecewiseSolution:
    return PiecewiseSolution.from_trajectory(traj)
