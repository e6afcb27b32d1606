"""Runtime bundles tying a testbed spec to the operator callbacks solvers use."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .linalg import SparseOperator
from .paraexp import PiecewiseSolution, TimePartition
from .problems import (
    ADVECTION_DIFFUSION,
    BURGERS,
    Grid2D,
    ProblemSpec,
    average_jacobian,
    build_advdiff_operator,
    burgers_adjoint_apply,
    burgers_advection,
    burgers_nonlinear_split,
    make_forcing,
)
from .timestepping import Trajectory


@dataclass(frozen=True)
class System:
    """Operators and callbacks for one testbed instance.

    ``A`` is the constant linear part (the full operator for the linear
    testbed, the diffusion blocks for Burgers); ``nonlinear`` is None for
    linear problems.
    """

    grid: Grid2D
    spec: ProblemSpec
    A: SparseOperator
    nonlinear: Callable[[np.ndarray], np.ndarray] | None
    forcing: Callable[[float], np.ndarray]

    @property
    def n(self) -> int:
        return self.spec.state_size(self.grid)

    @property
    def is_linear(self) -> bool:
        return self.nonlinear is None

    def full_rhs(self, t: float, q: np.ndarray) -> np.ndarray:
        out = self.A.apply(q) + self.forcing(t)
        if self.nonlinear is not None:
            out += self.nonlinear(q)
        return out

    def with_forcing_field(self, f_spatial: np.ndarray) -> "System":
        spec = ProblemSpec(
            self.spec.kind, self.spec.a, self.spec.D, self.spec.omega, self.spec.T, f_spatial
        )
        return System(self.grid, spec, self.A, self.nonlinear, make_forcing(spec))

    # -- adjoint machinery ----------------------------------------------------

    def adjoint_apply(
        self, direct: PiecewiseSolution | Trajectory | None
    ) -> Callable[[float, np.ndarray], np.ndarray]:
        """Transposed linearization along the direct solution: (t, y) ↦ Aᵀ(t)y."""
        if self.is_linear:
            AT = self.A.transpose()
            return lambda _t, y: AT.apply(y)
        if direct is None:
            raise ValueError("nonlinear adjoint needs the direct solution")
        grid, spec = self.grid, self.spec
        return lambda t, y: burgers_adjoint_apply(grid, spec, direct.eval(t), y)

    def frozen_adjoint_op(
        self, direct_piece: Trajectory | None
    ) -> SparseOperator:
        """Interval-frozen transposed operator for homogeneous adjoint chains.

        For nonlinear problems the linearization is averaged over the interval
        (trapezoid on the stored nodes) before transposing.
        """
        if self.is_linear:
            return self.A.transpose()
        if direct_piece is None:
            raise ValueError("nonlinear adjoint needs the direct solution")
        avg = average_jacobian(direct_piece, self.grid, self.spec)
        return (self.A + avg).transpose()

    def frozen_adjoint_ops(
        self, direct: PiecewiseSolution | None, part: TimePartition
    ) -> list[SparseOperator]:
        if self.is_linear:
            AT = self.A.transpose()
            return [AT] * part.N
        return [self.frozen_adjoint_op(direct.pieces[p]) for p in range(part.N)]

    def average_advection_jacobian(self, traj: Trajectory) -> SparseOperator | None:
        """Interval average of ∂N/∂q for the iterate, None for linear problems."""
        if self.is_linear:
            return None
        return average_jacobian(traj, self.grid, self.spec)


def build_system(grid: Grid2D, spec: ProblemSpec) -> System:
    if spec.kind == ADVECTION_DIFFUSION:
        if len(spec.f_spatial) != grid.npoints:
            raise ValueError("forcing field length must equal the grid size")
        A = build_advdiff_operator(grid, spec.a, spec.D)
        return System(grid, spec, A, None, make_forcing(spec))
    if spec.kind == BURGERS:
        if len(spec.f_spatial) != 2 * grid.npoints:
            raise ValueError("Burgers forcing must stack two fields")
        A, _ = burgers_nonlinear_split(grid, spec)
        return System(grid, spec, A, lambda q: burgers_advection(grid, q), make_forcing(spec))
    raise ValueError(f"unknown problem kind {spec.kind!r}")
