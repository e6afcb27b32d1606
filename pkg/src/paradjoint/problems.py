"""Periodic 2D testbed problems: forced advection-diffusion and viscous Burgers.

Both live on [0, 2π]² with second-order central differences and periodic
wrap. States are flat vectors indexed ``i + nx*j``; the Burgers state stacks
the U field before the V field. The harmonic forcing is ``f_spatial·sin(ωt)``
in every case.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .linalg import SparseOperator

TWO_PI = 2.0 * np.pi

ADVECTION_DIFFUSION = "advection_diffusion"
BURGERS = "burgers"


@dataclass(frozen=True)
class Grid2D:
    """Uniform periodic grid on [0,2π]×[0,2π] with nx·ny points."""

    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValueError("grid needs nx >= 3 and ny >= 3 for the periodic stencil")

    @property
    def hx(self) -> float:
        return TWO_PI / self.nx

    @property
    def hy(self) -> float:
        return TWO_PI / self.ny

    @property
    def npoints(self) -> int:
        return self.nx * self.ny

    def flat_index(self, i: int, j: int) -> int:
        return i % self.nx + self.nx * (j % self.ny)

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat x and y coordinate arrays matching the state layout."""
        x1 = np.arange(self.nx) * self.hx
        y1 = np.arange(self.ny) * self.hy
        xg, yg = np.meshgrid(x1, y1, indexing="xy")
        return xg.ravel(), yg.ravel()


@dataclass(frozen=True)
class ProblemSpec:
    """Testbed description: equation kind, coefficients, horizon, forcing shape."""

    kind: str
    a: float
    D: float
    omega: float
    T: float
    f_spatial: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.kind not in (ADVECTION_DIFFUSION, BURGERS):
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.D <= 0:
            raise ValueError("diffusion coefficient D must be positive")
        if self.T <= 0:
            raise ValueError("final time T must be positive")

    @property
    def nfields(self) -> int:
        return 2 if self.kind == BURGERS else 1

    def state_size(self, grid: Grid2D) -> int:
        return self.nfields * grid.npoints


def sin_product_field(grid: Grid2D, nfields: int = 1) -> np.ndarray:
    """The sin(x)·sin(y) spatial shape, repeated per field."""
    x, y = grid.coordinates()
    one = np.sin(x) * np.sin(y)
    return np.tile(one, nfields)


# ---------------------------------------------------------------------------
# Stencil operators
# ---------------------------------------------------------------------------


def _periodic_shift(n: int, offset: int) -> sp.csr_matrix:
    """Permutation matrix P with (P u)_i = u_{i+offset mod n}."""
    idx = (np.arange(n) + offset) % n
    return sp.csr_matrix(
        (np.ones(n), idx, np.arange(n + 1)), shape=(n, n)
    )


def _d1_periodic(n: int, h: float) -> sp.csr_matrix:
    """Second-order central first derivative on a periodic line."""
    return ((_periodic_shift(n, 1) - _periodic_shift(n, -1)) / (2.0 * h)).tocsr()


def _d2_periodic(n: int, h: float) -> sp.csr_matrix:
    """Second-order central second derivative on a periodic line."""
    eye = sp.identity(n, format="csr")
    return (
        (_periodic_shift(n, 1) - 2.0 * eye + _periodic_shift(n, -1)) / (h * h)
    ).tocsr()


class GridOperators:
    """First/second derivative matrices for a grid, in the flat layout."""

    def __init__(self, grid: Grid2D):
        self.grid = grid
        ix = sp.identity(grid.nx, format="csr")
        iy = sp.identity(grid.ny, format="csr")
        # x varies fastest in the flat index, so x-operators sit right of kron
        self.dx = sp.kron(iy, _d1_periodic(grid.nx, grid.hx), format="csr")
        self.dy = sp.kron(_d1_periodic(grid.ny, grid.hy), ix, format="csr")
        self.lap = (
            sp.kron(iy, _d2_periodic(grid.nx, grid.hx), format="csr")
            + sp.kron(_d2_periodic(grid.ny, grid.hy), ix, format="csr")
        ).tocsr()
        for m in (self.dx, self.dy, self.lap):
            m.sort_indices()


_OPERATOR_CACHE: dict[tuple[int, int], GridOperators] = {}


def grid_operators(grid: Grid2D) -> GridOperators:
    key = (grid.nx, grid.ny)
    ops = _OPERATOR_CACHE.get(key)
    if ops is None:
        ops = GridOperators(grid)
        _OPERATOR_CACHE[key] = ops
    return ops


def build_advdiff_operator(grid: Grid2D, a: float, D: float) -> SparseOperator:
    """Assemble A = −a·∂x − a·∂y + D·∇² with periodic wrap (5-point stencil)."""
    ops = grid_operators(grid)
    return SparseOperator((-a) * ops.dx + (-a) * ops.dy + D * ops.lap)


def eval_forcing(spec: ProblemSpec, t: float) -> np.ndarray:
    """Harmonic forcing f_spatial·sin(ωt) at time t."""
    return spec.f_spatial * np.sin(spec.omega * t)


def make_forcing(spec: ProblemSpec) -> Callable[[float], np.ndarray]:
    f, omega = spec.f_spatial, spec.omega
    return lambda t: f * np.sin(omega * t)


# ---------------------------------------------------------------------------
# Viscous Burgers
# ---------------------------------------------------------------------------


def _split_uv(grid: Grid2D, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = grid.npoints
    if q.shape[-1] != 2 * n:
        raise ValueError(f"Burgers state must have length {2 * n}, got {q.shape[-1]}")
    return q[:n], q[n:]


def burgers_rhs(grid: Grid2D, spec: ProblemSpec, q: np.ndarray, t: float) -> np.ndarray:
    """Right-hand side of the forced viscous Burgers system at state q, time t."""
    U, V = _split_uv(grid, q)
    ops = grid_operators(grid)
    dUx, dUy = ops.dx @ U, ops.dy @ U
    dVx, dVy = ops.dx @ V, ops.dy @ V
    rhs_u = -U * dUx - V * dUy + spec.D * (ops.lap @ U)
    rhs_v = -U * dVx - V * dVy + spec.D * (ops.lap @ V)
    return np.concatenate([rhs_u, rhs_v]) + eval_forcing(spec, t)


def burgers_advection(grid: Grid2D, q: np.ndarray) -> np.ndarray:
    """The genuinely nonlinear part: −U∂x(·) − V∂y(·) applied to (U, V)."""
    U, V = _split_uv(grid, q)
    ops = grid_operators(grid)
    adv_u = -U * (ops.dx @ U) - V * (ops.dy @ U)
    adv_v = -U * (ops.dx @ V) - V * (ops.dy @ V)
    return np.concatenate([adv_u, adv_v])


def burgers_nonlinear_split(
    grid: Grid2D, spec: ProblemSpec
) -> tuple[SparseOperator, Callable[[np.ndarray], np.ndarray]]:
    """Split the Burgers operator into constant diffusion A and advection N(q).

    A·q + N(q) + f·sin(ωt) reproduces :func:`burgers_rhs` exactly; A stays
    constant so one spectral interval serves every homogeneous solve.
    """
    if spec.kind != BURGERS:
        raise ValueError("nonlinear split is defined for the Burgers testbed")
    ops = grid_operators(grid)
    diff = (spec.D * ops.lap).tocsr()
    A = SparseOperator(sp.block_diag((diff, diff), format="csr"))
    return A, lambda q: burgers_advection(grid, q)


class _AdvectionJacobianPattern:
    """Fixed sparsity pattern of ∂N/∂q with index maps for direct assembly.

    The 2×2 block pattern never depends on the state: diagonal blocks carry
    the dx/dy stencils plus the diagonal, off-diagonal blocks carry only the
    diagonal. Entries are scattered into one flat data array through
    precomputed position maps, so averaging trajectories is pure vector
    arithmetic on identical patterns.
    """

    def __init__(self, grid: Grid2D):
        ops = grid_operators(grid)
        n = grid.npoints
        eye = sp.csr_matrix(
            (np.ones(n), np.arange(n), np.arange(n + 1)), shape=(n, n)
        )
        block = ((np.abs(ops.dx) + np.abs(ops.dy) + eye) != 0).astype(np.float64).tocsr()
        block.sort_indices()
        pattern = sp.bmat([[block, eye], [eye, block]], format="csr")
        pattern.sort_indices()
        self.indptr = pattern.indptr.copy()
        self.indices = pattern.indices.copy()
        self.shape = pattern.shape
        self.nnz = pattern.nnz

        full_keys = (
            np.repeat(np.arange(2 * n, dtype=np.int64), np.diff(self.indptr)) * (2 * n)
            + self.indices
        )

        def keys_of(m: sp.csr_matrix, row_off: int, col_off: int) -> np.ndarray:
            rows = np.repeat(np.arange(m.shape[0], dtype=np.int64), np.diff(m.indptr))
            return (rows + row_off) * (2 * n) + (m.indices + col_off)

        def locate(keys: np.ndarray) -> np.ndarray:
            pos = np.searchsorted(full_keys, keys)
            assert np.array_equal(full_keys[pos], keys)
            return pos

        diag_keys = np.arange(n, dtype=np.int64)
        self.map_dx_11 = locate(keys_of(ops.dx, 0, 0))
        self.map_dy_11 = locate(keys_of(ops.dy, 0, 0))
        self.map_diag_11 = locate(diag_keys * (2 * n) + diag_keys)
        self.map_diag_12 = locate(diag_keys * (2 * n) + diag_keys + n)
        self.map_diag_21 = locate((diag_keys + n) * (2 * n) + diag_keys)
        self.map_dx_22 = locate(keys_of(ops.dx, n, n))
        self.map_dy_22 = locate(keys_of(ops.dy, n, n))
        self.map_diag_22 = locate((diag_keys + n) * (2 * n) + diag_keys + n)
        self.dx_rows = np.diff(ops.dx.indptr)
        self.dy_rows = np.diff(ops.dy.indptr)
        self.dx_data = ops.dx.data
        self.dy_data = ops.dy.data

    def data_for(self, grid: Grid2D, q: np.ndarray) -> np.ndarray:
        U, V = _split_uv(grid, q)
        ops = grid_operators(grid)
        dUx, dUy = ops.dx @ U, ops.dy @ U
        dVx, dVy = ops.dx @ V, ops.dy @ V
        # the maps are pairwise disjoint for the 5-point stencils, so plain
        # fancy-index adds are safe
        data = np.zeros(self.nnz)
        data[self.map_dx_11] += -np.repeat(U, self.dx_rows) * self.dx_data
        data[self.map_dy_11] += -np.repeat(V, self.dy_rows) * self.dy_data
        data[self.map_diag_11] += -dUx
        data[self.map_diag_12] = -dUy
        data[self.map_diag_21] = -dVx
        data[self.map_dx_22] += -np.repeat(U, self.dx_rows) * self.dx_data
        data[self.map_dy_22] += -np.repeat(V, self.dy_rows) * self.dy_data
        data[self.map_diag_22] += -dVy
        return data

    def assemble(self, data: np.ndarray) -> SparseOperator:
        return SparseOperator(
            sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=self.shape)
        )


_JAC_PATTERN_CACHE: dict[tuple[int, int], _AdvectionJacobianPattern] = {}


def _advection_pattern(grid: Grid2D) -> _AdvectionJacobianPattern:
    key = (grid.nx, grid.ny)
    pattern = _JAC_PATTERN_CACHE.get(key)
    if pattern is None:
        pattern = _AdvectionJacobianPattern(grid)
        _JAC_PATTERN_CACHE[key] = pattern
    return pattern


def burgers_advection_jacobian(grid: Grid2D, q: np.ndarray) -> SparseOperator:
    """∂N/∂q of the advection terms, frozen at q (2×2 block structure)."""
    pattern = _advection_pattern(grid)
    return pattern.assemble(pattern.data_for(grid, q))


def burgers_jacobian(grid: Grid2D, spec: ProblemSpec, q: np.ndarray) -> SparseOperator:
    """Full linearization about q: advection coupling plus diffusion blocks."""
    ops = grid_operators(grid)
    diff = (spec.D * ops.lap).tocsr()
    adv = burgers_advection_jacobian(grid, q)
    return SparseOperator(adv.matrix + sp.block_diag((diff, diff), format="csr"))


def burgers_adjoint_apply(
    grid: Grid2D, spec: ProblemSpec, q: np.ndarray, y: np.ndarray
) -> np.ndarray:
    """Apply Jᵀ(q)·y matrix-free, J the full Burgers linearization at q.

    Uses the periodic central-difference identities Dxᵀ = −Dx, Dyᵀ = −Dy and
    Lapᵀ = Lap, so only the fixed stencil matrices are ever applied.
    """
    U, V = _split_uv(grid, q)
    a, b = _split_uv(grid, y)
    ops = grid_operators(grid)
    dUx, dUy = ops.dx @ U, ops.dy @ U
    dVx, dVy = ops.dx @ V, ops.dy @ V
    out_a = (
        ops.dx @ (U * a)
        + ops.dy @ (V * a)
        - dUx * a
        - dVx * b
        + spec.D * (ops.lap @ a)
    )
    out_b = (
        ops.dx @ (U * b)
        + ops.dy @ (V * b)
        - dUy * a
        - dVy * b
        + spec.D * (ops.lap @ b)
    )
    return np.concatenate([out_a, out_b])


def average_jacobian(traj, grid: Grid2D, spec: ProblemSpec) -> SparseOperator:
    """Time average of ∂N/∂q over a trajectory, by trapezoid on its nodes.

    Entries are averaged on the fixed advection-stencil pattern; the pattern
    itself never changes between calls on the same grid.
    """
    nodes = traj.nodes
    if len(nodes) < 2:
        raise ValueError("need at least 2 trajectory samples to average")
    span = nodes[-1] - nodes[0]
    weights = np.zeros(len(nodes))
    gaps = np.diff(nodes)
    weights[:-1] += 0.5 * gaps
    weights[1:] += 0.5 * gaps
    weights /= span

    pattern = _advection_pattern(grid)
    acc = np.zeros(pattern.nnz)
    for w, state in zip(weights, traj.states):
        acc += w * pattern.data_for(grid, state)
    return pattern.assemble(acc)
