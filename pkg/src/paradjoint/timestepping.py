"""Integrator kernels: adaptive Dormand-Prince 5(4) and the real-Leja-points
exponential propagator (ReLPM).

The slow inhomogeneous problems go through :func:`rk45_integrate`; the
source-free propagations go through :func:`relpm_propagate`, which applies
exp(dt·A) to a vector by Newton interpolation of φ(z) = (exp(z)−1)/z at real
Leja points mapped onto a Gershgorin enclosure of the spectrum. Both kernels
can land exactly on caller-requested times so trajectories from different
kernels share nodes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .errors import IntegrationFailure, PropagationFailure
from .linalg import SparseOperator


class Trajectory:
    """Time-stamped states on one interval with linear interpolation."""

    __slots__ = ("nodes", "states", "step_errors")

    def __init__(
        self,
        nodes: np.ndarray,
        states: np.ndarray,
        step_errors: np.ndarray | None = None,
    ):
        nodes = np.asarray(nodes, dtype=np.float64)
        states = np.asarray(states, dtype=np.float64)
        if nodes.ndim != 1 or states.shape[0] != nodes.shape[0]:
            raise ValueError("one state per node required")
        if len(nodes) >= 2 and not np.all(np.diff(nodes) > 0):
            raise ValueError("trajectory nodes must be strictly increasing")
        self.nodes = nodes
        self.states = states
        self.step_errors = step_errors

    @property
    def t_start(self) -> float:
        return float(self.nodes[0])

    @property
    def t_end(self) -> float:
        return float(self.nodes[-1])

    @property
    def initial_state(self) -> np.ndarray:
        return self.states[0]

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def eval(self, t: float) -> np.ndarray:
        return self.eval_many(np.asarray([t]))[0]

    def eval_many(self, ts: np.ndarray) -> np.ndarray:
        ts = np.asarray(ts, dtype=np.float64)
        slack = 1e-9 * max(self.t_end - self.t_start, 1.0)
        if np.any(ts < self.t_start - slack) or np.any(ts > self.t_end + slack):
            raise ValueError("evaluation time outside the trajectory interval")
        ts = np.clip(ts, self.t_start, self.t_end)
        hi = np.searchsorted(self.nodes, ts, side="right")
        hi = np.clip(hi, 1, len(self.nodes) - 1)
        lo = hi - 1
        t0, t1 = self.nodes[lo], self.nodes[hi]
        w = np.where(t1 > t0, (ts - t0) / np.where(t1 > t0, t1 - t0, 1.0), 0.0)
        return (1.0 - w)[:, None] * self.states[lo] + w[:, None] * self.states[hi]

    def reversed_in(self, t_start: float, t_end: float) -> "Trajectory":
        """Remap nodes σ → t_start + t_end − σ and flip the order."""
        new_nodes = (t_start + t_end) - self.nodes[::-1]
        return Trajectory(new_nodes, self.states[::-1].copy())

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class RKConfig:
    """Step-size control settings for the embedded 5(4) pair."""

    rtol: float = 1e-3
    atol: float = 1e-12
    h_init: float | None = None
    h_min: float = 1e-12
    h_max: float = np.inf
    safety: float = 0.9

    def __post_init__(self):
        if self.rtol <= 0:
            raise ValueError("rtol must be positive")
        if self.h_init is not None and not (self.h_min <= self.h_init <= self.h_max):
            raise ValueError("need h_min <= h_init <= h_max")

    def with_rtol(self, rtol: float) -> "RKConfig":
        return RKConfig(rtol, self.atol, self.h_init, self.h_min, self.h_max, self.safety)


# Dormand-Prince 5(4) tableau (DOPRI5); the propagated solution is 5th order,
# the error estimate comes from the embedded 4th-order weights.
_C2, _C3, _C4, _C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
_E1, _E3, _E4, _E5, _E6, _E7 = (
    71 / 57600,
    -71 / 16695,
    71 / 1920,
    -17253 / 339200,
    22 / 525,
    -1 / 40,
)

_MAX_GROW, _MAX_SHRINK = 5.0, 0.2


def rk45_integrate(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    t0: float,
    t1: float,
    cfg: RKConfig,
    waypoints: Sequence[float] | np.ndarray | None = None,
) -> Trajectory:
    """Integrate dy/dt = rhs(t, y) from t0 to t1 with adaptive steps.

    Every accepted state becomes a trajectory node. ``waypoints`` are times
    the stepper must land on exactly (they become nodes as well); t1 is
    always landed on.
    """
    if not t1 > t0:
        raise ValueError("rk45_integrate needs t0 < t1")
    span = t1 - t0
    targets = [t1]
    if waypoints is not None:
        wps = np.asarray(waypoints, dtype=np.float64)
        inside = wps[(wps > t0) & (wps < t1)]
        targets = sorted(set(inside.tolist())) + [t1]

    y = np.array(y0, dtype=np.float64)
    t = t0
    nodes = [t0]
    states = [y.copy()]
    errors: list[float] = []

    h = cfg.h_init if cfg.h_init is not None else min(cfg.h_max, span / 100.0)
    h = max(h, cfg.h_min)
    k1 = rhs(t, y)
    target_idx = 0

    while target_idx < len(targets):
        target = targets[target_idx]
        if h < cfg.h_min:
            raise IntegrationFailure(t)
        h_step = min(h, target - t)
        clipped = h_step < h

        k2 = rhs(t + _C2 * h_step, y + h_step * (_A21 * k1))
        k3 = rhs(t + _C3 * h_step, y + h_step * (_A31 * k1 + _A32 * k2))
        k4 = rhs(t + _C4 * h_step, y + h_step * (_A41 * k1 + _A42 * k2 + _A43 * k3))
        k5 = rhs(
            t + _C5 * h_step,
            y + h_step * (_A51 * k1 + _A52 * k2 + _A53 * k3 + _A54 * k4),
        )
        k6 = rhs(
            t + h_step,
            y + h_step * (_A61 * k1 + _A62 * k2 + _A63 * k3 + _A64 * k4 + _A65 * k5),
        )
        y_new = y + h_step * (_B1 * k1 + _B3 * k3 + _B4 * k4 + _B5 * k5 + _B6 * k6)
        k7 = rhs(t + h_step, y_new)
        err_vec = h_step * (
            _E1 * k1 + _E3 * k3 + _E4 * k4 + _E5 * k5 + _E6 * k6 + _E7 * k7
        )
        scale = cfg.atol + cfg.rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))

        if err <= 1.0:
            t = target if h_step >= target - t else t + h_step
            y = y_new
            k1 = k7  # first-same-as-last
            nodes.append(t)
            states.append(y.copy())
            errors.append(err)
            if t >= target:
                target_idx += 1
        factor = _MAX_GROW if err == 0.0 else cfg.safety * err ** -0.2
        proposal = min(cfg.h_max, h_step * min(_MAX_GROW, max(_MAX_SHRINK, factor)))
        # a step clipped to land on a waypoint must not shrink the cruising
        # step size, otherwise dense waypoint grids stall the controller
        h = max(h, proposal) if (clipped and err <= 1.0) else proposal

    return Trajectory(np.asarray(nodes), np.asarray(states), np.asarray(errors))


# ---------------------------------------------------------------------------
# Real Leja points and the φ-function propagator
# ---------------------------------------------------------------------------

LEJA_REFERENCE_INTERVAL = (-2.0, 2.0)
LEJA_CANDIDATE_COUNT = 4001


@dataclass(frozen=True)
class LejaConfig:
    """ReLPM settings: interpolation tolerance, degree cap, substep budget."""

    tol: float = 1e-3
    max_degree: int = 120
    n_leja: int = 130
    substep_limit: int = 4096

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if not 1 <= self.max_degree < self.n_leja:
            raise ValueError("need 1 <= max_degree < n_leja")
        if self.substep_limit < 1:
            raise ValueError("substep_limit must be at least 1")

    def with_tol(self, tol: float) -> "LejaConfig":
        return LejaConfig(tol, self.max_degree, self.n_leja, self.substep_limit)


@lru_cache(maxsize=8)
def _leja_points_cached(n: int) -> tuple[float, ...]:
    lo, hi = LEJA_REFERENCE_INTERVAL
    candidates = np.linspace(lo, hi, LEJA_CANDIDATE_COUNT)
    points = np.empty(n)
    points[0] = lo
    logprod = np.zeros(LEJA_CANDIDATE_COUNT)
    with np.errstate(divide="ignore"):
        for k in range(1, n):
            logprod += np.log(np.abs(candidates - points[k - 1]))
            points[k] = candidates[int(np.argmax(logprod))]
    return tuple(points.tolist())


def leja_points(n: int) -> np.ndarray:
    """First n fast Leja points on [−2, 2], seeded at −2.

    Each point maximizes the product of distances to its predecessors over a
    uniform candidate grid of ``LEJA_CANDIDATE_COUNT`` points.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    return np.asarray(_leja_points_cached(n))


def spectral_interval(A: SparseOperator) -> tuple[float, float]:
    """Gershgorin enclosure [a, b] of the real parts of A's spectrum."""
    if A.rows != A.cols:
        raise ValueError("spectral interval needs a square operator")
    diag = A.diagonal()
    radii = A.abs_offdiag_row_sums()
    return float(np.min(diag - radii)), float(np.max(diag + radii))


def _phi_divided_differences(
    scaled_nodes: np.ndarray, c: float, gamma: float, taylor_cap: int = 128
) -> np.ndarray:
    """Scaled divided differences of φ at z_j = c + γ·ξ_j.

    Returns d_j = γ^j·φ[z_0, …, z_j], the coefficients of the Newton form in
    the scaled variable. Uses φ[z_0..z_j] = exp[0, z_0, …, z_j] and Opitz'
    identity: the first column of exp(M) for the lower bidiagonal M with
    diagonal (0, z_0, …) and subdiagonal γ holds γ^i·exp[…]. exp(M)e_0 is
    evaluated by repeated application of exp(M/2^s) via Taylor series, with
    s chosen so each application stays well conditioned.
    """
    z = c + gamma * scaled_nodes
    diag = np.concatenate(([0.0], z))
    bound = float(np.max(np.abs(diag)) + abs(gamma))
    s = max(0, int(np.ceil(np.log2(max(bound, 1e-300) / 2.0))))
    reps = 2**s
    d = diag / reps
    g = gamma / reps

    v = np.zeros(len(diag))
    v[0] = 1.0
    shifted = np.empty_like(v)
    for _ in range(reps):
        term = v.copy()
        acc = v.copy()
        for k in range(1, taylor_cap + 1):
            shifted[0] = 0.0
            shifted[1:] = term[:-1]
            term = (d * term + g * shifted) / k
            acc += term
            if np.max(np.abs(term)) <= 1e-18 * max(np.max(np.abs(acc)), 1e-300):
                break
        v = acc
    return v[1:] / gamma


class _LejaInterpolant:
    """Newton-form interpolant of φ on the scaled interval of one operator."""

    def __init__(self, A: SparseOperator, h: float, interval: tuple[float, float], cfg: LejaConfig):
        a, b = interval
        self.csr = A.matrix
        self.h = h
        self.c = h * (a + b) / 2.0
        self.gamma = h * (b - a) / 4.0
        self.cfg = cfg
        if self.gamma > 0.0:
            self.xi = leja_points(cfg.n_leja)
            self.dd = _phi_divided_differences(self.xi, self.c, self.gamma)

    def step(self, y: np.ndarray) -> tuple[np.ndarray, bool]:
        """One exact-flow step: y + h·φ(h·A)(A·y).

        The Newton correction is measured against the scale of the *result*
        (not of the φ-sum): the step suffers cancellation between y and
        h·φ(hA)Ay exactly when the flow decays strongly over h, and in that
        regime the correction must keep shrinking until the result itself is
        resolved. Two consecutive small corrections are required; failure to
        get there within max_degree reports non-convergence so the caller
        can substep.
        """
        norm_y = float(np.linalg.norm(y))
        if norm_y == 0.0:
            return y.copy(), True
        if self.gamma == 0.0:
            # spectrum is the single point c: h·A = c·I exactly
            return float(np.exp(self.c)) * y, True
        w = self.csr @ y
        if float(np.linalg.norm(w)) == 0.0:
            return y.copy(), True
        q = w.copy()
        p = self.dd[0] * q
        hits = 0
        for j in range(1, self.cfg.max_degree + 1):
            q = (self.h * (self.csr @ q) - (self.c + self.gamma * self.xi[j - 1]) * q) / self.gamma
            p += self.dd[j] * q
            correction = self.h * abs(self.dd[j]) * float(np.linalg.norm(q))
            result_scale = float(np.linalg.norm(y + self.h * p))
            if result_scale <= 1e-14 * norm_y:
                # the state has decayed below resolvable scale; call it zero
                return y + self.h * p, True
            if correction <= self.cfg.tol * result_scale:
                hits += 1
                if hits >= 2:
                    return y + self.h * p, True
            else:
                hits = 0
        return y + self.h * p, False


def relpm_propagate(
    A: SparseOperator,
    v: np.ndarray,
    dt: float,
    cfg: LejaConfig,
    record: int | None = None,
    on_node: Callable[[float, np.ndarray], None] | None = None,
) -> np.ndarray | tuple[np.ndarray, np.ndarray]:
    """Apply exp(dt·A) to v by Newton-Leja interpolation of φ.

    With ``record=m`` the propagation lands exactly on the m interior/end
    times ``linspace(0, dt, m+1)[1:]`` (offsets from the start) and returns
    ``(end_state, states)`` with one row per recorded time; ``on_node`` is
    invoked as each is reached. The uniform spacing lets a single
    divided-difference table drive every sub-propagation. When the Newton
    correction does not fall below ``cfg.tol`` within ``cfg.max_degree``
    terms, the step is halved and retried (uniformly, so the table is still
    shared); exceeding ``cfg.substep_limit`` raises :class:`PropagationFailure`.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    interval = spectral_interval(A)
    spread = interval[1] - interval[0]

    if record is None:
        n_gaps, gap_subs = 1, _initial_substeps(dt, interval, cfg)
    else:
        if record < 1:
            raise ValueError("record must be a positive node count")
        n_gaps = int(record)
        gap = dt / n_gaps
        gap_subs = _initial_substeps(gap, interval, cfg)

    gap = dt / n_gaps
    recorded = np.empty((n_gaps, len(v))) if record is not None else None

    y = np.asarray(v, dtype=np.float64).copy()
    interp = _LejaInterpolant(A, gap / gap_subs, interval, cfg)
    g = 0
    while g < n_gaps:
        y_try = y
        ok = True
        for _ in range(gap_subs):
            y_try, ok = interp.step(y_try)
            if not ok:
                break
        if not ok:
            if n_gaps * gap_subs * 2 > cfg.substep_limit:
                raise PropagationFailure(
                    f"needed more than {cfg.substep_limit} substeps over dt={dt:.3g}"
                )
            gap_subs *= 2
            interp = _LejaInterpolant(A, gap / gap_subs, interval, cfg)
            continue
        y = y_try
        if recorded is not None:
            recorded[g] = y
            if on_node is not None:
                on_node((g + 1) * gap, y)
        g += 1

    if recorded is not None:
        return y, recorded
    return y


def _initial_substeps(span: float, interval: tuple[float, float], cfg: LejaConfig) -> int:
    """Substep count from two caps: interpolation degree and per-step decay.

    The degree cap keeps the Newton series near max_degree/2 terms. The decay
    cap bounds how much the slowest mode may decay within one step: the step
    result is y + h·φ(hA)(Ay), a cancellation between O(‖y‖) quantities, so
    its floating-point floor is eps·e^{|b|h} relative to the result. Keeping
    that below a fraction of the interpolation tolerance preserves accuracy
    for strongly dissipative flows.
    """
    a, b = interval
    spread = b - a
    n = 1
    if spread > 0.0:
        gamma_cap = max(cfg.max_degree / 2.0, 1.0)
        n = max(n, int(np.ceil(span * spread / (4.0 * gamma_cap))))
    decay = max(0.0, -b)
    if decay > 0.0:
        max_log_decay = np.log(max(0.05 * cfg.tol / 2.3e-16, np.e))
        n = max(n, int(np.ceil(span * decay / max_log_decay)))
    return n
