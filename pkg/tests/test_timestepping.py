"""Adaptive Runge-Kutta kernel, Leja points, and the exponential propagator."""

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

from paradjoint import (
    Grid2D,
    LejaConfig,
    RKConfig,
    SparseOperator,
    build_advdiff_operator,
    leja_points,
    relpm_propagate,
    rk45_integrate,
    spectral_interval,
)
from paradjoint.errors import IntegrationFailure, PropagationFailure
from paradjoint.timestepping import LEJA_CANDIDATE_COUNT, Trajectory


def random_stiff_operator(n, lo, rng, couple=4.0):
    """Sparse matrix whose Gershgorin discs stay within [lo, 0]."""
    d = rng.uniform(lo * 0.95, lo * 0.02, n)
    m = sp.lil_matrix((n, n))
    m.setdiag(d)
    for i in range(n):
        j = int(rng.integers(0, n))
        if j != i:
            budget = min(abs(d[i]) * 0.04, couple)
            m[i, j] += rng.uniform(-budget, budget)
    return SparseOperator(m.tocsr())


class TestTrajectory:
    def test_nodes_strictly_increasing(self):
        with pytest.raises(ValueError):
            Trajectory(np.array([0.0, 0.0, 1.0]), np.zeros((3, 2)))

    def test_eval_exact_at_nodes_and_linear_between(self):
        nodes = np.array([0.0, 1.0, 3.0])
        states = np.array([[0.0], [2.0], [6.0]])
        traj = Trajectory(nodes, states)
        assert traj.eval(1.0)[0] == 2.0
        assert traj.eval(2.0)[0] == pytest.approx(4.0)
        with pytest.raises(ValueError):
            traj.eval(3.5)


class TestRK45:
    def test_zero_rhs_constant(self):
        traj = rk45_integrate(lambda t, y: 0.0 * y, np.array([2.5, -1.0]),
                              0.0, 3.0, RKConfig())
        assert np.all(traj.states == traj.states[0])

    def test_exponential_decay(self):
        traj = rk45_integrate(lambda t, y: -y, np.array([1.0]), 0.0, 1.0,
                              RKConfig(rtol=1e-8))
        assert traj.final_state[0] == pytest.approx(np.exp(-1.0), rel=1e-7)

    def test_cosine_antiderivative(self):
        traj = rk45_integrate(lambda t, y: np.array([np.cos(t)]),
                              np.array([0.0]), 0.0, np.pi, RKConfig(rtol=1e-8))
        assert abs(traj.final_state[0]) < 1e-7

    def test_accepted_error_estimates_below_one(self):
        traj = rk45_integrate(lambda t, y: -10 * y + np.sin(5 * t),
                              np.array([1.0, 0.3]), 0.0, 2.0,
                              RKConfig(rtol=1e-4))
        assert traj.step_errors is not None and np.all(traj.step_errors <= 1.0)

    def test_waypoints_are_nodes(self):
        wps = np.array([0.3, 0.7, 1.1])
        traj = rk45_integrate(lambda t, y: -y, np.array([1.0]), 0.0, 2.0,
                              RKConfig(), waypoints=wps)
        for w in wps:
            assert np.min(np.abs(traj.nodes - w)) == 0.0

    def test_dense_waypoints_do_not_stall(self):
        wps = np.linspace(0.0, 1.0, 400)[1:-1]
        traj = rk45_integrate(lambda t, y: -y, np.array([1.0]), 0.0, 1.0,
                              RKConfig(), waypoints=wps)
        assert traj.final_state[0] == pytest.approx(np.exp(-1.0), rel=1e-4)

    def test_step_underflow_raises_with_time(self):
        def nasty(t, y):
            return np.array([1e12 * np.sign(np.sin(1e8 * t))])

        with pytest.raises(IntegrationFailure) as err:
            rk45_integrate(nasty, np.array([0.0]), 0.0, 1.0,
                           RKConfig(rtol=1e-10, h_min=1e-8))
        assert 0.0 <= err.value.t <= 1.0

    def test_requires_forward_interval(self):
        with pytest.raises(ValueError):
            rk45_integrate(lambda t, y: y, np.array([1.0]), 1.0, 0.0, RKConfig())


class TestLejaPoints:
    def test_seed_point(self):
        assert leja_points(1).tolist() == [-2.0]

    def test_second_point_far_end(self):
        assert leja_points(2).tolist() == [-2.0, 2.0]

    def test_within_interval_and_distinct(self):
        pts = leja_points(40)
        assert np.all(pts >= -2.0) and np.all(pts <= 2.0)
        assert len(np.unique(pts)) == 40

    def test_brute_force_oracle(self):
        # independently maximize the distance product over the same grid
        pts = leja_points(12)
        candidates = np.linspace(-2.0, 2.0, LEJA_CANDIDATE_COUNT)
        chosen = [-2.0]
        for _ in range(11):
            best, best_val = None, -np.inf
            for c in candidates:
                val = np.prod([abs(c - z) for z in chosen])
                if val > best_val:
                    best, best_val = c, val
            chosen.append(best)
        assert pts == pytest.approx(np.array(chosen), abs=1e-12)


class TestSpectralInterval:
    def test_diagonal(self):
        A = SparseOperator(sp.diags([-1.0, -3.0]).tocsr())
        assert spectral_interval(A) == (-3.0, -1.0)

    def test_zero_matrix(self):
        assert spectral_interval(SparseOperator.zeros(4)) == (0.0, 0.0)

    def test_contains_dense_eigenvalues(self):
        grid = Grid2D(16, 16)
        A = build_advdiff_operator(grid, a=1.0, D=1.0)
        a, b = spectral_interval(A)
        eig = np.linalg.eigvals(A.to_dense())
        assert np.all(eig.real >= a - 1e-9)
        assert np.all(eig.real <= b + 1e-9)


class TestRelpm:
    def test_zero_operator_is_identity(self):
        v = np.array([1.0, -2.0, 0.5, 3.0])
        out = relpm_propagate(SparseOperator.zeros(4), v, 2.0, LejaConfig())
        assert np.array_equal(out, v)

    def test_diagonal_oracle(self):
        A = SparseOperator(sp.diags([-1.0, -2.0]).tocsr())
        out = relpm_propagate(A, np.array([1.0, 1.0]), 1.0, LejaConfig(tol=1e-8))
        assert out == pytest.approx([np.exp(-1), np.exp(-2)], rel=1e-8)

    def test_semigroup(self):
        rng = np.random.default_rng(1)
        A = random_stiff_operator(40, -30.0, rng)
        v = rng.standard_normal(40)
        cfg = LejaConfig(tol=1e-8)
        two = relpm_propagate(A, relpm_propagate(A, v, 0.7, cfg), 0.7, cfg)
        one = relpm_propagate(A, v, 1.4, cfg)
        assert np.linalg.norm(two - one) <= 10 * cfg.tol * np.linalg.norm(one)

    def test_linearity(self):
        rng = np.random.default_rng(2)
        A = random_stiff_operator(40, -30.0, rng)
        u = rng.standard_normal(40)
        v = rng.standard_normal(40)
        cfg = LejaConfig(tol=1e-8)
        combined = relpm_propagate(A, 2.0 * u - 3.0 * v, 1.0, cfg)
        split = 2.0 * relpm_propagate(A, u, 1.0, cfg) - 3.0 * relpm_propagate(
            A, v, 1.0, cfg
        )
        scale = np.linalg.norm(combined)
        assert np.linalg.norm(combined - split) <= 10 * cfg.tol * scale

    def test_matches_dense_expm_on_random_stiff_systems(self):
        # spectra within [-50, 0], n = 50, error <= 10·tol relative
        rng = np.random.default_rng(3)
        cfg = LejaConfig(tol=1e-6)
        for _ in range(20):
            A = random_stiff_operator(50, -50.0, rng)
            v = rng.standard_normal(50)
            dt = float(rng.uniform(0.2, 2.5))
            ref = sla.expm(dt * A.to_dense()) @ v
            out = relpm_propagate(A, v, dt, cfg)
            assert np.linalg.norm(out - ref) <= 10 * cfg.tol * np.linalg.norm(ref)

    def test_record_path_hits_uniform_nodes(self):
        A = SparseOperator(sp.diags([-1.0, -2.0]).tocsr())
        end, rec = relpm_propagate(A, np.array([1.0, 1.0]), 1.0,
                                   LejaConfig(tol=1e-10), record=4)
        for k, row in enumerate(rec, start=1):
            assert row == pytest.approx(np.exp(np.array([-1.0, -2.0]) * k / 4),
                                        rel=1e-9)
        assert np.array_equal(end, rec[-1])

    def test_record_hook_called_in_order(self):
        A = SparseOperator(sp.diags([-1.0]).tocsr())
        seen = []
        relpm_propagate(A, np.array([1.0]), 1.0, LejaConfig(), record=5,
                        on_node=lambda t, y: seen.append(t))
        assert seen == pytest.approx(np.linspace(0.2, 1.0, 5))

    def test_substep_limit_exceeded(self):
        rng = np.random.default_rng(4)
        A = random_stiff_operator(30, -5000.0, rng, couple=200.0)
        with pytest.raises(PropagationFailure):
            relpm_propagate(A, rng.standard_normal(30), 50.0,
                            LejaConfig(tol=1e-12, max_degree=5, n_leja=8,
                                       substep_limit=4))

    def test_homogeneous_speed_premium_for_stiff_diffusion(self):
        # on the D=10 operator the exponential kernel beats rk45 per time unit
        import time

        grid = Grid2D(32, 32)
        A = build_advdiff_operator(grid, a=1.0, D=10.0)
        rng = np.random.default_rng(5)
        x, y = grid.coordinates()
        v = np.sin(x) * np.sin(y) + 0.1 * np.sin(2 * x) * np.cos(y)
        csr = A.matrix
        span = 2.0

        def run_rk():
            return rk45_integrate(lambda t, q: csr @ q, v, 0.0, span,
                                  RKConfig(rtol=1e-3))

        def run_exp():
            return relpm_propagate(A, v, span, LejaConfig(tol=1e-3))

        run_rk(), run_exp()  # warmup

        def best_of(fn, repeats=3):
            samples = []
            for _ in range(repeats):
                tick = time.perf_counter()
                fn()
                samples.append(time.perf_counter() - tick)
            return min(samples)

        assert best_of(run_exp) < best_of(run_rk)
