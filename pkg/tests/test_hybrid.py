"""Hybrid serial-direct/parallel-adjoint: partitioning, pilots, the solve."""

import numpy as np
import pytest

from paradjoint import (
    LejaConfig,
    RKConfig,
    estimate_k,
    make_hybrid_plan,
    partition_equidistant,
    partition_geometric,
    solve_adjoint_linear,
    solve_hybrid,
)
from paradjoint.errors import PilotTooShort
from paradjoint.hybrid import HybridPlan, _pilot_times
from paradjoint.serial import solve_adjoint_serial, solve_direct_serial
from paradjoint.systems import build_system
from paradjoint.problems import ADVECTION_DIFFUSION, ProblemSpec, sin_product_field
from paradjoint import Grid2D
from tests.conftest import rel_linf


class TestGeometricPartition:
    def test_single_interval(self):
        part = partition_geometric(5.0, 1, 2.0)
        assert part.boundaries.tolist() == [0.0, 5.0]

    def test_endpoints_and_decreasing_widths(self):
        part = partition_geometric(3.0, 6, 1.7)
        assert part.boundaries[0] == 0.0 and part.boundaries[-1] == 3.0
        widths = part.widths()
        assert np.all(np.diff(widths) < 0)

    def test_frozen_boundaries_high_precision(self):
        # closed form evaluated with mpmath at 50 digits
        import mpmath as mp

        mp.mp.dps = 50
        k = mp.mpf("2.11")
        r = k / (k + 1)
        want = [float((1 - r**n) / (1 - r**3)) for n in (0, 1, 2, 3)]
        part = partition_geometric(1.0, 3, 2.11)
        assert part.boundaries == pytest.approx(want, abs=1e-12)
        assert part.boundaries[1] == pytest.approx(0.4676, abs=5e-5)
        assert part.boundaries[2] == pytest.approx(0.7848, abs=5e-5)

    def test_width_ratio_invariant(self):
        k = 2.11
        plan = make_hybrid_plan(1.0, 8, k)
        widths = plan.partition.widths()
        ratios = widths[1:] / widths[:-1]
        assert ratios == pytest.approx(k / (k + 1), rel=1e-10)

    def test_plan_rejects_mismatched_partition(self):
        part = partition_equidistant(1.0, 4)
        with pytest.raises(ValueError):
            HybridPlan(part, 2.11)

    def test_plan_rejects_too_fine_widths(self):
        with pytest.raises(ValueError):
            make_hybrid_plan(1.0, 8, 2.11, h_min=0.05)

    def test_rejects_bad_args(self):
        with pytest.raises(ValueError):
            partition_geometric(1.0, 0, 2.0)
        with pytest.raises(ValueError):
            partition_geometric(1.0, 4, -1.0)


class TestEstimateK:
    def test_symmetric_synthetic_costs_give_k_near_one(self, monkeypatch):
        import paradjoint.hybrid as hybrid_mod

        monkeypatch.setattr(hybrid_mod, "_pilot_times",
                            lambda *a, **kw: (0.1, 0.1))
        system = build_system(
            Grid2D(8, 8),
            ProblemSpec(ADVECTION_DIFFUSION, 1.0, 1.0, 1.0, 1.0,
                        sin_product_field(Grid2D(8, 8))),
        )
        k = estimate_k(system, 0.05, RKConfig())
        assert k == pytest.approx(1.0, rel=0.2)

    def test_doubling_adjoint_work_doubles_k(self, monkeypatch):
        import paradjoint.hybrid as hybrid_mod

        system = build_system(
            Grid2D(8, 8),
            ProblemSpec(ADVECTION_DIFFUSION, 1.0, 1.0, 1.0, 1.0,
                        sin_product_field(Grid2D(8, 8))),
        )
        monkeypatch.setattr(hybrid_mod, "_pilot_times",
                            lambda *a, **kw: (0.1, 0.25))
        base = estimate_k(system, 0.05, RKConfig())
        monkeypatch.setattr(hybrid_mod, "_pilot_times",
                            lambda *a, **kw: (0.1, 0.5))
        doubled = estimate_k(system, 0.05, RKConfig())
        assert doubled == pytest.approx(2.0 * base, rel=1e-12)

    def test_burgers_adjoint_costlier_than_direct(self, burgers16):
        # hardware-dependent: asserted only as k > 1
        k = estimate_k(burgers16, 0.1, RKConfig(rtol=1e-3))
        assert k > 1.0

    def test_pilot_fraction_bounds(self, burgers16):
        with pytest.raises(ValueError):
            estimate_k(burgers16, 0.5, RKConfig())

    def test_degenerate_pilot_raises(self, burgers16):
        with pytest.raises(PilotTooShort):
            _pilot_times(burgers16, 1e-9, RKConfig(rtol=1e-3, h_min=1e-10),
                         repeats=1)


class TestSolveHybrid:
    def test_zero_terminal_and_source_give_zero_adjoint(self, burgers16, rk3,
                                                        leja3):
        plan = make_hybrid_plan(1.0, 3, 2.11)
        q0 = np.zeros(burgers16.n)
        res = solve_hybrid(burgers16, q0, np.zeros(burgers16.n),
                           lambda t, qt: np.zeros(burgers16.n), plan, rk3,
                           leja3)
        assert all(np.all(p.states == 0.0) for p in res.adjoint.pieces)
        oracle = solve_direct_serial(burgers16.full_rhs, q0, 1.0,
                                     RKConfig(rtol=1e-6, h_max=2e-3))
        probes = np.linspace(0.05, 1.0, 30)
        assert rel_linf(res.direct.eval_many(probes),
                        np.array([oracle.eval(t) for t in probes])) <= 1e-2

    def test_linear_problem_matches_paraexp_adjoint(self, advdiff16, rk3,
                                                    leja3):
        # cross-algorithm oracle on a linear testbed
        rng = np.random.default_rng(0)
        sys_ = advdiff16
        q0 = np.zeros(sys_.n)
        s0 = rng.standard_normal(sys_.n)
        plan = make_hybrid_plan(10.0, 3, 1.5)

        res = solve_hybrid(sys_, q0, np.zeros(sys_.n),
                           lambda t, qt: s0 * np.sin(t), plan, rk3, leja3)
        ref = solve_adjoint_linear(sys_.A, np.zeros(sys_.n),
                                   lambda t: s0 * np.sin(t), plan.partition,
                                   rk3, leja3)
        probes = np.linspace(0.0, 10.0, 60)
        rel = rel_linf(res.adjoint.eval_many(probes), ref.eval_many(probes))
        assert rel <= 10 * rk3.rtol

    def test_burgers_adjoint_matches_serial_oracle(self, burgers16, rk3,
                                                   leja3, burgers16_truth):
        # drive the loop away from the truth so the adjoint source is O(1)
        q_true = burgers16_truth
        system = burgers16.with_forcing_field(np.full(burgers16.n, 0.7))
        plan = make_hybrid_plan(1.0, 4, 2.11)
        q0 = np.zeros(system.n)
        res = solve_hybrid(
            system, q0, np.zeros(system.n),
            lambda t, qt: 2.0 * (qt - q_true.eval(t)), plan, rk3, leja3,
        )
        oracle_rk = RKConfig(rtol=1e-6, h_max=2e-3)
        direct = solve_direct_serial(system.full_rhs, q0, 1.0, oracle_rk)
        apply_T = system.adjoint_apply(direct)
        adj = solve_adjoint_serial(
            apply_T, np.zeros(system.n),
            lambda t: 2.0 * (direct.eval(t) - q_true.eval(t)), 1.0, oracle_rk,
        )
        probes = np.linspace(0.0, 1.0, 40)
        rel = rel_linf(res.adjoint.eval_many(probes),
                       np.array([adj.eval(t) for t in probes]))
        assert rel <= 1e-2

    def test_burgers_hybrid_agrees_with_iterative_adjoint(self, burgers16,
                                                          rk3, leja3,
                                                          burgers16_truth):
        # the two parallel adjoint paths share the scattered direct solution
        # and the frozen interval operators, so they nearly coincide
        from paradjoint.paraexp import solve_adjoint_varying

        q_true = burgers16_truth
        system = burgers16.with_forcing_field(np.full(burgers16.n, 0.7))
        plan = make_hybrid_plan(1.0, 4, 2.11)
        res = solve_hybrid(
            system, np.zeros(system.n), np.zeros(system.n),
            lambda t, qt: 2.0 * (qt - q_true.eval(t)), plan, rk3, leja3,
        )
        frozen = system.frozen_adjoint_ops(res.direct, plan.partition)
        other = solve_adjoint_varying(
            system.adjoint_apply(res.direct), lambda p: frozen[p],
            np.zeros(system.n),
            lambda t: 2.0 * (res.direct.eval(t) - q_true.eval(t)),
            plan.partition, rk3, leja3,
        )
        probes = np.linspace(0.0, 1.0, 40)
        rel = rel_linf(res.adjoint.eval_many(probes), other.eval_many(probes))
        assert rel <= 1e-9

    def test_nonzero_final_condition_enters_once(self, advdiff16, rk3, leja3):
        # against the absorbed-condition linear adjoint
        rng = np.random.default_rng(1)
        qT = 0.5 * rng.standard_normal(advdiff16.n)
        plan = make_hybrid_plan(10.0, 3, 1.5)
        res = solve_hybrid(advdiff16, np.zeros(advdiff16.n), qT,
                           lambda t, qt: np.zeros(advdiff16.n), plan, rk3,
                           leja3)
        ref = solve_adjoint_linear(advdiff16.A, qT, lambda t: np.zeros(advdiff16.n),
                                   plan.partition, rk3, leja3)
        probes = np.linspace(0.0, 10.0, 50)
        rel = rel_linf(res.adjoint.eval_many(probes), ref.eval_many(probes))
        assert rel <= 10 * rk3.rtol

    def test_gantt_events_cover_phases(self, burgers8, rk3, leja3):
        plan = make_hybrid_plan(1.0, 2, 2.0)
        res = solve_hybrid(burgers8, np.zeros(burgers8.n),
                           np.zeros(burgers8.n),
                           lambda t, qt: np.zeros(burgers8.n), plan, rk3,
                           leja3)
        phases = {(e.worker, e.phase) for e in res.events}
        assert (0, "direct") in phases and (1, "direct") in phases
        assert (0, "adjoint_inhom") in phases
        assert (0, "adjoint_hom") in phases
