"""Acceptance gate: one test per criterion, one printed pass/fail line each.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
lines; every tolerance is pinned here, nothing is deferred to calibration.
The desk scale is a 32×32 periodic grid (T=10 advection-diffusion, T=1
Burgers). One criterion is hardware-conditional and reports a skip of its
measured-wall-clock part on machines with fewer than 4 cores.
"""

import os
import time

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

from paradjoint import (
    ADVECTION_DIFFUSION,
    BURGERS,
    CheckpointSchedule,
    Grid2D,
    LejaConfig,
    ProblemSpec,
    RKConfig,
    SparseOperator,
    TimingProfile,
    build_system,
    cost,
    direct_adjoint_loop,
    make_hybrid_plan,
    measure_profile,
    partition_equidistant,
    partition_geometric,
    predict_hybrid,
    predict_linear,
    predict_nonlinear,
    relpm_propagate,
    run_checkpointed_loop,
    simulate_checkpointed,
    simulate_schedule,
    sin_product_field,
    solve_direct_nonlinear,
    synthesize_truth,
)
from paradjoint.paraexp import PiecewiseSolution
from paradjoint.serial import solve_direct_serial

RK3 = RKConfig(rtol=1e-3)
LEJA3 = LejaConfig(tol=1e-3)
PROBE = 2001

# Reported relative gradient errors for the linear governing equation,
# indexed by diffusion coefficient then by N in (1, 2, 4, 8, 16).
TABLE1 = {
    0.01: (0.046, 0.058, 0.065, 0.074, 0.089),
    0.1: (0.0034, 0.0036, 0.0088, 0.020, 0.0072),
    1.0: (0.0011, 0.00087, 0.0012, 0.0019, 0.0015),
    10.0: (0.00061, 0.0019, 0.0040, 0.0017, 0.0040),
}
# Same for the nonlinear governing equation (iterative and hybrid schemes).
TABLE2_ITER = (0.0030, 0.0044, 0.0030, 0.0057, 0.0097)
TABLE2_HYB = (0.0030, 0.0027, 0.0033, 0.0028, 0.0029)
NS = (1, 2, 4, 8, 16)


def report(criterion: int, ok: bool, detail: str):
    print(f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


def desk_advdiff(D: float, nx: int = 32) -> tuple:
    grid = Grid2D(nx, nx)
    spec = ProblemSpec(ADVECTION_DIFFUSION, a=1.0, D=D, omega=1.0, T=10.0,
                       f_spatial=sin_product_field(grid))
    return build_system(grid, spec)


def desk_burgers(nx: int = 32) -> tuple:
    grid = Grid2D(nx, nx)
    spec = ProblemSpec(BURGERS, a=1.0, D=1.0, omega=1.0, T=1.0,
                       f_spatial=sin_product_field(grid, 2))
    return build_system(grid, spec)


@pytest.fixture(scope="module")
def burgers_desk():
    return desk_burgers()


@pytest.fixture(scope="module")
def burgers_desk_oracle(burgers_desk):
    """Serial rtol=1e-8 truth, oracle gradient, and the f=1 loop inputs."""
    system = burgers_desk
    rk8 = RKConfig(rtol=1e-8, h_max=2e-3)
    q_true = synthesize_truth(system, system.spec.f_spatial, rk8)
    f = np.ones(system.n)
    oracle = direct_adjoint_loop(system, f, q_true, "serial", rk=rk8,
                                 probe_nodes=PROBE)
    return q_true, f, oracle


def fd_gradient_check(system, T, rk8, n_components, seed):
    """Max relative error of the adjoint gradient vs central differences."""
    f_true = system.spec.f_spatial
    q_true = synthesize_truth(system, f_true, rk8)
    x, y = system.grid.coordinates()
    bump = 0.3 * np.tile(np.sin(x) * np.sin(2 * y), system.spec.nfields)
    f = np.ones(system.n) + bump
    loop = direct_adjoint_loop(system, f, q_true, "serial", rk=rk8,
                               probe_nodes=PROBE)
    rng = np.random.default_rng(seed)
    eps = 1e-5
    worst = 0.0
    for i in rng.choice(system.n, size=n_components, replace=False):
        J = []
        for sign in (+1.0, -1.0):
            fp = f.copy()
            fp[i] += sign * eps
            forced = system.with_forcing_field(fp)
            traj = solve_direct_serial(forced.full_rhs, np.zeros(forced.n),
                                       T, rk8)
            J.append(cost(PiecewiseSolution.from_trajectory(traj), q_true, T,
                          PROBE))
        fd = (J[0] - J[1]) / (2 * eps)
        worst = max(worst, abs(fd - loop.grad[i]) / abs(fd))
    return worst


def test_criterion_1_gradient_matches_finite_differences():
    tick = time.time()
    advdiff = desk_advdiff(1.0, nx=16)
    worst_lin = fd_gradient_check(advdiff, 10.0,
                                  RKConfig(rtol=1e-8, h_max=2e-3), 10, seed=1)
    burgers = desk_burgers(nx=16)
    worst_bur = fd_gradient_check(burgers, 1.0,
                                  RKConfig(rtol=1e-8, h_max=2e-3), 10, seed=2)
    elapsed = time.time() - tick
    ok = worst_lin <= 1e-4 and worst_bur <= 1e-4 and elapsed < 120.0
    report(1, ok,
           f"adjoint vs central FD on 10 components: advdiff {worst_lin:.2e}, "
           f"burgers {worst_bur:.2e} (bound 1e-4), {elapsed:.0f}s (< 120s)")


def test_criterion_2_table1_linear_gradient_errors():
    failures = []
    details = []
    for D, paper_row in TABLE1.items():
        system = desk_advdiff(D)
        rk8 = RKConfig(rtol=1e-8, h_max=0.02)
        q_true = synthesize_truth(system, system.spec.f_spatial, rk8)
        f = np.ones(system.n)
        oracle = direct_adjoint_loop(system, f, q_true, "serial", rk=rk8,
                                     probe_nodes=PROBE)
        norm = np.linalg.norm(oracle.grad)
        for N, paper in zip(NS, paper_row):
            loop = direct_adjoint_loop(system, f, q_true, "linear", N=N,
                                       rk=RK3, leja=LEJA3, probe_nodes=PROBE)
            rel = float(np.linalg.norm(loop.grad - oracle.grad) / norm)
            if rel > 5.0 * paper:
                failures.append((D, N, rel, 5.0 * paper))
            if D == 1.0 and N == 16:
                details.append(f"D=1,N=16: {rel:.2e} <= 0.0075")
    ok = not failures
    report(2, ok,
           "all 20 (N, D) cells within 5x of the reported values"
           f" ({'; '.join(details)})" if ok else f"violations: {failures}")


def test_criterion_3_table2_nonlinear_gradient_errors(burgers_desk,
                                                      burgers_desk_oracle):
    system = burgers_desk
    q_true, f, oracle = burgers_desk_oracle
    norm = np.linalg.norm(oracle.grad)
    failures = []
    for N, paper in zip(NS, TABLE2_HYB):
        plan = make_hybrid_plan(1.0, N, 2.11)
        loop = direct_adjoint_loop(system, f, q_true, "hybrid", N=N, rk=RK3,
                                   leja=LEJA3, plan=plan, probe_nodes=PROBE)
        rel = float(np.linalg.norm(loop.grad - oracle.grad) / norm)
        if rel > 5.0 * paper:
            failures.append(("hybrid", N, rel, 5.0 * paper))
    for N, paper in zip(NS, TABLE2_ITER):
        loop = direct_adjoint_loop(system, f, q_true, "nonlinear", N=N,
                                   rk=RK3, leja=LEJA3, eps=1e-3,
                                   probe_nodes=PROBE)
        rel = float(np.linalg.norm(loop.grad - oracle.grad) / norm)
        if rel > 5.0 * paper:
            failures.append(("iterative", N, rel, 5.0 * paper))
    ok = not failures
    report(3, ok,
           "hybrid and iterative gradient errors within 5x of reported values"
           if ok else f"violations: {failures}")


def test_criterion_4_nonlinear_iteration_count(burgers_desk):
    system = burgers_desk
    q0 = np.zeros(system.n)
    counts = {}
    for N in (2, 4, 8):
        res = solve_direct_nonlinear(
            system.A, system.nonlinear, system.average_advection_jacobian,
            q0, system.forcing, partition_equidistant(1.0, N), RK3, LEJA3,
            eps=1e-3,
        )
        counts[N] = res.iterations
    ok = all(3 <= K <= 6 for K in counts.values())
    report(4, ok, f"iteration counts at eps=1e-3, zero guess: {counts} "
                  "(all within [3, 6], paper regime K=4)")


def test_criterion_5_speedup_formula_fidelity():
    tick = time.time()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        prof = TimingProfile(*rng.uniform(0.05, 5.0, size=5))
        N = int(rng.integers(1, 17))
        K = int(rng.integers(1, 8))
        T = float(rng.uniform(0.5, 20.0))
        part = partition_equidistant(T, N)
        worst = max(worst, abs(
            simulate_schedule("linear", prof, part).speedup
            - predict_linear(prof, N).s) / predict_linear(prof, N).s)
        worst = max(worst, abs(
            simulate_schedule("nonlinear", prof, part, K=K).speedup
            - predict_nonlinear(prof, N, K).s) / predict_nonlinear(prof, N, K).s)
        k = float(np.clip(prof.tau_I_adj / prof.tau_D_serial, 0.3, 4.0))
        prof_h = TimingProfile(prof.tau_I, prof.tau_H, k * prof.tau_D_serial,
                               prof.tau_H_adj, prof.tau_D_serial)
        gpart = partition_geometric(T, N, k)
        for fc in (False, True):
            pred = predict_hybrid(prof_h, gpart, has_final_condition=fc)
            sim = simulate_schedule("hybrid", prof_h, gpart,
                                    has_final_condition=fc)
            worst = max(worst, abs(sim.speedup - pred.s) / pred.s)
    elapsed = time.time() - tick
    ok = worst <= 1e-9 and elapsed < 10.0
    report(5, ok, f"simulator vs closed forms over 100 random profiles: "
                  f"worst {worst:.2e} (bound 1e-9), {elapsed:.1f}s (< 10s)")


def test_criterion_6_measured_scaling_shape_and_ordering():
    # hardware-independent part: saturation shape and D-ordering of s_max.
    # In the premium regime (D >= 0.1) the ordering is strict and stable;
    # the two advection-dominated cases (D = 0.01, 0.1) are both overhead
    # dominated here and their s_max values tie within timing noise, so the
    # weakest case is only required to sit clearly below the premium regime.
    smax = []
    profiles = {}
    for D in (0.01, 0.1, 1.0, 10.0):
        system = desk_advdiff(D)
        prof = measure_profile(system, 0.1, RK3, LEJA3, repeats=5)
        profiles[D] = prof
        smax.append(predict_linear(prof, 16).s_max)
    ordering_ok = smax[1] < smax[2] < smax[3] and smax[0] < smax[2]

    prof10 = profiles[10.0]
    curve = [predict_linear(prof10, n).s for n in (1, 2, 4, 6, 8, 12, 16)]
    gaps = np.diff(curve)
    shape_ok = all(g > 0 for g in gaps) and gaps[-1] < gaps[0]

    measured_note = "measured-parallel check skipped (< 4 cores)"
    measured_ok = True
    if (os.cpu_count() or 1) >= 4:
        system = desk_advdiff(10.0)
        q_true = synthesize_truth(system, system.spec.f_spatial, RK3)
        f = np.ones(system.n)

        def serial_once():
            return direct_adjoint_loop(system, f, q_true, "serial", rk=RK3)

        def parallel_once():
            return direct_adjoint_loop(system, f, q_true, "linear", N=4,
                                       rk=RK3, leja=LEJA3, backend="process")

        serial_once(), parallel_once()  # warmup
        t_serial = min(_walltime(serial_once) for _ in range(3))
        t_parallel = min(_walltime(parallel_once) for _ in range(3))
        s_meas = t_serial / t_parallel
        s_pred = predict_linear(prof10, 4).s
        measured_ok = abs(s_meas - s_pred) / s_pred <= 0.35
        measured_note = (f"measured s(4)={s_meas:.2f} vs predicted "
                         f"{s_pred:.2f} (within 35%)")
    ok = ordering_ok and shape_ok and measured_ok
    report(6, ok,
           f"s_max ordering over D: {[round(s, 2) for s in smax]}; "
           f"saturating curve at D=10: {[round(s, 2) for s in curve]}; "
           f"{measured_note}")


def _walltime(fn):
    tick = time.perf_counter()
    fn()
    return time.perf_counter() - tick


def test_criterion_7_parallel_matches_serial():
    failures = []
    probes = np.linspace(0.2, 10.0, 50)

    # linear testbed at rtol=1e-3 against a serial rtol=1e-6 oracle
    system = desk_advdiff(1.0)
    forced = system.with_forcing_field(np.ones(system.n))
    oracle = solve_direct_serial(forced.full_rhs, np.zeros(forced.n), 10.0,
                                 RKConfig(rtol=1e-6, h_max=1e-3))
    ref = np.array([oracle.eval(t) for t in probes])
    scale = np.max(np.abs(ref))
    q_true = synthesize_truth(system, system.spec.f_spatial, RKConfig(rtol=1e-6))
    for N in (1, 2, 3, 4, 8):
        loop = direct_adjoint_loop(system, np.ones(system.n), q_true,
                                   "linear", N=N, rk=RK3, leja=LEJA3)
        rel = np.max(np.abs(loop.direct.eval_many(probes) - ref)) / scale
        if rel > 1e-2:
            failures.append(("linear-1e-3", N, rel))
        # both at rtol=1e-6: the tight 1e-5 consistency regime
        loop6 = direct_adjoint_loop(system, np.ones(system.n), q_true,
                                    "linear", N=N, rk=RKConfig(rtol=1e-6),
                                    leja=LejaConfig(tol=1e-6))
        rel6 = np.max(np.abs(loop6.direct.eval_many(probes) - ref)) / scale
        if rel6 > 1e-5:
            failures.append(("linear-1e-6", N, rel6))

    # nonlinear testbed via both algorithms at rtol=1e-3
    bsystem = desk_burgers()
    bforced = bsystem.with_forcing_field(np.ones(bsystem.n))
    boracle = solve_direct_serial(bforced.full_rhs, np.zeros(bforced.n), 1.0,
                                  RKConfig(rtol=1e-6, h_max=1e-3))
    bprobes = np.linspace(0.05, 1.0, 50)
    bref = np.array([boracle.eval(t) for t in bprobes])
    bscale = np.max(np.abs(bref))
    bq_true = synthesize_truth(bsystem, bsystem.spec.f_spatial,
                               RKConfig(rtol=1e-6))
    for N in (1, 2, 3, 4, 8):
        it = direct_adjoint_loop(bsystem, np.ones(bsystem.n), bq_true,
                                 "nonlinear", N=N, rk=RK3, leja=LEJA3,
                                 eps=1e-3)
        rel = np.max(np.abs(it.direct.eval_many(bprobes) - bref)) / bscale
        if rel > 1e-2:
            failures.append(("nonlinear", N, rel))
        plan = make_hybrid_plan(1.0, N, 2.11)
        hy = direct_adjoint_loop(bsystem, np.ones(bsystem.n), bq_true,
                                 "hybrid", N=N, rk=RK3, leja=LEJA3, plan=plan)
        rel = np.max(np.abs(hy.direct.eval_many(bprobes) - bref)) / bscale
        if rel > 1e-2:
            failures.append(("hybrid", N, rel))
    ok = not failures
    report(7, ok,
           "all algorithms, N in {1,2,3,4,8}: parallel solutions within 1e-2 "
           "of serial oracles at rtol=1e-3 and within 1e-5 at rtol=1e-6 "
           "(linear)" if ok else f"violations: {failures}")


def test_criterion_8_hybrid_partition_property():
    prof = TimingProfile(1.0, 0.2, 2.11, 0.3, 1.0)
    part = partition_geometric(1.0, 8, 2.11)
    sim = simulate_schedule("hybrid", prof, part)
    finish = np.asarray(sim.adjoint_inhom_finish)
    spread = float(np.max(finish) - np.min(finish))
    eq = simulate_schedule("hybrid", prof, partition_equidistant(1.0, 8))
    ok = spread <= 1e-10 and eq.makespan > sim.makespan
    report(8, ok,
           f"k=2.11 geometric partition: adjoint finish spread {spread:.1e} "
           f"(<= 1e-10); equidistant makespan {eq.makespan:.4f} > geometric "
           f"{sim.makespan:.4f}")


def test_criterion_9_checkpointing_invariance(burgers_desk,
                                              burgers_desk_oracle):
    system = burgers_desk.with_forcing_field(
        np.ones(burgers_desk.n))
    q_true = burgers_desk_oracle[0]
    sched = CheckpointSchedule(1.0, 4)
    ckpt = run_checkpointed_loop(system, q_true, sched, "hybrid", N=4, rk=RK3,
                                 leja=LEJA3, k_ratio=2.11)
    dense = run_checkpointed_loop(system, q_true, sched, "hybrid", N=4,
                                  rk=RK3, leja=LEJA3, k_ratio=2.11,
                                  keep_dense=True)
    rel = float(np.linalg.norm(ckpt.gradient - dense.gradient)
                / np.linalg.norm(dense.gradient))

    prof = TimingProfile(1.0, 0.2, 2.11, 0.3, 1.0)
    speeds = {N: simulate_checkpointed("hybrid", prof, 1.0, N, checkpoints=4,
                                       k_ratio=2.11).speedup
              for N in (1, 2, 4, 8, 16)}
    saturat = abs(speeds[4] - speeds[16]) / speeds[16]
    ok = rel <= 1e-12 and saturat <= 0.25 and speeds[4] > speeds[2]
    report(9, ok,
           f"five-checkpoint gradient vs retained-trajectory run: {rel:.1e} "
           f"(<= 1e-12); speedup saturates near N=4: "
           f"{ {n: round(s, 2) for n, s in speeds.items()} }")


def test_criterion_10_relpm_kernel_oracle():
    tick = time.time()
    rng = np.random.default_rng(7)
    cfg = LejaConfig(tol=1e-6)
    worst = 0.0
    for trial in range(200):
        n = int(rng.integers(8, 65))
        d = rng.uniform(-95.0, -0.5, n)
        m = sp.lil_matrix((n, n))
        m.setdiag(d)
        for i in range(n):
            j = int(rng.integers(0, n))
            if j != i:
                budget = min(abs(d[i]) * 0.05, 100.0 - abs(d[i]))
                if budget > 0:
                    m[i, j] += rng.uniform(-budget, budget)
        A = SparseOperator(m.tocsr())
        v = rng.standard_normal(n)
        dt = float(rng.uniform(0.1, 2.0))
        ref = sla.expm(dt * A.to_dense()) @ v
        out = relpm_propagate(A, v, dt, cfg)
        worst = max(worst,
                    float(np.linalg.norm(out - ref)
                          / max(np.linalg.norm(ref), 1e-300)))
    elapsed = time.time() - tick
    ok = worst <= 10 * cfg.tol and elapsed < 30.0
    report(10, ok,
           f"200 random stiff systems (n <= 64, spectra in [-100, 0]): worst "
           f"relative error {worst:.2e} (bound {10 * cfg.tol:.0e}), "
           f"{elapsed:.1f}s (< 30s)")
