"""Batch experiment runner.

Subcommands:
  run              execute the configured direct-adjoint loops, timing the
                   serial baseline against each worker count
  predict          closed-form speedup table from a measured or supplied
                   timing profile (the a-priori check)
  verify-gradient  parallel gradient at the configured tolerance vs a serial
                   high-accuracy oracle, per worker count
  profile          measure and store the timing profile

Each reporting command writes CSV files and, unless --no-figures is given,
renders matplotlib figures next to them. Exit codes: 0 success, 1 config
error, 2 solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .checkpointing import CheckpointSchedule, run_checkpointed_loop
from .config import ConfigError, RunConfig, load_config, save_field
from .errors import (
    CollectiveFailure,
    IntegrationFailure,
    IterationDivergence,
    PilotTooShort,
    PropagationFailure,
)
from .hybrid import make_hybrid_plan, partition_geometric
from .optimization import (
    DEFAULT_PROBE_NODES,
    descend,
    direct_adjoint_loop,
    synthesize_truth,
)
from .paraexp import partition_equidistant
from .reporting import (
    plot_convergence,
    plot_gantt,
    plot_gradient_errors,
    plot_speedup_curves,
    write_csv,
)
from .scaling import (
    TimingProfile,
    measure_profile,
    predict_hybrid,
    predict_linear,
    predict_nonlinear,
    simulate_checkpointed,
    simulate_schedule,
)
from .systems import System, build_system
from .timestepping import LejaConfig, RKConfig

SOLVER_ERRORS = (
    CollectiveFailure,
    IntegrationFailure,
    PropagationFailure,
    IterationDivergence,
    PilotTooShort,
    FloatingPointError,
)

ORACLE_RTOL = 1e-8


def _build(cfg: RunConfig) -> tuple[System, RKConfig, LejaConfig]:
    system = build_system(cfg.grid, cfg.problem)
    rk = RKConfig(rtol=cfg.rtol)
    leja = LejaConfig(tol=cfg.effective_leja_tol)
    return system, rk, leja


def _predict_for(cfg: RunConfig, profile: TimingProfile, N: int, K: int):
    if cfg.algorithm == "linear":
        return predict_linear(profile, N)
    if cfg.algorithm == "nonlinear":
        return predict_nonlinear(profile, N, K)
    k = profile.tau_I_adj / profile.tau_D_serial
    return predict_hybrid(profile, partition_geometric(cfg.problem.T, N, k))


def _simulate_for(cfg: RunConfig, profile: TimingProfile, N: int, K: int) -> float:
    k = profile.tau_I_adj / profile.tau_D_serial
    if cfg.checkpoints > 0:
        res = simulate_checkpointed(
            cfg.algorithm, profile, cfg.problem.T, N, cfg.checkpoints, K=K, k_ratio=k
        )
        return res.speedup
    part = (
        partition_geometric(cfg.problem.T, N, k)
        if cfg.algorithm == "hybrid"
        else partition_equidistant(cfg.problem.T, N)
    )
    return simulate_schedule(cfg.algorithm, profile, part, K=K).speedup


def cmd_run(cfg: RunConfig, out: Path, figures: bool, dry_run: bool) -> int:
    system, rk, leja = _build(cfg)
    if dry_run:
        plan = {
            "problem": cfg.problem.kind,
            "grid": [cfg.grid.nx, cfg.grid.ny],
            "D": cfg.problem.D,
            "T": cfg.problem.T,
            "algorithm": cfg.algorithm,
            "workers": list(cfg.workers),
            "checkpoints": cfg.checkpoints,
            "rtol": cfg.rtol,
            "leja_tol": cfg.effective_leja_tol,
            "backend": cfg.backend,
            "output": str(out),
        }
        print(json.dumps(plan, indent=2))
        return 0

    q_true = synthesize_truth(system, cfg.f_true, rk, leja)
    profile = measure_profile(system, cfg.pilot_fraction, rk, leja,
                              repeats=cfg.repeats)
    k_measured = profile.tau_I_adj / profile.tau_D_serial

    def serial_loop():
        return direct_adjoint_loop(system, cfg.f_init, q_true, "serial",
                                   rk=rk, leja=leja)

    tick = time.perf_counter()
    for _ in range(cfg.repeats):
        serial_loop()
    t_serial = (time.perf_counter() - tick) / cfg.repeats

    from .workers import MessageRecorder

    rows = []
    history_rows = []
    gantt_events = []
    max_wait = 0.0
    for N in cfg.workers:
        plan = (
            make_hybrid_plan(cfg.problem.T, N, k_measured, h_min=rk.h_min)
            if cfg.algorithm == "hybrid"
            else None
        )
        K = 1
        tick = time.perf_counter()
        for rep in range(cfg.repeats):
            recorder = MessageRecorder() if rep == cfg.repeats - 1 else None
            if cfg.checkpoints > 0:
                sched = CheckpointSchedule(cfg.problem.T, cfg.checkpoints)
                run = run_checkpointed_loop(
                    system, q_true, sched, cfg.algorithm, N=N, rk=rk, leja=leja,
                    eps=cfg.eps, k_ratio=k_measured, backend=cfg.backend,
                    q0=np.zeros(system.n),
                )
                K = max(run.iterations) if run.iterations else 1
            else:
                loop = direct_adjoint_loop(
                    system, cfg.f_init, q_true, cfg.algorithm, N=N, rk=rk,
                    leja=leja, eps=cfg.eps, plan=plan, backend=cfg.backend,
                    recorder=recorder,
                )
                K = loop.iterations
                if recorder is not None and recorder.wait_seconds:
                    max_wait = max(max_wait, max(recorder.wait_seconds))
                if cfg.algorithm == "nonlinear" and N == max(cfg.workers):
                    history_rows = [
                        [i + 1, err, ""] for i, err in enumerate(loop.error_history)
                    ]
        t_parallel = (time.perf_counter() - tick) / cfg.repeats
        pred = _predict_for(cfg, profile, N, K)
        sim = _simulate_for(cfg, profile, N, K)
        rows.append([
            cfg.algorithm, N, cfg.problem.D, cfg.repeats, K,
            f"{pred.s:.6f}", f"{sim:.6f}",
            f"{t_serial:.6f}", f"{t_parallel:.6f}",
            f"{t_serial / t_parallel:.6f}",
        ])
        print(f"N={N}: predicted s={pred.s:.3f} simulated s={sim:.3f} "
              f"measured s={t_serial / t_parallel:.3f}")

    write_csv(out / "results.csv",
              ["algorithm", "N", "D", "repeats", "K", "s_predicted",
               "s_simulated", "t_serial_s", "t_parallel_s", "s_measured"],
              rows)
    summary = {
        "algorithm": cfg.algorithm,
        "workers": list(cfg.workers),
        "checkpoints": cfg.checkpoints,
        "D": cfg.problem.D,
        "T": cfg.problem.T,
        "grid": [cfg.grid.nx, cfg.grid.ny],
        "rtol": cfg.rtol,
        "seed": cfg.seed,
        "profile": profile.__dict__,
        "k": k_measured,
        "t_serial_s": t_serial,
        # worst blocking-receive wait observed on any worker (measured lag)
        "max_recv_wait_s": max_wait,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    if history_rows:
        write_csv(out / "iteration_history.csv", ["iter", "err", "wallclock_s"],
                  history_rows)

    if cfg.algorithm == "hybrid" and cfg.checkpoints == 0 and cfg.workers:
        from .hybrid import solve_hybrid

        N = max(cfg.workers)
        plan = make_hybrid_plan(cfg.problem.T, N, k_measured, h_min=rk.h_min)

        def adj_source(t, q_t):
            return 2.0 * (q_t - q_true.eval(t))

        forced = system.with_forcing_field(cfg.f_init)
        res = solve_hybrid(forced, np.zeros(system.n), np.zeros(system.n),
                           adj_source, plan, rk, leja, backend=cfg.backend)
        gantt_events = res.events
        write_csv(out / "gantt.csv",
                  ["worker", "phase", "t_start_wall", "t_end_wall"],
                  [[e.worker, e.phase, f"{e.wall_start:.6f}", f"{e.wall_end:.6f}"]
                   for e in gantt_events])

    if cfg.descent_steps > 0:
        result = descend(system, cfg.f_init, q_true, cfg.descent_steps,
                         cfg.descent_lr, algorithm=cfg.algorithm,
                         N=max(cfg.workers), rk=rk, leja=leja, eps=cfg.eps,
                         backend=cfg.backend)
        write_csv(out / "descent.csv", ["step", "J", "grad_norm", "wallclock_s"],
                  [[i, f"{J:.9e}", f"{g:.9e}", f"{s:.6f}"]
                   for i, (J, g, s) in enumerate(
                       zip(result.J_history, result.grad_norms,
                           result.step_seconds))])
        save_field(out / "f_final", result.f_final, cfg.grid,
                   cfg.problem.nfields)
        if figures:
            plot_convergence(out / "descent.png", result.J_history,
                             f"{cfg.algorithm} descent, D={cfg.problem.D}")

    if figures:
        ns = [int(r[1]) for r in rows]
        series = {
            cfg.algorithm: {
                "N": ns,
                "s_predicted": [float(r[5]) for r in rows],
                "s_simulated": [float(r[6]) for r in rows],
                "s_measured": [float(r[9]) for r in rows],
                "s_max": _predict_for(cfg, profile, max(ns), K).s_max,
            }
        }
        plot_speedup_curves(out / "speedup.png", series,
                            f"{cfg.algorithm}, D={cfg.problem.D}")
        if gantt_events:
            plot_gantt(out / "gantt.png", gantt_events,
                       f"hybrid overlap, N={max(cfg.workers)}")
    return 0


def cmd_predict(cfg: RunConfig, out: Path, figures: bool,
                profile_path: str | None) -> int:
    system, rk, leja = _build(cfg)
    if profile_path:
        data = json.loads(Path(profile_path).read_text())
        profile = TimingProfile(**{k: data[k] for k in (
            "tau_I", "tau_H", "tau_I_adj", "tau_H_adj", "tau_D_serial")})
    else:
        profile = measure_profile(system, cfg.pilot_fraction, rk, leja,
                                  repeats=cfg.repeats)
    k = profile.tau_I_adj / profile.tau_D_serial
    rows = []
    for N in cfg.workers:
        pred = _predict_for(cfg, profile, N, K=1)
        flag = "" if pred.s > 1.0 else "not beneficial"
        n_min = pred.N_min if pred.N_min is not None else ""
        rows.append([cfg.algorithm, N, f"{pred.s:.6f}", f"{pred.s_max:.6f}",
                     n_min, flag])
        line = f"N={N}: s={pred.s:.3f} s_max={pred.s_max:.3f}"
        if cfg.algorithm == "hybrid":
            bounds = partition_geometric(cfg.problem.T, N, k).boundaries
            line += f" partition={np.round(bounds, 4).tolist()}"
        if flag:
            line += f"  [{flag}]"
        print(line)
    write_csv(out / "predict.csv",
              ["algorithm", "N", "s", "s_max", "N_min", "note"], rows)
    (out / "profile.json").write_text(
        json.dumps(profile.__dict__, indent=2) + "\n")
    if figures:
        plot_speedup_curves(
            out / "predict.png",
            {cfg.algorithm: {"N": [int(r[1]) for r in rows],
                             "s_predicted": [float(r[2]) for r in rows],
                             "s_max": float(rows[-1][3])}},
            f"predicted speedup, {cfg.algorithm}",
        )
    return 0


def cmd_verify_gradient(cfg: RunConfig, out: Path, figures: bool) -> int:
    system, rk, leja = _build(cfg)
    oracle_rk = RKConfig(rtol=ORACLE_RTOL, h_max=cfg.problem.T / 500.0)
    probe_nodes = max(DEFAULT_PROBE_NODES, 2001)
    q_true = synthesize_truth(system, cfg.f_true, oracle_rk)
    oracle = direct_adjoint_loop(system, cfg.f_init, q_true, "serial",
                                 rk=oracle_rk, probe_nodes=probe_nodes)
    oracle_norm = float(np.linalg.norm(oracle.grad))
    k = None
    rows = []
    for N in cfg.workers:
        plan = None
        if cfg.algorithm == "hybrid":
            from .hybrid import estimate_k

            k = k or estimate_k(system.with_forcing_field(cfg.f_init),
                                cfg.pilot_fraction, rk)
            plan = make_hybrid_plan(cfg.problem.T, N, k, h_min=rk.h_min)
        loop = direct_adjoint_loop(system, cfg.f_init, q_true, cfg.algorithm,
                                   N=N, rk=rk, leja=leja, eps=cfg.eps,
                                   plan=plan, backend=cfg.backend,
                                   probe_nodes=probe_nodes)
        rel = float(np.linalg.norm(loop.grad - oracle.grad)) / oracle_norm
        rows.append([cfg.algorithm, N, cfg.problem.D, f"{rel:.6e}"])
        print(f"N={N}: relative gradient error {rel:.3e}")
    write_csv(out / "gradient_errors.csv",
              ["algorithm", "N", "D", "rel_err"], rows)
    if figures:
        plot_gradient_errors(
            out / "gradient_errors.png",
            [(int(r[1]), float(r[3])) for r in rows],
            f"{cfg.algorithm}, D={cfg.problem.D}: parallel vs serial oracle",
        )
    return 0


def cmd_profile(cfg: RunConfig, out: Path) -> int:
    system, rk, leja = _build(cfg)
    profile = measure_profile(system, cfg.pilot_fraction, rk, leja,
                              repeats=cfg.repeats)
    payload = dict(profile.__dict__)
    payload["k"] = profile.tau_I_adj / profile.tau_D_serial
    (out / "profile.json").write_text(json.dumps(payload, indent=2) + "\n")
    print(json.dumps(payload, indent=2))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="paradjoint",
        description="parallel-in-time direct-adjoint experiment runner",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "predict", "verify-gradient", "profile"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--workers", type=int, default=None,
                       help="override the worker count list with one value")
        p.add_argument("--output", default=None, help="output directory")
        p.add_argument("--repeats", type=int, default=None)
        p.add_argument("--no-figures", action="store_true")
        if name == "run":
            p.add_argument("--dry-run", action="store_true")
        if name == "predict":
            p.add_argument("--profile-file", default=None,
                           help="JSON timing profile instead of measuring")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("workers: must be at least 1")
            cfg = RunConfig(**{**cfg.__dict__, "workers": (args.workers,)})
        if args.repeats is not None:
            if args.repeats < 1:
                raise ConfigError("repeats: must be at least 1")
            cfg = RunConfig(**{**cfg.__dict__, "repeats": args.repeats})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    out = Path(args.output) if args.output else Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    figures = not args.no_figures

    try:
        if args.command == "run":
            return cmd_run(cfg, out, figures, args.dry_run)
        if args.command == "predict":
            return cmd_predict(cfg, out, figures, args.profile_file)
        if args.command == "verify-gradient":
            return cmd_verify_gradient(cfg, out, figures)
        if args.command == "profile":
            return cmd_profile(cfg, out)
    except SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
