"""Command-line harness: simulate, optimize, gradcheck, benchmark.

Configuration precedence is CLI flags over ``--config`` JSON file over the
scenario defaults; the effective configuration is echoed into the output
directory.  Exit codes: 0 success, 2 usage error, 3 budget exhausted,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BUDGET = 3
EXIT_NUMERIC = 4

TRACE_HEADER = ("t,body_id,x,y,z,q0,q1,q2,q3,q4,q5,q6,q7,q8,"
                "vx,vy,vz,wx,wy,wz")


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get("DIFFDYN_THREADS", "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffdyn",
        description="Differentiable rigid-body simulation and controller "
                    "optimization")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=np.uint64, default=None)
        p.add_argument("--out", type=str, default=None,
                       help="output directory (default runs/<command>)")
        p.add_argument("--config", type=str, default=None,
                       help="JSON file with defaults (flags win)")
        p.add_argument("--workers", type=int, default=None,
                       help="worker threads (default $DIFFDYN_THREADS or 1)")
        p.add_argument("--dt", type=float, default=None)

    p_sim = sub.add_parser("simulate", help="roll a scene forward, write a "
                                            "state trace CSV")
    p_sim.add_argument("--scene", type=str, required=True)
    p_sim.add_argument("--duration", type=float, default=1.0)
    common(p_sim)

    p_opt = sub.add_parser("optimize", help="optimize a scenario controller")
    p_opt.add_argument("--scenario", type=str, required=True)
    p_opt.add_argument("--method", type=str, default=None,
                       choices=["sgd", "adam", "cma-es"])
    p_opt.add_argument("--iters", type=int, default=None)
    p_opt.add_argument("--batch", type=int, default=None)
    p_opt.add_argument("--alpha", type=float, default=None)
    p_opt.add_argument("--clip", type=float, default=None)
    p_opt.add_argument("--lr", type=float, default=None)
    p_opt.add_argument("--sigma", type=float, default=None,
                       help="CMA-ES initial step size")
    p_opt.add_argument("--time-budget", type=float, default=None,
                       help="wall-clock budget in seconds")
    common(p_opt)

    p_gc = sub.add_parser("gradcheck", help="finite-difference gradient "
                                            "validation")
    p_gc.add_argument("--scenario", type=str, default="all",
                      choices=["ball", "ball-bounce", "arm", "all"])
    p_gc.add_argument("--steps", type=int, default=20)
    p_gc.add_argument("--samples", type=int, default=20)
    common(p_gc)

    p_b = sub.add_parser("benchmark", help="forward vs gradient timing grid")
    p_b.add_argument("--batch", type=int, nargs="*", default=None,
                     help="batch sizes (default 1 128)")
    p_b.add_argument("--duration", type=float, default=10.0)
    p_b.add_argument("--compare-backends", action="store_true")
    common(p_b)
    return parser


def _load_config_file(args) -> dict:
    if not args.config:
        return {}
    try:
        return json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as err:
        print(f"error: cannot read config {args.config}: {err}",
              file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _resolve(args, file_cfg: dict, key: str, default):
    """CLI flag > config file > default."""
    val = getattr(args, key, None)
    if val is not None:
        return val
    if key in file_cfg:
        return file_cfg[key]
    return default


def _outdir(args, name: str) -> Path:
    out = Path(args.out) if args.out else Path("runs") / name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(out: Path, cfg: dict) -> None:
    (out / "config.json").write_text(json.dumps(cfg, indent=2, default=str)
                                     + "\n")


def _fmt(x: float) -> str:
    from .optim import format_float
    return format_float(x)


def cmd_simulate(args) -> int:
    from .config import DEFAULT_CONFIG
    from .rollout import RolloutNaNError, RolloutProgram, rollout
    from .scenarios.scene_io import SceneError, load_scene
    from .solver import engine_step, make_context, world_to_tape
    from . import tape as tg

    file_cfg = _load_config_file(args)
    try:
        model = load_scene(args.scene)
    except (OSError, SceneError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    dt = _resolve(args, file_cfg, "dt", DEFAULT_CONFIG.dt)
    duration = _resolve(args, file_cfg, "duration", 1.0)
    cfg = DEFAULT_CONFIG.with_(dt=dt)
    out = _outdir(args, "simulate")
    _echo_config(out, {"command": "simulate", "scene": args.scene,
                       "duration": duration, "dt": dt})

    tape = tg.Tape()
    ctx = make_context(tape, model.bodies, model.joints, model.motors,
                       model.build_world, 1, cfg,
                       sphere_sphere=model.sphere_sphere)
    world_in = world_to_tape(tape, model.build_world, 1)
    world_out, _ = engine_step(ctx, world_in)
    program = RolloutProgram(tape=tape, ctx=ctx, state_in=world_in,
                             state_out=world_out)
    n_steps = int(round(duration / dt))
    lines = [TRACE_HEADER]
    try:
        if n_steps > 0:
            result = rollout(program, n_steps,
                             program.state_template(model.build_world))
            states = result.checkpoints[1:] + [{"state": result.final_state}]
            for i, snap in enumerate(states):
                t = (i + 1) * dt
                for b, (x, r, v, w) in enumerate(snap["state"]):
                    vals = [x[0, 0], x[0, 1], x[0, 2], *r[0].reshape(-1),
                            *v[0], *w[0]]
                    lines.append(",".join([_fmt(t), str(b)]
                                          + [_fmt(v_) for v_ in vals]))
    except RolloutNaNError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    (out / "trace.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {out / 'trace.csv'} ({n_steps} steps, "
          f"{len(model.bodies)} bodies)")
    return EXIT_OK


def cmd_optimize(args) -> int:
    from .control import ParamVector, save_checkpoint
    from .optim import (RunSettings, ShardedProblem, optimize_loop,
                        rows_to_csv)
    from .rollout import RolloutNaNError
    from .scenarios import get_task
    from .scenarios.base import OptimizationProblem

    file_cfg = _load_config_file(args)
    try:
        task = get_task(args.scenario)
    except KeyError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    seed = int(_resolve(args, file_cfg, "seed", 0))
    workers = int(_resolve(args, file_cfg, "workers", _default_workers()))
    batch = _resolve(args, file_cfg, "batch", None)
    settings = RunSettings.from_task(
        task,
        method=_resolve(args, file_cfg, "method", None),
        iterations=_resolve(args, file_cfg, "iters", None),
        learning_rate=_resolve(args, file_cfg, "lr", None),
        alpha=_resolve(args, file_cfg, "alpha", None),
        clip_norm=_resolve(args, file_cfg, "clip", None),
        sigma0=_resolve(args, file_cfg, "sigma", None),
        time_budget_s=_resolve(args, file_cfg, "time_budget", None),
    )
    settings.seed = seed
    out = _outdir(args, args.scenario)
    _echo_config(out, {
        "command": "optimize", "scenario": args.scenario,
        "method": settings.method, "seed": seed,
        "iterations": settings.iterations, "batch": batch or task.batch,
        "workers": workers, "alpha": settings.alpha,
        "clip_norm": settings.clip_norm,
        "learning_rate": settings.learning_rate, "sigma0": settings.sigma0})

    t0 = time.perf_counter()
    try:
        if workers > 1 and (batch or task.batch) > 1:
            problem = ShardedProblem(task, workers, batch=batch)
        else:
            problem = OptimizationProblem(task, batch=batch)
        outcome = optimize_loop(problem, settings)
    except RolloutNaNError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    wall = time.perf_counter() - t0

    (out / "convergence.csv").write_text(rows_to_csv(outcome.rows))
    if task.param_mode == "controller":
        pv = ParamVector(task.controller, outcome.best_params, seed=seed)
        save_checkpoint(out / "checkpoint.ddck", task.controller, pv)
    else:
        (out / "params.bin").write_bytes(
            outcome.best_params.astype("<f8").tobytes())
        (out / "params.txt").write_text(
            f"initial-state parameters (vx vy vz wx wy wz), float64 LE\n"
            f"values: {outcome.best_params.tolist()}\n")
    print(f"{args.scenario} {settings.method} {len(outcome.rows)} "
          f"{outcome.evals} {_fmt(outcome.best_loss)} {wall:.1f}")
    return EXIT_OK if outcome.status == "converged" else EXIT_BUDGET


def cmd_gradcheck(args) -> int:
    from .gradchecks import run_gradcheck

    file_cfg = _load_config_file(args)
    seed = int(_resolve(args, file_cfg, "seed", 0))
    steps = int(_resolve(args, file_cfg, "steps", 20))
    samples = int(_resolve(args, file_cfg, "samples", 20))
    if steps > 50:
        print("error: gradcheck supports at most 50 steps", file=sys.stderr)
        return EXIT_USAGE
    out = _outdir(args, "gradcheck")
    _echo_config(out, {"command": "gradcheck", "scenario": args.scenario,
                       "steps": steps, "samples": samples, "seed": seed})
    reports = run_gradcheck(args.scenario, samples, steps, seed)
    lines = ["name,group,samples,resampled,max_rel_err,tolerance,passed"]
    ok = True
    for r in reports:
        ok &= r.passed
        lines.append(f"{r.name},{r.group},{r.samples},{r.resampled},"
                     f"{_fmt(r.max_rel_err)},{_fmt(r.tolerance)},{r.passed}")
        print(f"{r.name:12s} {r.group:18s} samples={r.samples} "
              f"resampled={r.resampled} max_rel_err={r.max_rel_err:.3e} "
              f"tol={r.tolerance:.0e} {'PASS' if r.passed else 'FAIL'}")
    (out / "gradcheck.csv").write_text("\n".join(lines) + "\n")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_benchmark(args) -> int:
    from .bench import (LARGE_CONTROLLER, SMALL_CONTROLLER,
                        bench_rows_to_csv, model_seconds_per_day,
                        run_benchmark)

    file_cfg = _load_config_file(args)
    seed = int(_resolve(args, file_cfg, "seed", 0))
    workers = int(_resolve(args, file_cfg, "workers", _default_workers()))
    batches = tuple(args.batch) if args.batch else (1, 128)
    duration = float(_resolve(args, file_cfg, "duration", 10.0))
    out = _outdir(args, "benchmark")
    _echo_config(out, {"command": "benchmark", "batches": list(batches),
                       "duration": duration, "workers": workers,
                       "compare_backends": bool(args.compare_backends)})

    from .tape import HAVE_COMPILED, default_backend
    backends = [default_backend()]
    if args.compare_backends and HAVE_COMPILED:
        backends = ["compiled", "python"]
    for backend in backends:
        rows = run_benchmark(batches=batches,
                             controllers=(SMALL_CONTROLLER, LARGE_CONTROLLER),
                             workers=(workers,), duration=duration,
                             seed=seed, backend=backend)
        suffix = "" if backend == default_backend() else f"_{backend}"
        path = out / f"benchmark{suffix}.csv"
        path.write_text(bench_rows_to_csv(rows))
        print(f"[{backend}]")
        for r in rows:
            print(f"  batch={r.batch:4d} params={r.params:8d} "
                  f"workers={r.workers} fwd={r.fwd_s:.3f}s "
                  f"fwd+bwd={r.fwd_bwd_s:.3f}s ratio={r.ratio:.2f} "
                  f"model-s/day={model_seconds_per_day(r, duration):.3e}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "simulate":
        return cmd_simulate(args)
    if args.command == "optimize":
        return cmd_optimize(args)
    if args.command == "gradcheck":
        return cmd_gradcheck(args)
    if args.command == "benchmark":
        return cmd_benchmark(args)
    parser.error(f"unknown command {args.command!r}")
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
