"""Timing harness: forward vs forward+backward cost over a batch grid.

Measures wall time to simulate the quadruped for a configurable horizon with
and without the gradient, across batch sizes, controller sizes (the gait
controller and a ~1.1M-parameter variant), worker counts, and both tape
executors.  Emits ``batch, params, workers, fwd_s, fwd_bwd_s, ratio`` rows
and reports the simulated model-seconds per day of the forward pass.
"""

from __future__ import annotations

import dataclasses
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .control import ControllerSpec, init_params
from .optim import format_float
from .rollout import bptt_gradient, rollout
from .scenarios import quadruped_gait_task
from .scenarios.base import OptimizationProblem

SMALL_CONTROLLER = ControllerSpec((2, 128, 128, 8), skip_input_to_output=True)
LARGE_CONTROLLER = ControllerSpec((2, 1056, 1056, 8), skip_input_to_output=True)

BENCH_CSV_HEADER = "batch,params,workers,fwd_s,fwd_bwd_s,ratio"


@dataclass
class BenchRow:
    batch: int
    params: int
    workers: int
    fwd_s: float
    fwd_bwd_s: float

    @property
    def ratio(self) -> float:
        return self.fwd_bwd_s / self.fwd_s if self.fwd_s > 0 else float("nan")


def bench_rows_to_csv(rows: list[BenchRow]) -> str:
    lines = [BENCH_CSV_HEADER]
    for r in rows:
        lines.append(",".join([
            str(r.batch), str(r.params), str(r.workers),
            format_float(r.fwd_s), format_float(r.fwd_bwd_s),
            format_float(r.ratio)]))
    return "\n".join(lines) + "\n"


def _build_problems(controller: ControllerSpec, batch: int, workers: int,
                    backend: str) -> list[OptimizationProblem]:
    task = dataclasses.replace(quadruped_gait_task(), controller=controller)
    workers = max(1, min(workers, batch))
    sizes = [batch // workers + (1 if i < batch % workers else 0)
             for i in range(workers)]
    problems = []
    for size in sizes:
        prob = OptimizationProblem(task, batch=size)
        prob.program.tape._backend = backend
        problems.append(prob)
    return problems


def measure_case(controller: ControllerSpec, batch: int, workers: int,
                 duration: float, seed: int = 0,
                 backend: str | None = None) -> BenchRow:
    """Wall time for one simulated horizon, forward and forward+backward."""
    from .tape import default_backend
    backend = backend or default_backend()
    problems = _build_problems(controller, batch, workers, backend)
    n_steps = int(round(duration / problems[0].config.dt))
    params = problems[0].initial_params(seed)
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def forward_only():
        def run(prob):
            return rollout(prob.program, n_steps, prob.initial_state,
                           params=_pv(prob, params))
        if pool is None:
            return [run(problems[0])]
        return list(pool.map(run, problems))

    def forward_backward():
        def run(prob):
            res = rollout(prob.program, n_steps, prob.initial_state,
                          params=_pv(prob, params))
            bptt_gradient(prob.program, res, alpha=0.99)
            return res
        if pool is None:
            return [run(problems[0])]
        return list(pool.map(run, problems))

    forward_only()  # warm-up: executor preparation, allocator
    t0 = time.perf_counter()
    forward_only()
    fwd_s = time.perf_counter() - t0
    t0 = time.perf_counter()
    forward_backward()
    fwd_bwd_s = time.perf_counter() - t0
    from .control import param_count
    return BenchRow(batch=batch, params=param_count(controller),
                    workers=workers, fwd_s=fwd_s, fwd_bwd_s=fwd_bwd_s)


def _pv(prob: OptimizationProblem, data: np.ndarray):
    from .control import ParamVector
    return ParamVector(prob.task.controller, data)


def run_benchmark(batches=(1, 128), controllers=(SMALL_CONTROLLER,
                                                 LARGE_CONTROLLER),
                  workers=(1,), duration: float = 10.0, seed: int = 0,
                  backend: str | None = None) -> list[BenchRow]:
    rows = []
    for controller in controllers:
        for batch in batches:
            for w in workers:
                rows.append(measure_case(controller, batch, w, duration,
                                         seed, backend))
    return rows


def model_seconds_per_day(row: BenchRow, duration: float) -> float:
    """Simulated model-seconds per wall-clock day at this forward rate."""
    return row.batch * duration / row.fwd_s * 86400.0
