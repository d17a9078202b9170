"""Gradient-descent and Adam updates, the optimization loop, and logging.

The loop iterates rollout -> backward -> clip -> update for the gradient
methods, or population evaluation for CMA-ES, until the task's success rule
fires or the budget runs out.  Every iteration appends one convergence-log
row (``iter, evals, loss, grad_norm, wall_ms, best_loss``); with a fixed
seed and configuration the log is bit-identical between runs except for the
wall-time column.

Model evaluations are counted as forward rollouts: one per gradient
iteration, one per CMA-ES candidate.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cma import cma_es_minimize
from .config import DEFAULT_CONFIG, EngineConfig
from .scenarios.base import OptimizationProblem, TaskDefinition


@dataclass
class RolloutConfig:
    """Horizon and gradient-conditioning settings for one optimization run."""
    duration: float
    dt: float = 0.01
    batch: int = 1
    alpha: float = 0.99
    clip_norm: float = 1.0

    def __post_init__(self):
        steps = self.duration / self.dt
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("duration must be an integer number of steps")
        if self.batch < 1:
            raise ValueError("batch size must be at least 1")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("gradient decay alpha must lie in (0, 1]")


@dataclass
class OptState:
    """Parameters plus Adam moments, step counter, and loss history."""
    params: np.ndarray
    m: np.ndarray
    v: np.ndarray
    iteration: int = 0
    loss_history: list = field(default_factory=list)

    @classmethod
    def fresh(cls, params: np.ndarray) -> "OptState":
        return cls(params=params.copy(), m=np.zeros_like(params),
                   v=np.zeros_like(params))


def clip_l2(g: np.ndarray, max_norm: float) -> np.ndarray:
    """Scale g to at most max_norm; zero stays zero, direction unchanged."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = float(np.linalg.norm(g))
    if norm <= max_norm or norm == 0.0:
        return g.copy()
    return g * (max_norm / norm)


def sgd_step(params: np.ndarray, g: np.ndarray, lr: float) -> np.ndarray:
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    return params - lr * g


def adam_step(state: OptState, g: np.ndarray, lr: float,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> OptState:
    """Bias-corrected Adam update; returns the advanced state."""
    t = state.iteration + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    params = state.params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return OptState(params=params, m=m, v=v, iteration=t,
                    loss_history=state.loss_history)


@dataclass
class LogRow:
    iteration: int
    evals: int
    loss: float
    grad_norm: float
    wall_ms: float
    best_loss: float


CSV_HEADER = "iter,evals,loss,grad_norm,wall_ms,best_loss"


def format_float(x: float) -> str:
    return repr(float(x))


def rows_to_csv(rows: list[LogRow]) -> str:
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(",".join([
            str(r.iteration), str(r.evals), format_float(r.loss),
            format_float(r.grad_norm), format_float(r.wall_ms),
            format_float(r.best_loss)]))
    return "\n".join(lines) + "\n"


@dataclass
class RunSettings:
    method: str = "sgd"                 # sgd | adam | cma-es
    iterations: int = 500
    learning_rate: float = 0.1
    seed: int = 0
    alpha: float = 1.0
    clip_norm: float = 1.0
    sigma0: float = 0.3
    time_budget_s: float | None = None
    max_evals: int | None = None        # CMA-ES budget; defaults to iterations
    stop_on_success: bool = True        # halt once the task thresholds are met

    @classmethod
    def from_task(cls, task: TaskDefinition, **overrides) -> "RunSettings":
        base = dict(method=task.method, iterations=task.iterations,
                    learning_rate=task.learning_rate, alpha=task.alpha,
                    clip_norm=task.clip_norm, sigma0=task.cma_sigma)
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**base)


@dataclass
class OptimizeOutcome:
    state: OptState
    rows: list[LogRow]
    status: str                          # converged | budget | time
    evals: int
    best_loss: float
    best_params: np.ndarray
    best_metrics: dict


class ShardedProblem:
    """Splits a batched problem across worker threads, shard-index reduction.

    Task inputs are drawn for the full batch then sliced, so the sampled
    targets match the single-worker run; per-shard losses and gradients are
    combined in fixed shard order weighted by shard size.
    """

    def __init__(self, task: TaskDefinition, workers: int,
                 batch: int | None = None, config: EngineConfig | None = None,
                 alpha: float | None = None):
        total = batch or task.batch
        workers = max(1, min(workers, total))
        sizes = [total // workers + (1 if i < total % workers else 0)
                 for i in range(workers)]
        self.task = task
        self.batch = total
        self.shards = [OptimizationProblem(task, batch=s, config=config,
                                           alpha=alpha)
                       for s in sizes]
        self.sizes = sizes
        self.pool = ThreadPoolExecutor(max_workers=workers)

    @property
    def dim(self) -> int:
        return self.shards[0].dim

    def initial_params(self, seed: int) -> np.ndarray:
        return self.shards[0].initial_params(seed)

    def draw_inputs(self, rng: np.random.Generator) -> None:
        if self.task.draw_target is None:
            return
        targets = self.task.draw_target(rng, self.batch)
        pos = 0
        for shard, size in zip(self.shards, self.sizes):
            shard.program.aux_slot("target").leaf.set_value(
                targets[pos:pos + size])
            pos += size

    def evaluate(self, x: np.ndarray, with_grad: bool = False,
                 trace: bool = False):
        futures = [self.pool.submit(s.evaluate, x, with_grad, trace)
                   for s in self.shards]
        results = [f.result() for f in futures]
        w = np.asarray(self.sizes, dtype=np.float64) / self.batch
        loss = float(sum(wi * r[0] for wi, r in zip(w, results)))
        grad = None
        if with_grad:
            grad = np.zeros_like(results[0][1])
            for wi, r in zip(w, results):
                grad += wi * r[1]
        metrics: dict = {}
        for key in results[0][2]:
            vals = [r[2][key] for r in results]
            if all(isinstance(v, (int, float, np.floating)) for v in vals):
                metrics[key] = float(sum(wi * v for wi, v in zip(w, vals)))
        metrics["loss"] = loss
        return loss, grad, metrics, results[0][3]

    def success(self, metrics: dict) -> bool:
        return self.shards[0].success(metrics)


def optimize_loop(problem, settings: RunSettings) -> OptimizeOutcome:
    """Run one optimization to success or budget exhaustion."""
    if problem.dim == 0:
        x = problem.initial_params(settings.seed)
        loss, _, metrics, _ = problem.evaluate(x, with_grad=False)
        state = OptState.fresh(x)
        state.loss_history.append(loss)
        status = "converged" if problem.success(metrics) else "budget"
        return OptimizeOutcome(state, [LogRow(0, 1, loss, 0.0, 0.0, loss)],
                               status, 1, loss, x, metrics)
    if settings.method in ("sgd", "adam"):
        return _gradient_loop(problem, settings)
    if settings.method == "cma-es":
        return _cma_loop(problem, settings)
    raise ValueError(f"unknown method {settings.method!r}")


def _gradient_loop(problem, settings: RunSettings) -> OptimizeOutcome:
    rng = np.random.default_rng(np.uint64(settings.seed))
    state = OptState.fresh(problem.initial_params(settings.seed))
    rows: list[LogRow] = []
    best_loss = np.inf
    best_params = state.params.copy()
    best_metrics: dict = {}
    evals = 0
    status = "budget"
    t_start = time.perf_counter()

    for it in range(settings.iterations):
        t0 = time.perf_counter()
        problem.draw_inputs(rng)
        loss, grad, metrics, _ = problem.evaluate(state.params, with_grad=True)
        evals += 1
        raw_norm = float(np.linalg.norm(grad))
        if loss < best_loss:
            best_loss, best_params = loss, state.params.copy()
            best_metrics = metrics
        state.loss_history.append(loss)
        rows.append(LogRow(it, evals, loss, raw_norm,
                           (time.perf_counter() - t0) * 1e3, best_loss))
        if problem.success(metrics):
            status = "converged"
            if settings.stop_on_success:
                break
        g = clip_l2(grad, settings.clip_norm)
        if settings.method == "sgd":
            state = OptState(sgd_step(state.params, g, settings.learning_rate),
                             state.m, state.v, state.iteration + 1,
                             state.loss_history)
        else:
            state = adam_step(state, g, settings.learning_rate)
        if settings.time_budget_s is not None and \
                time.perf_counter() - t_start > settings.time_budget_s:
            status = "time"
            break
    state.params = best_params.copy()
    return OptimizeOutcome(state, rows, status, evals, best_loss,
                           best_params, best_metrics)


def _cma_loop(problem, settings: RunSettings) -> OptimizeOutcome:
    rng = np.random.default_rng(np.uint64(settings.seed))
    x0 = problem.initial_params(settings.seed)
    rows: list[LogRow] = []
    state = OptState.fresh(x0)
    hit: dict = {"metrics": {}, "status": "budget"}
    max_evals = settings.max_evals or settings.iterations
    t_start = time.perf_counter()
    counter = {"evals": 0, "gen": 0, "t0": time.perf_counter(),
               "best": np.inf}

    def f(x: np.ndarray) -> float:
        problem.draw_inputs(rng)
        loss, _, metrics, _ = problem.evaluate(x, with_grad=False)
        counter["evals"] += 1
        if problem.success(metrics):
            hit["metrics"] = metrics
            hit["status"] = "converged"
            if settings.stop_on_success:
                raise StopIteration(loss)
        return loss

    def on_generation(gen: int, evals: int, gen_best: float, best: float):
        rows.append(LogRow(gen, evals, gen_best, 0.0,
                           (time.perf_counter() - counter["t0"]) * 1e3, best))
        counter["t0"] = time.perf_counter()
        counter["gen"] = gen
        if settings.time_budget_s is not None and \
                time.perf_counter() - t_start > settings.time_budget_s:
            hit["status"] = "time"
            return True
        return False

    x_best, f_best, evals = cma_es_minimize(
        f, x0, settings.sigma0, max_evals, settings.seed,
        on_generation=on_generation)
    state.params = x_best.copy()
    state.iteration = counter["gen"]
    if hit["status"] == "converged":
        _, _, metrics, _ = problem.evaluate(x_best, with_grad=False)
        hit["metrics"] = metrics
    return OptimizeOutcome(state, rows, hit["status"], evals, f_best,
                           x_best, hit["metrics"])
