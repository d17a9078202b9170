"""Randomized finite-difference validation of rollout gradients.

Three standard checks: the ball in contact-free flight (tightest tolerance),
the ball through an active bounce sampled away from the contact-activation
boundary (|depth| > 1e-3 at every step, resampling and counting rejected
draws), and the arm with active servos.  Each reports the max relative error
per parameter group over a number of random samples.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .scenarios import arm_fixed_point_task, ball_throw_task
from .scenarios.base import OptimizationProblem
from .tape import finite_difference_gradient

BOUNDARY_MARGIN = 1e-3


@dataclass
class GradCheckReport:
    name: str
    group: str
    samples: int
    resampled: int
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def _subset_fd_error(evaluate, x0: np.ndarray, coords: np.ndarray,
                     step: float = 1e-6) -> float:
    """Max relative FD error over the chosen coordinates of x."""
    loss0, grad = evaluate(x0)

    def f_reduced(u):
        x = x0.copy()
        x[coords] += u
        loss, _ = evaluate(x)
        return loss, None

    fd = finite_difference_gradient(f_reduced, np.zeros(coords.size), step)
    tape_g = grad[coords]
    denom = np.maximum(1e-12, np.abs(fd))
    return float(np.max(np.abs(tape_g - fd) / denom))


def check_ball_flight(samples: int, steps: int, seed: int,
                      tolerance: float = 1e-5) -> GradCheckReport:
    """Contact-free ballistic arcs; gradient w.r.t. initial velocities."""
    task = dataclasses.replace(ball_throw_task(),
                               duration=steps * 0.01, iterations=1)
    prob = OptimizationProblem(task, alpha=1.0)
    rng = np.random.default_rng(np.uint64(seed))
    worst = 0.0
    for _ in range(samples):
        z0 = rng.uniform(2.0, 4.0)
        prob.initial_state[0][0][:, 2] = z0
        x0 = np.concatenate([rng.uniform(-1, 1, 3), rng.uniform(-3, 3, 3)])

        def evaluate(x):
            loss, grad, _, _ = prob.evaluate(x, with_grad=True)
            return loss, grad

        worst = max(worst, _subset_fd_error(evaluate, x0, np.arange(6)))
    return GradCheckReport("ball", "initial_velocity", samples, 0, worst,
                           tolerance)


def check_ball_bounce(samples: int, steps: int, seed: int,
                      tolerance: float = 1e-3) -> GradCheckReport:
    """One active bounce, sampled away from the activation boundary."""
    task = dataclasses.replace(ball_throw_task(),
                               duration=steps * 0.01, iterations=1)
    prob = OptimizationProblem(task, alpha=1.0)
    rng = np.random.default_rng(np.uint64(seed))
    worst = 0.0
    resampled = 0
    done = 0
    while done < samples:
        z0 = rng.uniform(0.52, 0.56)
        prob.initial_state[0][0][:, 2] = z0
        x0 = np.concatenate([rng.uniform(-1, 1, 2), rng.uniform(-1.5, -0.5, 1),
                             rng.uniform(-3, 3, 3)])

        def evaluate(x):
            loss, grad, _, res = prob.evaluate(x, with_grad=True)
            return loss, grad, res

        _, _, res = evaluate(x0)
        if res.min_abs_depth <= BOUNDARY_MARGIN or res.max_depth <= 0:
            resampled += 1
            continue

        def eval2(x):
            loss, grad, _ = evaluate(x)
            return loss, grad

        worst = max(worst, _subset_fd_error(eval2, x0, np.arange(6)))
        done += 1
    return GradCheckReport("ball-bounce", "initial_velocity", samples,
                           resampled, worst, tolerance)


def check_arm(samples: int, steps: int, seed: int,
              tolerance: float = 1e-3, n_coords: int = 8
              ) -> list[GradCheckReport]:
    """Servo-driven arm; controller weights (random subset) and motor gains."""
    task = dataclasses.replace(arm_fixed_point_task(),
                               duration=steps * 0.01, iterations=1)
    prob = OptimizationProblem(task, alpha=1.0)
    rng = np.random.default_rng(np.uint64(seed))
    worst_ctrl = 0.0
    worst_gain = 0.0
    dim = prob.dim
    n_gains = len(prob.program.ctx.motor_gains)
    for _ in range(samples):
        x0 = prob.initial_params(int(rng.integers(2**31)))
        # nonzero output layer so the servos actually drive
        out_n = 4 * 128 + 4
        x0[-out_n:] = rng.normal(0.0, 0.05, out_n)
        coords = rng.choice(dim, size=n_coords, replace=False)

        def evaluate(x):
            loss, grad, _, _ = prob.evaluate(x, with_grad=True)
            return loss, grad

        worst_ctrl = max(worst_ctrl, _subset_fd_error(evaluate, x0, coords))

        # gains enter as engine leaves; finite-difference them directly
        from .rollout import bptt_gradient, rollout as run_rollout
        from .control import ParamVector

        def eval_gains(gains):
            for leaf, gv in zip(prob.program.ctx.motor_gains, gains):
                leaf.set_value(np.array([gv]))
            res = run_rollout(prob.program, prob.n_steps, prob.initial_state,
                              params=ParamVector(task.controller, x0))
            bundle = bptt_gradient(prob.program, res, alpha=1.0)
            return res.loss, bundle.motor_gains

        g0 = np.full(n_gains, 30.0)
        _, tape_g = eval_gains(g0)
        fd = finite_difference_gradient(
            lambda gg: (eval_gains(gg)[0], None), g0, 1e-6)
        for leaf in prob.program.ctx.motor_gains:
            leaf.set_value(np.array([30.0]))
        denom = np.maximum(1e-12, np.abs(fd))
        worst_gain = max(worst_gain,
                         float(np.max(np.abs(tape_g - fd) / denom)))
    return [
        GradCheckReport("arm", "controller", samples, 0, worst_ctrl, tolerance),
        GradCheckReport("arm", "motor_gains", samples, 0, worst_gain, tolerance),
    ]


def run_gradcheck(which: str, samples: int, steps: int, seed: int
                  ) -> list[GradCheckReport]:
    reports: list[GradCheckReport] = []
    if samples <= 0:
        return reports
    if which in ("ball", "all"):
        reports.append(check_ball_flight(samples, min(steps, 50), seed))
    if which in ("ball-bounce", "all"):
        reports.append(check_ball_bounce(samples, min(steps, 50), seed))
    if which in ("arm", "all"):
        reports.extend(check_arm(samples, min(steps, 50), seed))
    return reports
