"""Model builders and task definitions for the three experiment scenarios."""

from .arm import arm_fixed_point_task, arm_random_point_task, build_arm
from .ball import ball_throw_task, build_ball
from .base import (
    ModelDefinition,
    OptimizationProblem,
    TaskDefinition,
    build_program,
)
from .quadruped import build_quadruped, quadruped_gait_task

TASKS = {
    "ball-throw": ball_throw_task,
    "arm-fixed": arm_fixed_point_task,
    "arm-random": arm_random_point_task,
    "quadruped-gait": quadruped_gait_task,
}


def get_task(name: str):
    try:
        return TASKS[name]()
    except KeyError:
        raise KeyError(
            f"unknown scenario {name!r}; choose from {sorted(TASKS)}") from None


__all__ = [
    "ModelDefinition", "TaskDefinition", "OptimizationProblem",
    "build_program", "build_ball", "ball_throw_task", "build_arm",
    "arm_fixed_point_task", "arm_random_point_task", "build_quadruped",
    "quadruped_gait_task", "TASKS", "get_task",
]
