"""Model builders: masses, motors, geometry, smoke rollouts, batch symmetry."""

import dataclasses
import math

import numpy as np
import pytest

from diffdyn.control import param_count
from diffdyn.scenarios import (
    arm_fixed_point_task,
    arm_random_point_task,
    ball_throw_task,
    build_arm,
    build_ball,
    build_quadruped,
    get_task,
    quadruped_gait_task,
)
from diffdyn.scenarios.arm import _D, FIXED_TARGET, MOUNT
from diffdyn.scenarios.base import OptimizationProblem


def test_ball_paper_values():
    model = build_ball()
    p = model.bodies[0]
    assert p.collision_spheres[0].radius == 0.5      # 1 m diameter
    assert p.friction == 1.0
    assert p.restitution == 0.5
    assert np.allclose(np.diag(p.inertia_body), 0.1)  # (2/5) m r^2


def test_ball_task_parameters():
    task = ball_throw_task()
    prob = OptimizationProblem(task)
    assert prob.dim == 6
    loss, _, m, _ = prob.evaluate(np.zeros(6))
    assert abs(m["position_error"] - 10.0) < 1e-6
    assert task.duration == 5.0 and task.batch == 1


def test_arm_paper_values():
    model = build_arm()
    assert len(model.motors) == 4
    total_mass = sum(b.mass for b in model.bodies if not b.static)
    assert total_mass == 32.0
    for m in model.motors:
        assert m.gain == 30.0
        assert m.max_torque == 30.0
        assert np.isclose(m.max_velocity, math.radians(45.0))
    # reach: shoulder anchor to end-effector tip spans 1 m at build
    ee_body, ee_off = model.end_effector
    com2 = model.build_world.bodies[ee_body].position
    tip = com2 + np.asarray(ee_off)
    assert np.isclose(np.linalg.norm(tip - MOUNT), 1.0)


def test_arm_task_controller_counts():
    assert param_count(arm_fixed_point_task().controller) == 17284
    assert param_count(arm_random_point_task().controller) == 17540


def test_arm_random_task_batch_and_steps():
    task = arm_random_point_task()
    assert task.batch == 64
    assert task.n_steps == 800
    assert task.batch * task.n_steps == 51200  # timesteps averaged per update


def test_arm_initial_distance_matches_geometry():
    task = arm_fixed_point_task()
    prob = OptimizationProblem(task)
    loss, _, m, _ = prob.evaluate(prob.initial_params(0))
    expected = np.linalg.norm(MOUNT + _D - FIXED_TARGET)
    assert abs(m["mean_distance"] - expected) < 0.02  # sags slightly if at all
    assert m["mean_distance"] > 0


def test_quadruped_paper_values():
    model = build_quadruped()
    assert len(model.motors) == 8
    total = sum(b.mass for b in model.bodies)
    assert np.isclose(total, 28.7)
    assert np.isclose(model.bodies[0].mass, 21.525)          # 75% in the spine
    assert np.isclose(model.bodies[0].mass / total, 0.75)
    assert len(model.bodies[0].collision_spheres) == 4       # interior spheres
    for m in model.motors:
        assert m.max_torque == 4.0


def test_quadruped_task_controller():
    task = quadruped_gait_task()
    assert task.controller.layer_sizes == (2, 128, 128, 8)
    assert task.controller.skip_input_to_output
    assert param_count(task.controller) == 17944
    assert task.clock_frequency == 1.5
    assert task.n_steps == 1000


@pytest.mark.slow
@pytest.mark.parametrize("name,duration", [
    ("ball-throw", 10.0), ("arm-fixed", 10.0), ("quadruped-gait", 10.0)])
def test_zero_controller_smoke(name, duration):
    """10 s with a zero controller: no NaN, orthonormal rotations, bounded
    penetration."""
    task = dataclasses.replace(get_task(name), duration=duration)
    prob = OptimizationProblem(task)
    x = prob.initial_params(0)
    if task.param_mode == "initial_state":
        x = np.zeros_like(x)
    loss, _, _, res = prob.evaluate(x)
    assert np.isfinite(loss)
    assert res.max_rotation_error < 1e-6
    slop = prob.config.slop
    if np.isfinite(res.max_depth):
        assert res.max_depth < 2 * slop


def test_quadruped_standing_start_is_still():
    task = quadruped_gait_task()
    prob = OptimizationProblem(task)
    task_short = dataclasses.replace(task, duration=1.0)
    prob = OptimizationProblem(task_short)
    loss, _, m, res = prob.evaluate(prob.initial_params(0))
    assert abs(m["mean_forward_speed"]) < 0.01
    assert res.final_state[0][0][0, 2] > 0.3   # spine stays up


def test_batch_permutation_invariance():
    """Shuffling batch elements leaves the mean loss unchanged."""
    task = dataclasses.replace(arm_random_point_task(), duration=0.3, batch=4)
    prob = OptimizationProblem(task)
    x = prob.initial_params(3)
    rng = np.random.default_rng(5)
    x[-4 * 128 - 4:] = rng.normal(0, 0.1, 4 * 128 + 4)
    targets = task.draw_target(np.random.default_rng(0), 4)

    slot = prob.program.aux_slot("target")
    slot.leaf.set_value(targets)
    loss1, _, _, _ = prob.evaluate(x)
    perm = [2, 0, 3, 1]
    slot.leaf.set_value(targets[perm])
    loss2, _, _, _ = prob.evaluate(x)
    assert abs(loss1 - loss2) < 1e-12


def test_unknown_scenario_raises():
    with pytest.raises(KeyError):
        get_task("no-such-task")
