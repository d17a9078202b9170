"""Quadruped: cuboid spine, four two-segment legs, eight hinge servos.

28.7 kg total with 75% in the spine; the spine can touch the ground through
four interior spheres; each leg is a shoulder hinge plus an elbow hinge
(pitch axes), 0.15 m segments with 0.03 m sphere feet.  The gait task drives
the servos (torque-limited to 4 N m) from a sine/cosine clock at 1.5 Hz and
maximizes the mean forward velocity of the spine over 10 s from a standing
start; all segment dimensions are declared desk-scale defaults.
"""

from __future__ import annotations

import numpy as np

from .. import tape as tg
from ..constraints import JointSpec, MotorSpec
from ..control import ControllerSpec, SensorChannel, SensorSuite
from ..dynamics import (
    BodyParams,
    BodyState,
    Sphere,
    WorldState,
    solid_cuboid_inertia,
)
from .base import ModelDefinition, StepBuild, TaskDefinition

TOTAL_MASS = 28.7
SPINE_MASS = 0.75 * TOTAL_MASS          # 21.525 kg
SEGMENT_MASS = (TOTAL_MASS - SPINE_MASS) / 8.0
SPINE_DIMS = (0.6, 0.3, 0.12)
SEGMENT_LEN = 0.15
FOOT_RADIUS = 0.03
GAIN = 30.0
GAIT_TORQUE = 4.0                       # servo torque limit for the gait task
MAX_VELOCITY = 6.0                      # rad/s
CLOCK_HZ = 1.5

_FOOT_Z = FOOT_RADIUS - 0.0005          # feet preloaded half a slop
_LOWER_COM_Z = _FOOT_Z + SEGMENT_LEN / 2
_ELBOW_Z = _FOOT_Z + SEGMENT_LEN
_UPPER_COM_Z = _ELBOW_Z + SEGMENT_LEN / 2
_SHOULDER_Z = _ELBOW_Z + SEGMENT_LEN
_SPINE_Z = _SHOULDER_Z + SPINE_DIMS[2] / 2

_LEG_XY = [(0.25, 0.12), (0.25, -0.12), (-0.25, 0.12), (-0.25, -0.12)]


def build_quadruped() -> ModelDefinition:
    spine = BodyParams(
        mass=SPINE_MASS,
        inertia_body=solid_cuboid_inertia(SPINE_MASS, SPINE_DIMS),
        collision_spheres=[
            Sphere((sx, sy, -SPINE_DIMS[2] / 2), 0.05)
            for sx in (0.2, -0.2) for sy in (0.09, -0.09)],
        friction=0.1, restitution=0.0, name="spine")
    bodies = [spine]
    joints: list[JointSpec] = []
    motors: list[MotorSpec] = []
    states = [BodyState.at_rest(np.array([0.0, 0.0, _SPINE_Z]))]
    seg_inertia = solid_cuboid_inertia(SEGMENT_MASS, (0.03, 0.03, SEGMENT_LEN))
    for li, (lx, ly) in enumerate(_LEG_XY):
        upper = BodyParams(mass=SEGMENT_MASS, inertia_body=seg_inertia,
                           name=f"leg{li}.upper")
        lower = BodyParams(
            mass=SEGMENT_MASS, inertia_body=seg_inertia,
            collision_spheres=[Sphere((0.0, 0.0, -SEGMENT_LEN / 2), FOOT_RADIUS)],
            friction=1.0, restitution=0.0, name=f"leg{li}.lower")
        upper_idx = len(bodies)
        bodies.extend([upper, lower])
        states.append(BodyState.at_rest(np.array([lx, ly, _UPPER_COM_Z])))
        states.append(BodyState.at_rest(np.array([lx, ly, _LOWER_COM_Z])))
        shoulder_j = len(joints)
        joints.append(JointSpec(
            parent=0, child=upper_idx, anchor=(lx, ly, _SHOULDER_Z),
            axes=((0.0, 1.0, 0.0),), name=f"leg{li}.shoulder"))
        joints.append(JointSpec(
            parent=upper_idx, child=upper_idx + 1, anchor=(lx, ly, _ELBOW_Z),
            axes=((0.0, 1.0, 0.0),), name=f"leg{li}.elbow"))
        for dj in (0, 1):
            motors.append(MotorSpec(
                joint=shoulder_j + dj, axis=0, gain=GAIN,
                max_torque=GAIT_TORQUE, max_velocity=MAX_VELOCITY,
                name=f"leg{li}.{'shoulder' if dj == 0 else 'elbow'}"))
    build = WorldState(states)
    # default proprioceptive suite; the gait task overrides with clock-only
    default_suite = SensorSuite((
        SensorChannel("joint_angles"), SensorChannel("joint_velocities"),
        SensorChannel("orientation"), SensorChannel("angular_velocity"),
        SensorChannel("linear_velocity"), SensorChannel("height"),
        SensorChannel("contact_masks"), SensorChannel("prev_targets"),
    ))
    return ModelDefinition(
        name="quadruped", bodies=bodies, build_world=build, joints=joints,
        motors=motors, sensors=default_suite, sphere_sphere=False)


def _forward_speed_cost(sb: StepBuild):
    # negated mean forward (+x) spine velocity: lower loss = faster gait
    return tg.neg(tg.slice_cols(sb.world_out[0].v, 0, 1))


def _metrics(result) -> dict:
    x0 = result.checkpoints[0]["state"][0][0][0, 0]
    x1 = result.final_state[0][0][0, 0]
    duration = result.n_steps * 0.01
    return {
        "mean_forward_speed": float(-result.step_costs.mean()),
        "displacement_speed": float((x1 - x0) / duration),
        "final_height": float(result.final_state[0][0][0, 2]),
        "max_rotation_error": result.max_rotation_error,
    }


def quadruped_gait_task() -> TaskDefinition:
    return TaskDefinition(
        name="quadruped-gait",
        model=build_quadruped(),
        duration=10.0,
        batch=1,
        controller=ControllerSpec((2, 128, 128, 8), skip_input_to_output=True),
        sensor_suite=SensorSuite((SensorChannel("clock", frequency=CLOCK_HZ),)),
        step_cost=_forward_speed_cost,
        clock_frequency=CLOCK_HZ,
        metrics_fn=_metrics,
        success_fn=lambda m: m["mean_forward_speed"] > 0.1,
        method="adam",
        learning_rate=0.01,
        iterations=500,
        alpha=0.99,
        clip_norm=1.0,
        cma_sigma=0.05,
        engine_overrides={"pgs_iterations": 32},
    )
