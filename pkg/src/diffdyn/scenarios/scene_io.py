"""Scene files: JSON documents mirroring the model/task domain types.

Sections: ``bodies`` (mass, inertia, spheres, build pose, materials),
``joints``, ``motors``, ``sensors``, and ``task`` (horizon, batch,
controller layout, task inputs, engine overrides).  Units are SI
throughout.  Parse errors name the offending section and field.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..constraints import JointSpec, MotorSpec
from ..control import SensorChannel, SensorSuite
from ..dynamics import BodyParams, BodyState, Sphere, WorldState
from .base import ModelDefinition, TaskDefinition


class SceneError(ValueError):
    """Malformed scene file; message carries section and field."""


def _need(section: str, obj: dict, field: str, idx: int | None = None):
    if field not in obj:
        where = f"{section}[{idx}]" if idx is not None else section
        raise SceneError(f"scene {where}: missing field {field!r}")
    return obj[field]


def model_to_scene(model: ModelDefinition,
                   task: TaskDefinition | None = None) -> dict:
    bodies = []
    for i, (params, state) in enumerate(
            zip(model.bodies, model.build_world.bodies)):
        bodies.append({
            "name": params.name or f"body{i}",
            "mass": params.mass,
            "static": params.static,
            "inertia": np.asarray(params.inertia_body).tolist(),
            "friction": params.friction,
            "restitution": params.restitution,
            "spheres": [{"offset": list(s.offset), "radius": s.radius}
                        for s in params.collision_spheres],
            "build_position": state.position.tolist(),
            "build_rotation": state.rotation.tolist(),
        })
    joints = [{
        "name": j.name, "parent": j.parent, "child": j.child,
        "anchor": list(j.anchor), "axes": [list(a) for a in j.axes],
        "angle_limits": list(j.angle_limits) if j.angle_limits else None,
    } for j in model.joints]
    motors = [{
        "name": m.name, "joint": m.joint, "axis": m.axis, "gain": m.gain,
        "max_torque": m.max_torque, "max_velocity": m.max_velocity,
    } for m in model.motors]
    sensors = []
    if model.sensors is not None:
        sensors = [{"kind": ch.kind, "body": ch.body,
                    "frequency": ch.frequency}
                   for ch in model.sensors.channels]
    scene = {
        "name": model.name,
        "bodies": bodies,
        "joints": joints,
        "motors": motors,
        "sensors": sensors,
        "sphere_sphere": model.sphere_sphere,
    }
    if model.end_effector is not None:
        scene["end_effector"] = {"body": model.end_effector[0],
                                 "offset": list(model.end_effector[1])}
    if task is not None:
        controller = None
        if task.controller is not None:
            controller = {"layers": list(task.controller.layer_sizes),
                          "skip_input_to_output":
                              task.controller.skip_input_to_output}
        scene["task"] = {
            "name": task.name,
            "duration": task.duration,
            "batch": task.batch,
            "param_mode": task.param_mode,
            "controller": controller,
            "fixed_target": task.fixed_target.tolist()
            if task.fixed_target is not None else None,
            "clock_frequency": task.clock_frequency,
            "method": task.method,
            "learning_rate": task.learning_rate,
            "iterations": task.iterations,
            "alpha": task.alpha,
            "clip_norm": task.clip_norm,
            "engine": dict(task.engine_overrides),
        }
    return scene


def scene_to_model(scene: dict) -> ModelDefinition:
    if "bodies" not in scene:
        raise SceneError("scene: missing section 'bodies'")
    bodies, states = [], []
    for i, b in enumerate(scene["bodies"]):
        spheres = [Sphere(tuple(_need("bodies.spheres", s, "offset", i)),
                          _need("bodies.spheres", s, "radius", i))
                   for s in b.get("spheres", [])]
        try:
            bodies.append(BodyParams(
                mass=_need("bodies", b, "mass", i),
                inertia_body=np.asarray(_need("bodies", b, "inertia", i)),
                collision_spheres=spheres,
                friction=b.get("friction", 1.0),
                restitution=b.get("restitution", 0.0),
                static=b.get("static", False),
                name=b.get("name", f"body{i}")))
        except ValueError as err:
            raise SceneError(f"scene bodies[{i}]: {err}") from err
        states.append(BodyState.at_rest(
            np.asarray(_need("bodies", b, "build_position", i)),
            np.asarray(b.get("build_rotation", np.eye(3).tolist()))))
    joints = []
    for i, j in enumerate(scene.get("joints", [])):
        try:
            joints.append(JointSpec(
                parent=_need("joints", j, "parent", i),
                child=_need("joints", j, "child", i),
                anchor=tuple(_need("joints", j, "anchor", i)),
                axes=tuple(tuple(a) for a in _need("joints", j, "axes", i)),
                angle_limits=tuple(j["angle_limits"])
                if j.get("angle_limits") else None,
                name=j.get("name", f"joint{i}")))
        except ValueError as err:
            raise SceneError(f"scene joints[{i}]: {err}") from err
    motors = []
    for i, m in enumerate(scene.get("motors", [])):
        try:
            motors.append(MotorSpec(
                joint=_need("motors", m, "joint", i),
                axis=_need("motors", m, "axis", i),
                gain=_need("motors", m, "gain", i),
                max_torque=_need("motors", m, "max_torque", i),
                max_velocity=_need("motors", m, "max_velocity", i),
                name=m.get("name", f"motor{i}")))
        except ValueError as err:
            raise SceneError(f"scene motors[{i}]: {err}") from err
    suite = None
    if scene.get("sensors"):
        suite = SensorSuite(tuple(
            SensorChannel(kind=_need("sensors", ch, "kind", i),
                          body=ch.get("body", 0),
                          frequency=ch.get("frequency", 1.0))
            for i, ch in enumerate(scene["sensors"])))
    ee = None
    if "end_effector" in scene:
        ee = (scene["end_effector"]["body"],
              tuple(scene["end_effector"]["offset"]))
    try:
        return ModelDefinition(
            name=scene.get("name", "scene"),
            bodies=bodies,
            build_world=WorldState(states),
            joints=joints, motors=motors, sensors=suite,
            sphere_sphere=scene.get("sphere_sphere", True),
            end_effector=ee)
    except ValueError as err:
        raise SceneError(f"scene: {err}") from err


def save_scene(path, model: ModelDefinition,
               task: TaskDefinition | None = None) -> None:
    Path(path).write_text(
        json.dumps(model_to_scene(model, task), indent=2) + "\n")


def load_scene(path) -> ModelDefinition:
    try:
        scene = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise SceneError(f"scene: invalid JSON ({err})") from err
    return scene_to_model(scene)
