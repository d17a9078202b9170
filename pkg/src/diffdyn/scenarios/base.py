"""Model/task definitions and the builder that turns them into programs.

A :class:`ModelDefinition` is the host-side description of a robot (bodies,
build poses, joints, motors, sensors); a :class:`TaskDefinition` adds the
objective, horizon, batch size, controller layout, task inputs, and success
rule.  ``build_program`` records the complete step (sensors -> controller ->
engine step -> objective) once and returns the replayable rollout program.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import tape as tg
from ..config import DEFAULT_CONFIG, EngineConfig
from ..constraints import JointSpec, MotorSpec
from ..control import (
    ControllerLeaves,
    ControllerSpec,
    ParamVector,
    SensorExtras,
    SensorSuite,
    clock_values,
    controller_forward,
    init_params,
    read_sensors,
)
from ..dynamics import BodyParams, BodyT, WorldState
from ..rollout import AuxSlot, GradientBundle, RolloutProgram, RolloutResult, rollout
from ..solver import engine_step, joint_state, make_context, world_to_tape
from ..tape import Tensor


@dataclass
class ModelDefinition:
    name: str
    bodies: list[BodyParams]
    build_world: WorldState
    joints: list[JointSpec] = field(default_factory=list)
    motors: list[MotorSpec] = field(default_factory=list)
    sensors: SensorSuite | None = None
    sphere_sphere: bool = True
    end_effector: tuple[int, tuple[float, float, float]] | None = None

    def __post_init__(self):
        n = len(self.bodies)
        for j in self.joints:
            if not (0 <= j.parent < n and 0 <= j.child < n):
                raise ValueError(f"joint {j.name} references missing bodies")
        for m in self.motors:
            if not 0 <= m.joint < len(self.joints):
                raise ValueError(f"motor {m.name} references missing joint")
            if m.axis >= self.joints[m.joint].dof:
                raise ValueError(f"motor {m.name} axis out of range")


@dataclass
class StepBuild:
    """Tensors available to objective hooks while the step is recorded."""
    tape: tg.Tape
    ctx: object
    world_in: list[BodyT]
    world_out: list[BodyT]
    sensors: Tensor | None
    targets: Tensor | None
    aux: dict[str, Tensor]
    joint_states: list
    ee_in: Tensor | None = None
    ee_out: Tensor | None = None
    monitors: dict = field(default_factory=dict)   # hooks may register (B,1) tensors


@dataclass
class TaskDefinition:
    name: str
    model: ModelDefinition
    duration: float
    batch: int
    controller: ControllerSpec | None = None
    sensor_suite: SensorSuite | None = None       # defaults to model.sensors
    step_cost: Callable[[StepBuild], Tensor] | None = None
    terminal_cost: Callable[[StepBuild], Tensor] | None = None
    initial_world: WorldState | None = None       # defaults to build pose
    uses_target: bool = False
    clock_frequency: float | None = None
    draw_target: Callable[[np.random.Generator, int], np.ndarray] | None = None
    fixed_target: np.ndarray | None = None
    param_mode: str = "controller"                # or "initial_state"
    initial_guess: np.ndarray | None = None       # initial-state-mode warm start
    success_fn: Callable[[dict], bool] | None = None
    metrics_fn: Callable[[RolloutResult], dict] | None = None
    # optimizer defaults, overridable from the CLI
    method: str = "sgd"
    learning_rate: float = 0.1
    iterations: int = 500
    alpha: float = 0.99
    clip_norm: float = 1.0
    init_seed: int = 0
    cma_sigma: float = 1.0
    engine_overrides: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / DEFAULT_CONFIG.dt))

    def engine_config(self, base: EngineConfig | None = None) -> EngineConfig:
        cfg = base or DEFAULT_CONFIG
        return cfg.with_(**self.engine_overrides) if self.engine_overrides else cfg


def _ee_point(model: ModelDefinition, world: list[BodyT], batch: int
              ) -> Tensor | None:
    if model.end_effector is None:
        return None
    body_idx, offset = model.end_effector
    body = world[body_idx]
    off = body.x.tape.const(
        np.broadcast_to(np.asarray(offset, float), (batch, 3)).copy())
    return tg.add(body.x, tg.bmm33(body.R, off))


def build_program(task: TaskDefinition, batch: int | None = None,
                  config: EngineConfig | None = None) -> RolloutProgram:
    model = task.model
    batch = batch or task.batch
    cfg = task.engine_config(config)
    tape = tg.Tape(dtype=cfg.dtype)
    ctx = make_context(tape, model.bodies, model.joints, model.motors,
                       model.build_world, batch, cfg,
                       sphere_sphere=model.sphere_sphere)
    start_world = task.initial_world or model.build_world
    world_in = world_to_tape(tape, start_world, batch)

    aux: list[AuxSlot] = []
    aux_tensors: dict[str, Tensor] = {}
    target_leaf = None
    if task.uses_target:
        init_target = task.fixed_target if task.fixed_target is not None \
            else np.zeros(3)
        target_leaf = tape.leaf(
            np.broadcast_to(np.asarray(init_target, float), (batch, 3)).copy())
        aux.append(AuxSlot("target", target_leaf))
        aux_tensors["target"] = target_leaf
    clock_leaf = None
    if task.clock_frequency is not None:
        freq = task.clock_frequency

        def clock_update(step, dt, _f=freq):
            return np.broadcast_to(clock_values(step * dt, _f), (batch, 2))

        clock_leaf = tape.leaf(np.broadcast_to(
            clock_values(0.0, freq), (batch, 2)).copy())
        aux.append(AuxSlot("clock", clock_leaf, update=clock_update))
        aux_tensors["clock"] = clock_leaf

    joint_states = [joint_state(rt, world_in[rt.spec.parent],
                                world_in[rt.spec.child])
                    for rt in ctx.joints]
    ee_in = _ee_point(model, world_in, batch)

    sensors = None
    targets = None
    controller = None
    suite = task.sensor_suite or model.sensors
    if task.controller is not None:
        if suite is None:
            raise ValueError(f"task {task.name} has a controller but no sensors")
        prev_targets_leaf = None
        contact_masks_leaf = None
        needs_prev = any(ch.kind == "prev_targets" for ch in suite.channels)
        needs_masks = any(ch.kind == "contact_masks" for ch in suite.channels)
        if needs_prev:
            prev_targets_leaf = tape.leaf(np.zeros((batch, len(model.motors))))
        extras = SensorExtras(
            target=target_leaf, end_effector=ee_in, clock=clock_leaf,
            prev_targets=prev_targets_leaf)
        if needs_masks:
            # carried from the previous step's contact detection
            n_contacts = sum(len(b.collision_spheres) for b in model.bodies)
            contact_masks_leaf = tape.leaf(np.zeros((batch, n_contacts)))
            extras.contact_masks = contact_masks_leaf
        sensors = read_sensors(suite, world_in, joint_states, extras)
        controller = ControllerLeaves(tape, task.controller)
        targets = controller_forward(task.controller, controller, sensors)
        if needs_prev:
            aux.append(AuxSlot("prev_targets", prev_targets_leaf,
                               carry_from=targets))

    world_out, dbg = engine_step(ctx, world_in, targets, joint_states)
    if task.controller is not None and suite and \
            any(ch.kind == "contact_masks" for ch in suite.channels):
        masks = tg.concat_many([c.active for c in dbg.contacts])
        aux.append(AuxSlot("contact_masks", contact_masks_leaf,
                           carry_from=masks))

    ee_out = _ee_point(model, world_out, batch)
    sb = StepBuild(tape=tape, ctx=ctx, world_in=world_in, world_out=world_out,
                   sensors=sensors, targets=targets, aux=aux_tensors,
                   joint_states=dbg.joint_states, ee_in=ee_in, ee_out=ee_out)
    step_cost = task.step_cost(sb) if task.step_cost else None
    terminal_cost = task.terminal_cost(sb) if task.terminal_cost else None

    program = RolloutProgram(
        tape=tape, ctx=ctx, state_in=world_in, state_out=world_out,
        aux=aux, step_cost=step_cost, terminal_cost=terminal_cost,
        controller=controller, sensors=sensors, targets=targets,
        depth_tensors=[c.depth for c in dbg.contacts],
        rotation_tensors=[world_out[i].R for i, p in enumerate(model.bodies)
                          if not p.static],
        monitors=sb.monitors)
    return program


class OptimizationProblem:
    """A task bound to a program: flat-vector evaluate with optional gradient."""

    def __init__(self, task: TaskDefinition, batch: int | None = None,
                 config: EngineConfig | None = None, alpha: float | None = None):
        self.task = task
        self.config = task.engine_config(config)
        self.program = build_program(task, batch=batch, config=config)
        self.batch = self.program.batch
        self.n_steps = int(round(task.duration / self.config.dt))
        start = task.initial_world or task.model.build_world
        self.initial_state = self.program.state_template(start)
        self.alpha = task.alpha if alpha is None else alpha

    @property
    def dim(self) -> int:
        if self.task.param_mode == "initial_state":
            return 6
        from ..control import param_count
        return param_count(self.task.controller)

    def initial_params(self, seed: int) -> np.ndarray:
        if self.task.param_mode == "initial_state":
            if self.task.initial_guess is not None:
                return self.task.initial_guess.copy()
            return np.zeros(6)
        return init_params(self.task.controller, seed).data.copy()

    def draw_inputs(self, rng: np.random.Generator) -> None:
        """Resample per-batch-element task inputs (random-target tasks)."""
        if self.task.draw_target is not None:
            targets = self.task.draw_target(rng, self.batch)
            self.program.aux_slot("target").leaf.set_value(targets)

    def _state_for(self, x: np.ndarray) -> list[tuple]:
        state = [tuple(a.copy() for a in s) for s in self.initial_state]
        if self.task.param_mode == "initial_state":
            xs, rs, vs, ws = state[0]
            vs[:] = x[:3]
            ws[:] = x[3:6]
            state[0] = (xs, rs, vs, ws)
        return state

    def evaluate(self, x: np.ndarray, with_grad: bool = False,
                 trace: bool = False):
        """Returns (loss, grad | None, metrics dict, result)."""
        params = None
        if self.task.param_mode == "controller":
            params = ParamVector(self.task.controller, x)
        result = rollout(self.program, self.n_steps, self._state_for(x),
                         params=params, trace=trace)
        grad = None
        if with_grad:
            from ..rollout import bptt_gradient
            bundle = bptt_gradient(self.program, result, self.alpha)
            if self.task.param_mode == "initial_state":
                _, _, av, aw = bundle.state0[0]
                grad = np.concatenate([av.sum(axis=0), aw.sum(axis=0)])
            else:
                grad = bundle.controller
        metrics = self.task.metrics_fn(result) if self.task.metrics_fn else {}
        metrics["loss"] = result.loss
        return result.loss, grad, metrics, result

    def success(self, metrics: dict) -> bool:
        if self.task.success_fn is None:
            return False
        return bool(self.task.success_fn(metrics))
