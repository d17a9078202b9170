"""Rollout execution: one recorded step replayed T times, with BPTT.

A :class:`RolloutProgram` owns a finalized tape holding exactly one engine
step (sensors -> controller -> physics -> objective terms).  Running a
rollout replays that tape T times, carrying the body states (and any carried
auxiliary slots) across step boundaries on the host and checkpointing the
step inputs.  The backward pass walks the steps in reverse, recomputes each
step's forward values from its checkpoint, seeds the objective and downstream
state adjoints, and accumulates parameter gradients; the adjoint crossing
each step boundary (state, not parameters) is scaled by the decay factor
alpha, so alpha=1 is the exact gradient of the unrolled trace.

The rollout loss is the mean of the per-step cost over steps and batch plus
the batch mean of the terminal cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tape as tg
from .control import ControllerLeaves, ParamVector
from .dynamics import BodyT, WorldState
from .solver import EngineContext
from .tape import Tensor


class RolloutNaNError(RuntimeError):
    """Loss or state became NaN; carries the step index and channel name."""

    def __init__(self, step: int, channel: str):
        super().__init__(f"NaN at step {step} in {channel}")
        self.step = step
        self.channel = channel


@dataclass
class AuxSlot:
    """Non-body leaf fed each step: scheduled (clock), constant (target),
    or carried from one of the step's outputs (previous motor targets)."""
    name: str
    leaf: Tensor
    update: Callable[[int, float], np.ndarray] | None = None
    carry_from: Tensor | None = None


@dataclass
class RolloutProgram:
    tape: tg.Tape
    ctx: EngineContext
    state_in: list[BodyT]
    state_out: list[BodyT]
    aux: list[AuxSlot] = field(default_factory=list)
    step_cost: Tensor | None = None          # (B,1) per-robot cost, post-step
    terminal_cost: Tensor | None = None      # (B,1), seeded on the last step
    controller: ControllerLeaves | None = None
    sensors: Tensor | None = None
    targets: Tensor | None = None
    depth_tensors: list[Tensor] = field(default_factory=list)
    rotation_tensors: list[Tensor] = field(default_factory=list)
    monitors: dict[str, Tensor] = field(default_factory=dict)

    def __post_init__(self):
        self.tape.finalize()
        self.dynamic = [i for i, c in enumerate(self.ctx.consts)
                        if not c.params.static]

    @property
    def batch(self) -> int:
        return self.ctx.batch

    def aux_slot(self, name: str) -> AuxSlot:
        for slot in self.aux:
            if slot.name == name:
                return slot
        raise KeyError(f"no aux slot {name!r}")

    # -- state packing -------------------------------------------------------

    def write_state(self, state: list[tuple]) -> None:
        for i in self.dynamic:
            x, r, v, w = state[i]
            body = self.state_in[i]
            body.x.set_value(x)
            body.R.set_value(r)
            body.v.set_value(v)
            body.w.set_value(w)

    def read_state_out(self) -> list[tuple]:
        out = []
        for i, body in enumerate(self.state_out):
            out.append((body.x.value.copy(), body.R.value.copy(),
                        body.v.value.copy(), body.w.value.copy()))
        return out

    def state_template(self, world: WorldState) -> list[tuple]:
        """Tile a host world into batched state arrays."""
        b = self.batch
        out = []
        for body in world.bodies:
            out.append((
                np.broadcast_to(body.position, (b, 3)).copy(),
                np.broadcast_to(body.rotation, (b, 3, 3)).copy(),
                np.broadcast_to(body.linear_velocity, (b, 3)).copy(),
                np.broadcast_to(body.angular_velocity, (b, 3)).copy()))
        return out


@dataclass
class RolloutResult:
    loss: float
    n_steps: int
    step_costs: np.ndarray                 # (T, B)
    terminal_costs: np.ndarray | None      # (B,)
    final_state: list[tuple]
    checkpoints: list[dict]                # per-step leaf snapshots
    min_abs_depth: float
    max_depth: float
    sensor_trace: np.ndarray | None = None
    target_trace: np.ndarray | None = None
    max_rotation_error: float = 0.0
    monitors: dict = field(default_factory=dict)   # name -> (T, B) array


@dataclass
class GradientBundle:
    controller: np.ndarray | None
    motor_gains: np.ndarray
    state0: list[tuple]                    # adjoints of the initial state

    def ravel_controller(self) -> np.ndarray:
        return self.controller


def _snapshot(program: RolloutProgram, state) -> dict:
    snap = {"state": [tuple(a.copy() for a in s) for s in state]}
    for slot in program.aux:
        snap[slot.name] = slot.leaf.value.copy()
    return snap


def _restore(program: RolloutProgram, snap: dict) -> None:
    program.write_state(snap["state"])
    for slot in program.aux:
        slot.leaf.set_value(snap[slot.name])


def _nan_channel(program: RolloutProgram, state) -> str:
    names = ("position", "rotation", "linear_velocity", "angular_velocity")
    for i in program.dynamic:
        for name, arr in zip(names, state[i]):
            if np.isnan(arr).any():
                return f"body{i}.{name}"
    return "objective"


def rollout(program: RolloutProgram, n_steps: int, initial_state: list[tuple],
            params: ParamVector | None = None, trace: bool = False
            ) -> RolloutResult:
    """Forward unroll with per-step checkpoints; raises on NaN."""
    if params is not None:
        if program.controller is None:
            raise tg.ContractError("program has no controller parameters")
        program.controller.write(params)
    tape = program.tape
    state = [tuple(np.array(a, dtype=np.float64) for a in s)
             for s in initial_state]
    step_costs = np.zeros((n_steps, program.batch))
    checkpoints: list[dict] = []
    sensor_trace = [] if (trace and program.sensors is not None) else None
    target_trace = [] if (trace and program.targets is not None) else None
    monitor_traces = {name: np.zeros((n_steps, program.batch))
                      for name in program.monitors}
    min_depth, max_depth, max_rot_err = np.inf, -np.inf, 0.0

    for t_idx in range(n_steps):
        program.write_state(state)
        for slot in program.aux:
            if slot.update is not None:
                slot.leaf.set_value(slot.update(t_idx, program.ctx.config.dt))
        checkpoints.append(_snapshot(program, state))
        tape.run_forward()
        if program.step_cost is not None:
            cost = program.step_cost.value[:, 0]
            step_costs[t_idx] = cost
            if np.isnan(cost).any():
                raise RolloutNaNError(t_idx, _nan_channel(program, state))
        new_state = program.read_state_out()
        if any(np.isnan(a).any() for s in new_state for a in s):
            raise RolloutNaNError(t_idx, _nan_channel(program, new_state))
        for d in program.depth_tensors:
            vals = d.value
            min_depth = min(min_depth, np.abs(vals).min())
            max_depth = max(max_depth, vals.max())
        for r in program.rotation_tensors:
            rv = r.value
            err = rv @ np.swapaxes(rv, 1, 2) - np.eye(3)
            max_rot_err = max(max_rot_err, np.abs(err).max())
        for name, tensor in program.monitors.items():
            monitor_traces[name][t_idx] = tensor.value[:, 0]
        if sensor_trace is not None:
            sensor_trace.append(program.sensors.value.copy())
        if target_trace is not None:
            target_trace.append(program.targets.value.copy())
        for slot in program.aux:
            if slot.carry_from is not None:
                slot.leaf.set_value(slot.carry_from.value)
        state = new_state

    loss = float(step_costs.mean()) if program.step_cost is not None else 0.0
    terminal = None
    if program.terminal_cost is not None:
        terminal = program.terminal_cost.value[:, 0].copy()
        if np.isnan(terminal).any():
            raise RolloutNaNError(n_steps - 1, "terminal objective")
        loss += float(terminal.mean())
    return RolloutResult(
        loss=loss, n_steps=n_steps, step_costs=step_costs,
        terminal_costs=terminal, final_state=state, checkpoints=checkpoints,
        min_abs_depth=float(min_depth), max_depth=float(max_depth),
        sensor_trace=np.asarray(sensor_trace) if sensor_trace else None,
        target_trace=np.asarray(target_trace) if target_trace else None,
        max_rotation_error=float(max_rot_err), monitors=monitor_traces)


def bptt_gradient(program: RolloutProgram, result: RolloutResult,
                  alpha: float = 1.0) -> GradientBundle:
    """Reverse pass over the recorded rollout with per-boundary decay alpha.

    Each step is recomputed from its checkpoint, seeded with its objective
    adjoint plus the decayed state adjoint flowing in from the next step,
    and differentiated; parameter adjoints accumulate undecayed.
    """
    tape = program.tape
    n_steps = result.n_steps
    b = program.batch
    step_w = 1.0 / (n_steps * b)
    ctrl_grad = None
    if program.controller is not None:
        ctrl_grad = np.zeros(sum(w.size + bb.size
                                 for w, bb in ((wl.value, bl.value)
                                               for wl, bl in
                                               program.controller.leaves)))
    gain_grad = np.zeros(len(program.ctx.motor_gains))
    adj_state = None           # list over dynamic bodies of (ax, ar, av, aw)
    adj_carry: dict[str, np.ndarray] = {}
    state0_grad = None

    for t_idx in range(n_steps - 1, -1, -1):
        _restore(program, result.checkpoints[t_idx])
        tape.run_forward()
        seeds = []
        if program.step_cost is not None:
            seeds.append((program.step_cost,
                          np.full((b, 1), step_w)))
        if t_idx == n_steps - 1 and program.terminal_cost is not None:
            seeds.append((program.terminal_cost, np.full((b, 1), 1.0 / b)))
        if adj_state is not None:
            for k, i in enumerate(program.dynamic):
                body = program.state_out[i]
                ax, ar, av, aw = adj_state[k]
                seeds.extend([(body.x, ax), (body.R, ar),
                              (body.v, av), (body.w, aw)])
        for name, g in adj_carry.items():
            slot = program.aux_slot(name)
            seeds.append((slot.carry_from, g))
        tape.run_backward(seeds)

        if program.controller is not None:
            ctrl_grad += program.controller.read_grad()
        for k, gain in enumerate(program.ctx.motor_gains):
            gain_grad[k] += gain.grad[0]

        adj_in = [tuple(arr.copy() for arr in
                        (program.state_in[i].x.grad, program.state_in[i].R.grad,
                         program.state_in[i].v.grad, program.state_in[i].w.grad))
                  for i in program.dynamic]
        carry_in = {slot.name: slot.leaf.grad.copy()
                    for slot in program.aux if slot.carry_from is not None}
        if t_idx == 0:
            state0_grad = adj_in
        else:
            adj_state = [tuple(alpha * a for a in s) for s in adj_in]
            adj_carry = {k: alpha * v for k, v in carry_in.items()}

    full_state0 = []
    k = 0
    for i in range(len(program.state_in)):
        if i in program.dynamic:
            full_state0.append(state0_grad[k])
            k += 1
        else:
            z = np.zeros((b, 3))
            full_state0.append((z, np.zeros((b, 3, 3)), z.copy(), z.copy()))
    return GradientBundle(controller=ctrl_grad, motor_gains=gain_grad,
                          state0=full_state0)
