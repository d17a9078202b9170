"""Fixed-iteration projected Gauss-Seidel solve and the full engine step.

The sweep loop is recorded in full: `iterations` passes over the rows in
assembly order, each row updating its impulse and the body velocities
incrementally, so the backward pass differentiates through every sweep.
Friction-row bounds are recomputed from the current parent normal impulse
inside each sweep.  There is no convergence test and no warm start; identical
inputs give identical node-for-node traces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tape as tg
from .config import EngineConfig
from .constraints import (
    EQUALITY,
    FRICTION,
    MOTOR,
    NORMAL,
    ConstraintRow,
    JointRuntime,
    JointSpec,
    JointState,
    MotorSpec,
    contact_rows,
    joint_rows,
    joint_state,
    make_joint_runtime,
    servo_row,
)
from .contacts import ContactPoint, detect_contacts
from .dynamics import (
    BodyConst,
    BodyParams,
    BodyT,
    WorldState,
    apply_external_forces,
    body_to_tape,
    gravity_const,
    integrate_semi_implicit,
    make_body_const,
    world_inertia_inverse,
)
from .tape import Tensor

_DIAG_MIN = 1e-12
INF = math.inf


@dataclass
class EngineContext:
    """Tape-resident constants for one model at a fixed batch size."""
    tape: tg.Tape
    batch: int
    config: EngineConfig
    body_params: list[BodyParams]
    consts: list[BodyConst]
    joints: list[JointRuntime]
    motors: list[MotorSpec]
    motor_gains: list[Tensor]          # leaf per motor, shape (1,)
    gravity: Tensor
    zero_col: Tensor
    one_col: Tensor
    sphere_sphere: bool = True

    @property
    def n_motors(self) -> int:
        return len(self.motors)


def make_context(tape: tg.Tape, bodies: list[BodyParams],
                 joints: list[JointSpec], motors: list[MotorSpec],
                 build_world: WorldState, batch: int,
                 config: EngineConfig, sphere_sphere: bool = True
                 ) -> EngineContext:
    zero3 = tape.const(np.zeros((batch, 3)))
    consts = [make_body_const(tape, p, batch, zero3) for p in bodies]
    build_pos = [b.position for b in build_world.bodies]
    build_rot = [b.rotation for b in build_world.bodies]
    rts = [make_joint_runtime(tape, j, build_pos, build_rot, batch)
           for j in joints]
    gains = [tape.leaf(np.array([m.gain])) for m in motors]
    return EngineContext(
        tape=tape, batch=batch, config=config, body_params=bodies,
        consts=consts, joints=rts, motors=motors, motor_gains=gains,
        gravity=gravity_const(tape, batch, config.gravity),
        zero_col=tape.const(np.zeros((batch, 1))),
        one_col=tape.const(np.ones((batch, 1))),
        sphere_sphere=sphere_sphere)


def world_to_tape(tape: tg.Tape, world: WorldState, batch: int) -> list[BodyT]:
    return [body_to_tape(tape, b, batch) for b in world.bodies]


def _dot3(a: Tensor, b: Tensor) -> Tensor:
    return tg.sum_(tg.mul(a, b), axis=-1)


def _acc(total: Tensor | None, term: Tensor) -> Tensor:
    return term if total is None else tg.add(total, term)


@dataclass
class _RowPre:
    sides: list          # (body, j_v, j_w, minv_jv, minv_jw)
    invd: Tensor


@dataclass
class StepDebug:
    """References into the step trace for tests and monitors."""
    contacts: list[ContactPoint]
    rows: list[ConstraintRow]
    impulses: list[Tensor]
    v_pred: list
    joint_states: list[JointState] = field(default_factory=list)


def assemble_rows(world: list[BodyT], ctx: EngineContext,
                  contacts: list[ContactPoint],
                  joint_states: list[JointState],
                  motor_targets: Tensor | None) -> list[ConstraintRow]:
    """All rows in fixed order: contact triples, joints, then servos."""
    cfg = ctx.config
    rows: list[ConstraintRow] = []
    for c in contacts:
        rows.extend(contact_rows(c, world, ctx.batch, cfg, len(rows)))
    for rt, js in zip(ctx.joints, joint_states):
        rows.extend(joint_rows(rt, js, world[rt.spec.parent],
                               world[rt.spec.child], ctx.batch, cfg))
    if ctx.motors and motor_targets is None:
        motor_targets = ctx.tape.const(np.zeros((ctx.batch, len(ctx.motors))))
    for k, motor in enumerate(ctx.motors):
        rt = ctx.joints[motor.joint]
        js = joint_states[motor.joint]
        target = tg.slice_cols(motor_targets, k, k + 1)
        rows.append(servo_row(motor, js.angles[motor.axis], target, cfg.dt,
                              js.axis_w[motor.axis], ctx.motor_gains[k],
                              rt.spec.parent, rt.spec.child, cfm=cfg.cfm))
    return rows


def pgs_solve(rows: list[ConstraintRow], mass_inv: list, vels: list,
              iterations: int, ctx: EngineContext
              ) -> tuple[list[Tensor], list]:
    """Projected Gauss-Seidel sweeps over the rows, fully on-tape.

    mass_inv[i] is (inv_mass scalar, I_world^-1) or None for static bodies;
    vels[i] is the predicted (v, w) pair per body and is updated in place.
    Rows whose effective diagonal falls below 1e-12 are masked inert.
    """
    tape = ctx.tape
    pre: list[_RowPre | None] = []
    for row in rows:
        sides = []
        d = None
        for body, j_v, j_w in ((row.body_a, row.j_va, row.j_wa),
                               (row.body_b, row.j_vb, row.j_wb)):
            if body < 0 or mass_inv[body] is None:
                continue
            inv_m, iw_inv = mass_inv[body]
            mv = tg.mul(j_v, inv_m) if j_v is not None else None
            mw = tg.bmm33(iw_inv, j_w) if j_w is not None else None
            if j_v is not None:
                d = _acc(d, _dot3(j_v, mv))
            if j_w is not None:
                d = _acc(d, _dot3(j_w, mw))
            sides.append((body, j_v, j_w, mv, mw))
        if d is None:
            pre.append(None)
            continue
        if row.cfm:
            d = tg.add(d, tape.scalar(row.cfm))
        invd_raw = tg.div(ctx.one_col, tg.clamp(d, _DIAG_MIN, INF))
        invd = tg.where_mask(tg.sub(d, tape.scalar(_DIAG_MIN)),
                             invd_raw, ctx.zero_col)
        pre.append(_RowPre(sides, invd))

    lam: list[Tensor] = [ctx.zero_col for _ in rows]
    for _ in range(iterations):
        for ri, row in enumerate(rows):
            p = pre[ri]
            if p is None:
                continue
            jv = None
            for body, j_v, j_w, _, _ in p.sides:
                v, w = vels[body]
                if j_v is not None:
                    jv = _acc(jv, _dot3(j_v, v))
                if j_w is not None:
                    jv = _acc(jv, _dot3(j_w, w))
            delta = tg.mul(tg.sub(row.bias, jv), p.invd)
            cand = tg.add(lam[ri], delta)
            if row.kind == EQUALITY:
                new_lam = cand
            elif row.kind == FRICTION:
                hi = tg.mul(lam[row.friction_parent], row.mu)
                new_lam = tg.clamp(cand, tg.neg(hi), hi)
            elif row.kind == NORMAL:
                new_lam = tg.clamp(cand, row.lo, row.hi)
            else:
                new_lam = tg.clamp(cand, row.lo_f, row.hi_f)
            dl = tg.sub(new_lam, lam[ri])
            lam[ri] = new_lam
            for body, _, _, mv, mw in p.sides:
                v, w = vels[body]
                if mv is not None:
                    v = tg.add(v, tg.mul(mv, dl))
                if mw is not None:
                    w = tg.add(w, tg.mul(mw, dl))
                vels[body] = (v, w)
    return lam, vels


def engine_step(ctx: EngineContext, world: list[BodyT],
                motor_targets: Tensor | None = None,
                joint_states: list[JointState] | None = None
                ) -> tuple[list[BodyT], StepDebug]:
    """One full velocity-stepping update:

    external forces -> contact candidates -> row assembly -> fixed-sweep
    projected Gauss-Seidel -> semi-implicit integration, all recorded.
    """
    cfg = ctx.config
    mass_inv = []
    vels = []
    for body, const in zip(world, ctx.consts):
        if const.params.static:
            mass_inv.append(None)
            vels.append((const.zero3, const.zero3))
        else:
            iw_inv = world_inertia_inverse(body.R, const.ib_inv)
            v_pred, w_pred = apply_external_forces(
                body, const, ctx.gravity, cfg.dt, iw_inv=iw_inv)
            mass_inv.append((const.inv_mass, iw_inv))
            vels.append((v_pred, w_pred))
    v_pred_dbg = list(vels)

    contacts = detect_contacts(world, ctx.consts, ctx.batch,
                               sphere_sphere=ctx.sphere_sphere)
    if joint_states is None:
        joint_states = [joint_state(rt, world[rt.spec.parent],
                                    world[rt.spec.child])
                        for rt in ctx.joints]
    rows = assemble_rows(world, ctx, contacts, joint_states, motor_targets)
    lam, vels = pgs_solve(rows, mass_inv, vels, cfg.pgs_iterations, ctx)

    new_world = []
    for body, const, (v_new, w_new) in zip(world, ctx.consts, vels):
        if const.params.static:
            new_world.append(body)
        else:
            new_world.append(integrate_semi_implicit(
                body, v_new, w_new, cfg.dt, cfg.renorm_iterations))
    return new_world, StepDebug(contacts, rows, lam, v_pred_dbg, joint_states)


def read_world(world: list[BodyT], consts: list[BodyConst],
               time: float, gravity_z: float, row: int = 0) -> WorldState:
    """Copy one batch row of the tape state back into a host WorldState."""
    from .dynamics import BodyState
    bodies = [BodyState(b.x.value[row].copy(), b.R.value[row].copy(),
                        b.v.value[row].copy(), b.w.value[row].copy())
              for b in world]
    return WorldState(bodies, time, np.array([0.0, 0.0, gravity_z]))
