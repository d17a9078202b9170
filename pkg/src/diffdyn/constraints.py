"""Constraint rows: contacts, joint anchors and locks, and servo motors.

One :class:`ConstraintRow` is a single scalar row of the velocity-stepping
complementarity problem.  The Jacobian is stored as up to four (B,3) blocks
over (v_a, w_a, v_b, w_b); ``body == -1`` marks the static environment and
drops that side.  Sign convention: rows are built so that ``J v`` is the time
derivative of the (positive) constraint error they control, and biases drive
that derivative toward the Baumgarte-stabilized target.

Joint angles are measured by encoders fixed at model build time: each joint
stores its build axes and reference directions, and angles are recovered from
the relative motion matrix with a branch-free two-argument arctangent
(singular only at half a turn, outside the servo workspace).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tape as tg
from .config import EngineConfig
from .dynamics import BodyConst, BodyT
from .tape import Tensor

_ATAN2_EPS = 1e-9
INF = math.inf

NORMAL = "normal"
FRICTION = "friction"
EQUALITY = "equality"
MOTOR = "motor"


@dataclass(frozen=True)
class JointSpec:
    """Ball anchor plus 1 (hinge) or 2 (universal) rotation axes.

    Axes and anchor are given in world coordinates at the build pose; the
    per-body local frames are captured when the joint runtime is built.
    Angle limits are stored for model descriptions but do not emit rows.
    """
    parent: int
    child: int
    anchor: tuple[float, float, float]
    axes: tuple[tuple[float, float, float], ...]
    angle_limits: tuple[float, float] | None = None
    name: str = ""

    def __post_init__(self):
        if len(self.axes) not in (1, 2):
            raise ValueError("joint needs 1 (hinge) or 2 (universal) axes")
        for ax in self.axes:
            if abs(np.linalg.norm(ax) - 1.0) > 1e-9:
                raise ValueError(f"joint axis {ax} must be unit length")
        if len(self.axes) == 2:
            if abs(np.dot(self.axes[0], self.axes[1])) > 1e-9:
                raise ValueError("universal joint axes must be orthogonal")

    @property
    def dof(self) -> int:
        return len(self.axes)


@dataclass(frozen=True)
class MotorSpec:
    """Servo on one joint axis: gain [1/s], torque [N m], velocity [rad/s]."""
    joint: int
    axis: int
    gain: float
    max_torque: float
    max_velocity: float
    name: str = ""

    def __post_init__(self):
        if self.gain <= 0 or self.max_torque <= 0 or self.max_velocity <= 0:
            raise ValueError("servo gain, max torque and max velocity must be > 0")


@dataclass
class ConstraintRow:
    body_a: int
    body_b: int
    j_va: Tensor | None
    j_wa: Tensor | None
    j_vb: Tensor | None
    j_wb: Tensor | None
    bias: Tensor
    kind: str
    lo: Tensor | None = None        # (B,1); None with lo_f/hi_f scalar bounds
    hi: Tensor | None = None
    lo_f: float = -INF
    hi_f: float = INF
    cfm: float = 0.0
    friction_parent: int | None = None
    mu: float = 0.0
    label: str = ""


def _dot3(a: Tensor, b: Tensor) -> Tensor:
    return tg.sum_(tg.mul(a, b), axis=-1)


def atan2_branchless(s: Tensor, c: Tensor) -> Tensor:
    """atan2 via the half-angle identity, valid away from +-pi."""
    r = tg.sqrt(tg.add(tg.mul(s, s), tg.mul(c, c)))
    denom = tg.clamp(tg.add(r, c), _ATAN2_EPS, INF)
    return tg.mul(tg.atan(tg.div(s, denom)), 2.0)


def _orthogonal_reference(axis: np.ndarray) -> np.ndarray:
    """Deterministic unit vector orthogonal to axis (smallest-component rule)."""
    helper = np.zeros(3)
    helper[np.argmin(np.abs(axis))] = 1.0
    u = np.cross(axis, helper)
    return u / np.linalg.norm(u)


@dataclass
class JointRuntime:
    """Build-pose constants for one joint on a given tape."""
    spec: JointSpec
    anchor_loc_p: Tensor       # (B,3) parent-frame anchor
    anchor_loc_c: Tensor
    rpb_t: Tensor              # (B,3,3) build rotation transposes
    rcb_t: Tensor
    axis1_b: Tensor            # (B,3) build-world axes / references
    axis2_b: Tensor | None     # universal second axis
    lock_b: list[Tensor]       # hinge lock directions (build world)
    ref_b: Tensor              # encoder reference (hinge) or axis2 (universal)
    axis1_np: np.ndarray
    axis2_np: np.ndarray | None


@dataclass
class JointState:
    """Per-step tensors shared between the solver rows and the sensors."""
    m_p: Tensor                # (B,3,3) parent motion since build
    m_c: Tensor
    axis_w: list[Tensor]       # current world axes, one per dof
    angles: list[Tensor]       # (B,1) per dof
    rates: list[Tensor]        # (B,1) per dof


def make_joint_runtime(tape: tg.Tape, spec: JointSpec,
                       build_positions: list[np.ndarray],
                       build_rotations: list[np.ndarray],
                       batch: int) -> JointRuntime:
    anchor = np.asarray(spec.anchor, dtype=np.float64)
    a1 = np.asarray(spec.axes[0], dtype=np.float64)
    a2 = np.asarray(spec.axes[1], dtype=np.float64) if spec.dof == 2 else None

    def tile(v):
        return tape.const(np.broadcast_to(v, (batch,) + v.shape).copy())

    rp, rc = build_rotations[spec.parent], build_rotations[spec.child]
    xp, xc = build_positions[spec.parent], build_positions[spec.child]
    lock = []
    if spec.dof == 1:
        b1 = _orthogonal_reference(a1)
        b2 = np.cross(a1, b1)
        lock = [tile(b1), tile(b2)]
        ref = tile(b1)
    else:
        ref = tile(a2)
    return JointRuntime(
        spec=spec,
        anchor_loc_p=tile(rp.T @ (anchor - xp)),
        anchor_loc_c=tile(rc.T @ (anchor - xc)),
        rpb_t=tile(rp.T), rcb_t=tile(rc.T),
        axis1_b=tile(a1), axis2_b=tile(a2) if a2 is not None else None,
        lock_b=lock, ref_b=ref, axis1_np=a1, axis2_np=a2)


def joint_state(rt: JointRuntime, parent: BodyT, child: BodyT) -> JointState:
    """Current axes, encoder angles and rates for one joint."""
    m_p = tg.bmm33(parent.R, rt.rpb_t)
    m_c = tg.bmm33(child.R, rt.rcb_t)
    d = tg.bmm33(tg.transpose(m_p), m_c)
    w_rel = tg.sub(child.w, parent.w)
    axis1_w = tg.bmm33(m_p, rt.axis1_b)

    if rt.spec.dof == 1:
        # rotation of the child about the hinge axis, from the reference ray
        u_moved = tg.bmm33(d, rt.ref_b)
        s = _dot3(tg.cross3(rt.ref_b, u_moved), rt.axis1_b)
        c = _dot3(rt.ref_b, u_moved)
        theta = atan2_branchless(s, c)
        rate = _dot3(w_rel, axis1_w)
        return JointState(m_p, m_c, [axis1_w], [theta], [rate])

    axis2_w = tg.bmm33(m_c, rt.axis2_b)
    a2_moved = tg.bmm33(d, rt.axis2_b)
    s1 = _dot3(tg.cross3(rt.axis2_b, a2_moved), rt.axis1_b)
    c1 = _dot3(rt.axis2_b, a2_moved)
    theta1 = atan2_branchless(s1, c1)
    a1_back = tg.bmm33(tg.transpose(d), rt.axis1_b)
    s2 = _dot3(tg.cross3(rt.axis1_b, a1_back), rt.axis2_b)
    c2 = _dot3(rt.axis1_b, a1_back)
    theta2 = tg.neg(atan2_branchless(s2, c2))
    rate1 = _dot3(w_rel, axis1_w)
    rate2 = _dot3(w_rel, axis2_w)
    return JointState(m_p, m_c, [axis1_w, axis2_w],
                      [theta1, theta2], [rate1, rate2])


def joint_rows(rt: JointRuntime, state: JointState, parent: BodyT,
               child: BodyT, batch: int, cfg: EngineConfig) -> list[ConstraintRow]:
    """3 anchor rows plus 1 (universal) or 2 (hinge) angular lock rows."""
    tape = parent.x.tape
    beta_dt = cfg.baumgarte / cfg.dt
    spec = rt.spec
    rows: list[ConstraintRow] = []

    anchor_p = tg.add(parent.x, tg.bmm33(parent.R, rt.anchor_loc_p))
    anchor_c = tg.add(child.x, tg.bmm33(child.R, rt.anchor_loc_c))
    r_p = tg.sub(anchor_p, parent.x)
    r_c = tg.sub(anchor_c, child.x)
    err = tg.sub(anchor_p, anchor_c)

    basis = np.eye(3)
    for k in range(3):
        e_k = tape.const(np.broadcast_to(basis[k], (batch, 3)).copy())
        rows.append(ConstraintRow(
            body_a=spec.parent, body_b=spec.child,
            j_va=e_k, j_wa=tg.cross3(r_p, e_k),
            j_vb=tg.neg(e_k), j_wb=tg.neg(tg.cross3(r_c, e_k)),
            bias=tg.mul(tg.slice_cols(err, k, k + 1), -beta_dt),
            kind=EQUALITY, cfm=cfg.cfm, label=f"{spec.name}.anchor{k}"))

    if spec.dof == 1:
        a_p = state.axis_w[0]
        a_c = tg.bmm33(state.m_c, rt.axis1_b)
        tilt = tg.cross3(a_p, a_c)
        for k, b_b in enumerate(rt.lock_b):
            b_w = tg.bmm33(state.m_p, b_b)
            rows.append(ConstraintRow(
                body_a=spec.parent, body_b=spec.child,
                j_va=None, j_wa=tg.neg(b_w), j_vb=None, j_wb=b_w,
                bias=tg.mul(_dot3(tilt, b_w), -beta_dt),
                kind=EQUALITY, cfm=cfg.cfm, label=f"{spec.name}.lock{k}"))
    else:
        a1_w, a2_w = state.axis_w
        u = tg.cross3(a1_w, a2_w)
        rows.append(ConstraintRow(
            body_a=spec.parent, body_b=spec.child,
            j_va=None, j_wa=u, j_vb=None, j_wb=tg.neg(u),
            bias=tg.mul(_dot3(a1_w, a2_w), -beta_dt),
            kind=EQUALITY, cfm=cfg.cfm, label=f"{spec.name}.lock"))
    return rows


def servo_row(motor: MotorSpec, theta: Tensor, theta_target: Tensor,
              dt: float, axis_w: Tensor, gain: Tensor,
              parent: int, child: int, cfm: float = 0.0) -> ConstraintRow:
    """Velocity-motor row: drive the joint rate toward the clamped setpoint.

    Desired rate v* = clamp(K (theta_target - theta), -v_max, v_max); the
    impulse bound +-tau_max*dt realizes the torque limit inside the solver.
    """
    v_star = tg.clamp(tg.mul(tg.sub(theta_target, theta), gain),
                      -motor.max_velocity, motor.max_velocity)
    lim = motor.max_torque * dt
    return ConstraintRow(
        body_a=parent, body_b=child,
        j_va=None, j_wa=tg.neg(axis_w), j_vb=None, j_wb=axis_w,
        bias=v_star, kind=MOTOR, lo_f=-lim, hi_f=lim, cfm=cfm,
        label=motor.name or f"motor{motor.joint}.{motor.axis}")


def contact_rows(contact, bodies: list[BodyT], batch: int,
                 cfg: EngineConfig, start_index: int) -> list[ConstraintRow]:
    """Normal row plus two friction-pyramid tangent rows for one candidate."""
    tape = contact.normal.tape
    body_a = bodies[contact.body_a]
    r_a = tg.sub(contact.point, body_a.x)
    sides_b = contact.body_b >= 0
    if sides_b:
        body_b = bodies[contact.body_b]
        r_b = tg.sub(contact.point, body_b.x)

    def jac(direction):
        j_va = direction
        j_wa = tg.cross3(r_a, direction)
        if not sides_b:
            return j_va, j_wa, None, None
        return j_va, j_wa, tg.neg(direction), tg.neg(tg.cross3(r_b, direction))

    j_va, j_wa, j_vb, j_wb = jac(contact.normal)

    # approach speed before external forces; e max(0, -v_n - v_thresh)
    v_n = _dot3(contact.normal, body_a.v)
    v_n = tg.add(v_n, _dot3(j_wa, body_a.w))
    if sides_b:
        v_n = tg.add(v_n, _dot3(j_vb, body_b.v))
        v_n = tg.add(v_n, _dot3(j_wb, body_b.w))
    bias = tg.mul(tg.relu(tg.sub(contact.depth, tape.scalar(cfg.slop))),
                  cfg.baumgarte / cfg.dt)
    if contact.restitution > 0.0:
        rest = tg.mul(tg.relu(tg.sub(tg.neg(v_n),
                                     tape.scalar(cfg.restitution_threshold))),
                      contact.restitution)
        bias = tg.add(bias, rest)

    zero_col = tape.const(np.zeros((batch, 1)))
    inf_col = tape.const(np.full((batch, 1), INF))
    hi = tg.where_mask(contact.active, inf_col, zero_col)
    rows = [ConstraintRow(
        body_a=contact.body_a, body_b=contact.body_b,
        j_va=j_va, j_wa=j_wa, j_vb=j_vb, j_wb=j_wb,
        bias=bias, kind=NORMAL, lo=zero_col, hi=hi, cfm=cfg.cfm,
        label="contact.n")]
    for tangent in (contact.tangent1, contact.tangent2):
        j_va, j_wa, j_vb, j_wb = jac(tangent)
        rows.append(ConstraintRow(
            body_a=contact.body_a, body_b=contact.body_b,
            j_va=j_va, j_wa=j_wa, j_vb=j_vb, j_wb=j_wb,
            bias=zero_col, kind=FRICTION, cfm=cfg.cfm,
            friction_parent=start_index, mu=contact.friction,
            label="contact.t"))
    return rows
