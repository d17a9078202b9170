"""Rigid-body state, inertia, external forces, and semi-implicit integration.

Host-side state lives in plain numpy dataclasses; the on-tape mirror
(:class:`BodyT`) holds one tensor per component with the batch as the leading
axis.  Angular velocity is expressed in the world frame and the rotation
update applies the skew of the new angular velocity on the left:
``R' = renormalize(R + dt [w]x R)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tape as tg
from .tape import Tensor


# ---------------------------------------------------------------------------
# Host-side model and state types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Sphere:
    """Collision sphere attached to a body, offset in the body frame."""
    offset: tuple[float, float, float]
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError(f"sphere radius must be positive, got {self.radius}")


@dataclass
class BodyParams:
    mass: float
    inertia_body: np.ndarray            # 3x3, body frame, kg m^2
    collision_spheres: list[Sphere] = field(default_factory=list)
    friction: float = 1.0               # Coulomb mu
    restitution: float = 0.0            # Newton e in [0, 1]
    static: bool = False
    name: str = ""

    def __post_init__(self):
        self.inertia_body = np.asarray(self.inertia_body, dtype=np.float64)
        if not self.static:
            if self.mass <= 0:
                raise ValueError(f"mass must be positive, got {self.mass}")
            sym_err = np.abs(self.inertia_body - self.inertia_body.T).max()
            if sym_err > 1e-9 or np.any(np.linalg.eigvalsh(self.inertia_body) <= 0):
                raise ValueError("inertia tensor must be symmetric positive definite")
        if self.friction < 0:
            raise ValueError("friction must be non-negative")
        if not 0.0 <= self.restitution <= 1.0:
            raise ValueError("restitution must lie in [0, 1]")


@dataclass
class BodyState:
    position: np.ndarray                 # (3,)
    rotation: np.ndarray                 # (3,3), body -> world
    linear_velocity: np.ndarray
    angular_velocity: np.ndarray         # world frame

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.linear_velocity = np.asarray(
            self.linear_velocity, dtype=np.float64).reshape(3)
        self.angular_velocity = np.asarray(
            self.angular_velocity, dtype=np.float64).reshape(3)

    @classmethod
    def at_rest(cls, position, rotation=None) -> "BodyState":
        return cls(position, np.eye(3) if rotation is None else rotation,
                   np.zeros(3), np.zeros(3))


@dataclass
class WorldState:
    bodies: list[BodyState]
    time: float = 0.0
    gravity: np.ndarray = field(
        default_factory=lambda: np.array([0.0, 0.0, -9.81]))

    def copy(self) -> "WorldState":
        return WorldState(
            [BodyState(b.position.copy(), b.rotation.copy(),
                       b.linear_velocity.copy(), b.angular_velocity.copy())
             for b in self.bodies],
            self.time, self.gravity.copy())


# ---------------------------------------------------------------------------
# Inertia helpers (primitive geometry at model-build time)
# ---------------------------------------------------------------------------

def solid_sphere_inertia(mass: float, radius: float) -> np.ndarray:
    return np.eye(3) * (0.4 * mass * radius * radius)


def solid_cuboid_inertia(mass: float, extents) -> np.ndarray:
    lx, ly, lz = extents
    return np.diag([
        mass / 12.0 * (ly * ly + lz * lz),
        mass / 12.0 * (lx * lx + lz * lz),
        mass / 12.0 * (lx * lx + ly * ly),
    ])


def shift_inertia(inertia_com: np.ndarray, mass: float, offset) -> np.ndarray:
    """Parallel-axis shift of a COM inertia tensor by a body-frame offset."""
    d = np.asarray(offset, dtype=np.float64).reshape(3)
    return inertia_com + mass * (np.dot(d, d) * np.eye(3) - np.outer(d, d))


# ---------------------------------------------------------------------------
# On-tape state and per-body constants
# ---------------------------------------------------------------------------

@dataclass
class BodyT:
    """One rigid body on the tape: position, rotation, twist, batched."""
    x: Tensor          # (B,3)
    R: Tensor          # (B,3,3)
    v: Tensor          # (B,3)
    w: Tensor          # (B,3)


@dataclass
class BodyConst:
    """Tape constants derived from BodyParams for a fixed batch size."""
    params: BodyParams
    inv_mass: Tensor | None      # scalar (1,); None for static bodies
    ib: Tensor | None            # (B,3,3) body inertia
    ib_inv: Tensor | None
    zero3: Tensor                # (B,3) zeros, shared


def make_body_const(tape: tg.Tape, params: BodyParams, batch: int,
                    zero3: Tensor | None = None) -> BodyConst:
    if zero3 is None:
        zero3 = tape.const(np.zeros((batch, 3)))
    if params.static:
        return BodyConst(params, None, None, None, zero3)
    ib = np.broadcast_to(params.inertia_body, (batch, 3, 3)).copy()
    ib_inv = np.broadcast_to(
        np.linalg.inv(params.inertia_body), (batch, 3, 3)).copy()
    return BodyConst(params, tape.scalar(1.0 / params.mass),
                     tape.const(ib), tape.const(ib_inv), zero3)


def body_to_tape(tape: tg.Tape, state: BodyState, batch: int) -> BodyT:
    def tile(a, shape):
        return tape.leaf(np.broadcast_to(a, (batch,) + shape).copy())
    return BodyT(tile(state.position, (3,)), tile(state.rotation, (3, 3)),
                 tile(state.linear_velocity, (3,)),
                 tile(state.angular_velocity, (3,)))


# ---------------------------------------------------------------------------
# Tape operations
# ---------------------------------------------------------------------------

def skew3(w: Tensor) -> Tensor:
    """Cross-product matrix of each row of a (B,3) tensor -> (B,3,3)."""
    batch = w.shape[0]
    zero = w.tape.const(np.zeros((batch, 1)))
    wx = tg.slice_cols(w, 0, 1)
    wy = tg.slice_cols(w, 1, 2)
    wz = tg.slice_cols(w, 2, 3)
    rows = tg.concat_many([
        zero, tg.neg(wz), wy,
        wz, zero, tg.neg(wx),
        tg.neg(wy), wx, zero,
    ])
    return tg.reshape(rows, (batch, 3, 3))


def renormalize_rotation(A: Tensor) -> Tensor:
    """One multiplicative re-orthonormalization step: A(3I - A^T A)/2.

    Strictly contracts ||A^T A - I|| near the orthogonal group and leaves
    orthogonal matrices fixed; applied once per integration step.
    """
    ata = tg.bmm33(tg.transpose(A), A)
    return tg.mul(tg.sub(tg.mul(A, 3.0), tg.bmm33(A, ata)), 0.5)


def renormalize_rotation_np(A: np.ndarray) -> np.ndarray:
    """Host-side twin of renormalize_rotation (same expression)."""
    return (3.0 * A - A @ (A.T @ A)) / 2.0


def world_inertia_inverse(R: Tensor, ib_inv: Tensor) -> Tensor:
    """R I_body^-1 R^T for a batch of rotations."""
    return tg.bmm33(tg.bmm33(R, ib_inv), tg.transpose(R))


def apply_external_forces(body: BodyT, const: BodyConst, gravity: Tensor,
                          dt: float, torque: Tensor | None = None,
                          iw_inv: Tensor | None = None
                          ) -> tuple[Tensor, Tensor]:
    """Pre-solve velocity prediction: gravity plus the gyroscopic term.

    v_pred = v + dt g;  w_pred = w + dt I_w^-1 (tau - w x (I_w w)).
    Static bodies predict zero twist.
    """
    if const.params.static:
        return const.zero3, const.zero3
    t = body.v.tape
    v_pred = tg.add(body.v, tg.mul(gravity, t.scalar(dt)))
    if iw_inv is None:
        iw_inv = world_inertia_inverse(body.R, const.ib_inv)
    iw = tg.bmm33(tg.bmm33(body.R, const.ib), tg.transpose(body.R))
    gyro = tg.cross3(body.w, tg.bmm33(iw, body.w))
    rhs = tg.neg(gyro) if torque is None else tg.sub(torque, gyro)
    w_pred = tg.add(body.w, tg.mul(tg.bmm33(iw_inv, rhs), t.scalar(dt)))
    return v_pred, w_pred


def integrate_semi_implicit(body: BodyT, v_new: Tensor, w_new: Tensor,
                            dt: float, renorm_iterations: int = 3) -> BodyT:
    """Position update with the post-solve velocities, then renormalization."""
    t = v_new.tape
    dts = t.scalar(dt)
    x_new = tg.add(body.x, tg.mul(v_new, dts))
    r_dot = tg.bmm33(skew3(w_new), body.R)
    r_new = tg.add(body.R, tg.mul(r_dot, dts))
    for _ in range(renorm_iterations):
        r_new = renormalize_rotation(r_new)
    return BodyT(x_new, r_new, v_new, w_new)


def gravity_const(tape: tg.Tape, batch: int, gz: float) -> Tensor:
    g = np.zeros((batch, 3))
    g[:, 2] = gz
    return tape.const(g)
