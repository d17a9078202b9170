"""Branch-free contact candidate generation for spheres and the ground plane.

Every (sphere, plane) pair and every (sphere, sphere) pair across distinct
bodies yields exactly one candidate on every step, with an activity mask
``1(depth > 0)`` instead of a dynamic contact list, so the tape topology is
identical across steps.  Pairs of spheres rigidly attached to the same body
are excluded at generation: they have identically zero relative velocity and
can never constrain anything.

Normals point along the separation direction of the first body (``body_a``):
(0,0,1) for a sphere resting on the plane, and (c_a - c_b)/|c_a - c_b| for
sphere-sphere candidates.  Coincident centers (distance < 1e-9) fall back to
the +z normal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tape as tg
from .dynamics import BodyConst, BodyT
from .tape import Tensor

_COINCIDENT_EPS = 1e-9


@dataclass
class ContactPoint:
    body_a: int
    body_b: int                 # -1 for the static ground plane
    point: Tensor               # (B,3) world
    normal: Tensor              # (B,3) separation direction of body_a
    depth: Tensor               # (B,1) penetration, positive = overlapping
    active: Tensor              # (B,1) in {0,1}
    tangent1: Tensor            # (B,3)
    tangent2: Tensor            # (B,3)
    friction: float             # combined Coulomb mu
    restitution: float          # combined e


def sphere_centers(bodies: list[BodyT], consts: list[BodyConst],
                   batch: int) -> list[tuple[int, Tensor, float]]:
    """World-space centers of every collision sphere: (body_idx, (B,3), r)."""
    out = []
    for i, (body, const) in enumerate(zip(bodies, consts)):
        tape = body.x.tape
        for sph in const.params.collision_spheres:
            off = tape.const(np.broadcast_to(
                np.asarray(sph.offset, dtype=np.float64), (batch, 3)).copy())
            center = tg.add(body.x, tg.bmm33(body.R, off))
            out.append((i, center, sph.radius))
    return out


def _dot3(a: Tensor, b: Tensor) -> Tensor:
    return tg.sum_(tg.mul(a, b), axis=-1)


def _unit_consts(tape: tg.Tape, batch: int):
    ex = tape.const(np.tile([1.0, 0.0, 0.0], (batch, 1)))
    ey = tape.const(np.tile([0.0, 1.0, 0.0], (batch, 1)))
    ez = tape.const(np.tile([0.0, 0.0, 1.0], (batch, 1)))
    return ex, ey, ez


def tangent_frame(normal: Tensor, batch: int) -> tuple[Tensor, Tensor]:
    """Deterministic tangent basis via the smallest-component rule.

    The helper axis is the coordinate axis of the smallest |n| component,
    selected with masks so the choice itself carries no gradient.
    """
    tape = normal.tape
    ex, ey, ez = _unit_consts(tape, batch)
    an = tg.abs_(normal)
    ax = tg.slice_cols(an, 0, 1)
    ay = tg.slice_cols(an, 1, 2)
    az = tg.slice_cols(an, 2, 3)
    x_is_min = tg.sub(tg.minimum(ay, az), ax)       # > 0 when |nx| smallest
    y_before_z = tg.sub(az, ay)                     # > 0 when |ny| < |nz|
    helper = tg.where_mask(x_is_min, ex, tg.where_mask(y_before_z, ey, ez))
    raw = tg.cross3(normal, helper)
    inv_len = tg.div(tape.const(np.ones((batch, 1))),
                     tg.clamp(tg.l2norm(raw), _COINCIDENT_EPS, math.inf))
    t1 = tg.mul(raw, inv_len)
    t2 = tg.cross3(normal, t1)
    return t1, t2


def detect_contacts(bodies: list[BodyT], consts: list[BodyConst], batch: int,
                    sphere_sphere: bool = True,
                    ground_plane: bool = True) -> list[ContactPoint]:
    """Fixed-size masked candidate set for the current world state."""
    if not bodies:
        return []
    tape = bodies[0].x.tape
    _, _, ez = _unit_consts(tape, batch)
    ex, ey, _ = _unit_consts(tape, batch)
    contacts: list[ContactPoint] = []
    spheres = sphere_centers(bodies, consts, batch)

    if ground_plane:
        for body_idx, center, radius in spheres:
            if consts[body_idx].params.static:
                continue
            depth = tg.sub(tape.scalar(radius), tg.slice_cols(center, 2, 3))
            active = tg.where_mask(depth, tape.const(np.ones((batch, 1))),
                                   tape.const(np.zeros((batch, 1))))
            point = tg.add(center, tape.const(
                np.tile([0.0, 0.0, -radius], (batch, 1))))
            p = consts[body_idx].params
            contacts.append(ContactPoint(
                body_a=body_idx, body_b=-1, point=point, normal=ez,
                depth=depth, active=active, tangent1=ex, tangent2=ey,
                friction=p.friction, restitution=p.restitution))

    if sphere_sphere:
        for s1 in range(len(spheres)):
            for s2 in range(s1 + 1, len(spheres)):
                i, ci, ri = spheres[s1]
                j, cj, rj = spheres[s2]
                if i == j:
                    continue
                pi, pj = consts[i].params, consts[j].params
                if pi.static and pj.static:
                    continue
                d = tg.sub(ci, cj)
                dist = tg.l2norm(d)
                depth = tg.sub(tape.scalar(ri + rj), dist)
                safe = tg.clamp(dist, _COINCIDENT_EPS, math.inf)
                n_raw = tg.div(d, safe)
                n = tg.where_mask(tg.sub(dist, tape.scalar(_COINCIDENT_EPS)),
                                  n_raw, ez)
                # midpoint between the two sphere surfaces
                mid = tg.mul(tg.add(ci, cj), 0.5)
                point = tg.add(mid, tg.mul(n, tape.scalar((rj - ri) / 2.0)))
                active = tg.where_mask(depth, tape.const(np.ones((batch, 1))),
                                       tape.const(np.zeros((batch, 1))))
                t1, t2 = tangent_frame(n, batch)
                contacts.append(ContactPoint(
                    body_a=i, body_b=j, point=point, normal=n, depth=depth,
                    active=active, tangent1=t1, tangent2=t2,
                    friction=math.sqrt(pi.friction * pj.friction),
                    restitution=max(pi.restitution, pj.restitution)))
    return contacts
