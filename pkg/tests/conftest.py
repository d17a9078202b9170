"""Shared builders for physics tests."""

import numpy as np
import pytest

from diffdyn import tape as tg
from diffdyn.config import EngineConfig
from diffdyn.dynamics import (
    BodyParams,
    BodyState,
    Sphere,
    WorldState,
    solid_sphere_inertia,
)
from diffdyn.solver import make_context, world_to_tape


def ball_params(m=1.0, r=0.5, mu=1.0, e=0.5, with_sphere=True, static=False):
    return BodyParams(
        mass=m, inertia_body=solid_sphere_inertia(m, r),
        collision_spheres=[Sphere((0.0, 0.0, 0.0), r)] if with_sphere else [],
        friction=mu, restitution=e, static=static, name="ball")


def single_ball_world(tape, state: BodyState, params=None, cfg=None, batch=1):
    params = params or ball_params()
    cfg = cfg or EngineConfig()
    ws = WorldState([state], gravity=np.array([0.0, 0.0, cfg.gravity]))
    ctx = make_context(tape, [params], [], [], ws, batch, cfg)
    world = world_to_tape(tape, ws, batch)
    return ctx, world


def total_energy(ctx, world, row=0):
    """Kinetic + gravitational potential energy of one batch row."""
    e = 0.0
    g = -ctx.config.gravity
    for body, const in zip(world, ctx.consts):
        p = const.params
        if p.static:
            continue
        v = body.v.value[row]
        w = body.w.value[row]
        r = body.R.value[row]
        iw = r @ p.inertia_body @ r.T
        e += 0.5 * p.mass * v @ v + 0.5 * w @ iw @ w
        e += p.mass * g * body.x.value[row][2]
    return e


@pytest.fixture
def default_cfg():
    return EngineConfig()
