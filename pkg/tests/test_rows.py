"""Direct unit checks of assembled row values."""

import numpy as np

from diffdyn import tape as tg
from diffdyn.config import EngineConfig
from diffdyn.constraints import FRICTION, NORMAL
from diffdyn.contacts import detect_contacts
from diffdyn.dynamics import BodyState, WorldState
from diffdyn.solver import engine_step, make_context, world_to_tape
from tests.conftest import ball_params, single_ball_world


def _rows_for(state, params, cfg=None):
    cfg = cfg or EngineConfig()
    t = tg.Tape()
    ctx, world = single_ball_world(t, state, params=params, cfg=cfg)
    _, dbg = engine_step(ctx, world)
    return dbg


def test_resting_contact_bias_zero():
    dbg = _rows_for(BodyState.at_rest((0, 0, 0.5 - 0.0005)), ball_params())
    normal = next(r for r in dbg.rows if r.kind == NORMAL)
    assert abs(normal.bias.value[0, 0]) < 1e-12


def test_impact_restitution_bias_value():
    """v_n- = -1 m/s, e=0.5, v_thresh=0.1 -> restitution bias 0.45 m/s."""
    state = BodyState(np.array([0, 0, 0.4995]), np.eye(3),
                      np.array([0.0, 0.0, -1.0]), np.zeros(3))
    dbg = _rows_for(state, ball_params(e=0.5))
    normal = next(r for r in dbg.rows if r.kind == NORMAL)
    # depth 0.0005 < slop: no Baumgarte term, pure restitution
    assert np.isclose(normal.bias.value[0, 0], 0.45, atol=1e-12)


def test_baumgarte_bias_beyond_slop():
    state = BodyState.at_rest((0, 0, 0.5 - 0.003))   # 3 mm penetration
    dbg = _rows_for(state, ball_params(e=0.0))
    normal = next(r for r in dbg.rows if r.kind == NORMAL)
    cfg = EngineConfig()
    expected = cfg.baumgarte * (0.003 - cfg.slop) / cfg.dt
    assert np.isclose(normal.bias.value[0, 0], expected, atol=1e-12)


def test_frictionless_contact_has_inert_tangent_rows():
    state = BodyState(np.array([0, 0, 0.4995]), np.eye(3),
                      np.array([2.0, 0.0, 0.0]), np.zeros(3))
    dbg = _rows_for(state, ball_params(mu=0.0))
    tangents = [i for i, r in enumerate(dbg.rows) if r.kind == FRICTION]
    assert len(tangents) == 2
    for i in tangents:
        assert dbg.rows[i].mu == 0.0
        # friction bounds are mu * lambda_n = 0: the impulse stays zero
        assert abs(dbg.impulses[i].value[0, 0]) < 1e-15
    # sliding continues unhindered (only gravity-normal exchange)
    # and the normal row still supports the ball
    normal_idx = dbg.rows.index(next(r for r in dbg.rows if r.kind == NORMAL))
    assert dbg.impulses[normal_idx].value[0, 0] > 0


def test_zero_parameter_problem_returns_immediately():
    from diffdyn.optim import RunSettings, optimize_loop

    class NoParamProblem:
        dim = 0

        def initial_params(self, seed):
            return np.zeros(0)

        def draw_inputs(self, rng):
            pass

        def evaluate(self, x, with_grad=False, trace=False):
            return 4.25, None, {"loss": 4.25}, None

        def success(self, metrics):
            return False

    out = optimize_loop(NoParamProblem(), RunSettings(iterations=100))
    assert len(out.rows) == 1
    assert out.evals == 1
    assert out.best_loss == 4.25
