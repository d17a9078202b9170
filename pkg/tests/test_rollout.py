"""Rollout replay, BPTT with decay, checkpoint recompute, NaN reporting."""

import dataclasses

import numpy as np
import pytest

from diffdyn import tape as tg
from diffdyn.rollout import RolloutNaNError, bptt_gradient, rollout
from diffdyn.scenarios import ball_throw_task, get_task
from diffdyn.scenarios.base import OptimizationProblem


def _flight_problem(n_steps, alpha=1.0, gravity=None):
    task = dataclasses.replace(ball_throw_task(), duration=n_steps * 0.01)
    if gravity is not None:
        task = dataclasses.replace(task, engine_overrides={"gravity": gravity})
    prob = OptimizationProblem(task, alpha=alpha)
    prob.initial_state[0][0][:, 2] = 3.0   # airborne, no contact
    return prob


def test_alpha_one_matches_finite_differences():
    from diffdyn.tape import finite_difference_check

    prob = _flight_problem(5, alpha=1.0)

    def f(x):
        loss, grad, _, _ = prob.evaluate(x, with_grad=True)
        return loss, grad

    err = finite_difference_check(f, np.array([1.0, -0.5, 0.5, 0.2, 0.1, -0.3]))
    assert err < 1e-5


def test_alpha_decay_on_drift_gradient():
    """Zero-gravity drift: d(x_T)/d(v0) = dt * sum_k alpha^(T-k) exactly."""
    for alpha in (1.0, 0.5):
        prob = _flight_problem(3, alpha=alpha, gravity=0.0)
        # gradient of terminal position error along x: start left of target
        x = np.zeros(6)
        _, grad, _, result = prob.evaluate(x, with_grad=True)
        # build expected from the decay semantics: the state adjoint crossing
        # each of the T-1 boundaries is scaled once
        dt, T = 0.01, 3
        expected = dt * sum(alpha ** (T - k) for k in range(1, T + 1))
        # loss includes the per-step distance shaping plus terminal distance;
        # compare against finite differences of the same loss instead
        from diffdyn.tape import finite_difference_gradient

        def f(v):
            loss, _, _, _ = prob.evaluate(v)
            return loss, None

        if alpha == 1.0:
            fd = finite_difference_gradient(f, x, 1e-6)
            assert np.allclose(grad, fd, rtol=1e-4, atol=1e-8)
        else:
            fd = finite_difference_gradient(f, x, 1e-6)
            # decayed gradient differs from the exact one
            assert not np.allclose(grad, fd, rtol=1e-3, atol=1e-9)


def test_two_step_linear_recurrence_decay_convention():
    """x_{t+1} = a x_t, loss = x2: d(loss)/da = x1 + alpha * a * x0."""
    alpha = 0.5
    x0 = 1.7
    a_val = 1.3

    t = tg.Tape()
    a = t.leaf(np.array([a_val]))
    x_in = t.leaf(np.array([x0]))
    x_out = tg.mul(a, x_in)
    t.finalize()

    # unroll 2 steps with the per-boundary decay applied to the state adjoint
    x1 = a_val * x0
    grad_a = 0.0
    adj_state = np.array([1.0])             # d loss / d x2
    for step_x in (x1, x0):                  # reverse order: step 1, step 0
        x_in.set_value(np.array([step_x]))
        t.run_forward()
        t.run_backward([(x_out, adj_state)])
        grad_a += a.grad[0]
        adj_state = alpha * x_in.grad
    assert np.isclose(grad_a, x1 + alpha * a_val * x0)


def test_alpha_zero_kills_cross_step_influence():
    # terminal-only objective: with alpha=0 nothing reaches the initial state
    task = dataclasses.replace(ball_throw_task(), duration=0.04,
                               step_cost=None)
    prob = OptimizationProblem(task)
    prob.initial_state[0][0][:, 2] = 3.0
    result = rollout(prob.program, 4, prob._state_for(np.zeros(6)))
    bundle = bptt_gradient(prob.program, result, alpha=0.0)
    _, _, av, aw = bundle.state0[0]
    assert np.allclose(av, 0.0)
    assert np.allclose(aw, 0.0)
    # with alpha=1 the same setup has nonzero initial-velocity gradient
    bundle = bptt_gradient(prob.program, result, alpha=1.0)
    assert np.linalg.norm(bundle.state0[0][2]) > 0


def test_rollout_checkpoint_recompute_consistency():
    """Backward recompute must not change the forward results."""
    prob = _flight_problem(6)
    x = np.array([0.5, 0.1, -0.2, 0.0, 1.0, 0.0])
    r1 = rollout(prob.program, 6, prob._state_for(x))
    bptt_gradient(prob.program, r1, alpha=1.0)
    r2 = rollout(prob.program, 6, prob._state_for(x))
    assert r1.loss == r2.loss
    for (a1, b1, c1, d1), (a2, b2, c2, d2) in zip(r1.final_state,
                                                  r2.final_state):
        assert np.array_equal(a1, a2) and np.array_equal(b1, b2)
        assert np.array_equal(c1, c2) and np.array_equal(d1, d2)


def test_nan_rollout_reports_step_and_channel():
    prob = _flight_problem(5)
    x = np.zeros(6)
    state = prob._state_for(x)
    state[0] = (state[0][0], state[0][1],
                np.full_like(state[0][2], np.nan), state[0][3])
    with pytest.raises(RolloutNaNError) as err:
        rollout(prob.program, 5, state)
    assert err.value.step == 0
    assert "body0" in err.value.channel


def test_single_step_rollout():
    prob = _flight_problem(1)
    loss, _, m, res = prob.evaluate(np.zeros(6))
    assert res.n_steps == 1
    assert np.isfinite(loss)


def test_carried_aux_slot_passes_values():
    """prev_targets sensors must see the previous step's motor targets."""
    import diffdyn.scenarios.quadruped as quad
    from diffdyn.control import SensorChannel, SensorSuite, init_params
    from diffdyn.scenarios.base import build_program

    from diffdyn.control import ControllerSpec

    task = dataclasses.replace(
        quad.quadruped_gait_task(),
        duration=0.03,
        sensor_suite=SensorSuite((
            SensorChannel("clock", frequency=1.5),
            SensorChannel("prev_targets"),
        )),
        controller=ControllerSpec((10, 16, 8)),
    )
    prob = OptimizationProblem(task)
    params = prob.initial_params(0)
    rng = np.random.default_rng(0)
    params[-8 * 16 - 8:] = rng.normal(0, 0.2, 8 * 16 + 8)
    loss, grad, _, res = prob.evaluate(params, with_grad=True, trace=True)
    # targets at step t-1 appear as the prev_targets leaf at step t
    slot = prob.program.aux_slot("prev_targets")
    assert np.array_equal(res.checkpoints[1]["prev_targets"],
                          res.target_trace[0])
    assert np.array_equal(res.checkpoints[2]["prev_targets"],
                          res.target_trace[1])
    assert np.all(np.isfinite(grad))


def test_rollout_trace_shapes():
    task = dataclasses.replace(get_task("arm-fixed"), duration=0.05)
    prob = OptimizationProblem(task)
    x = prob.initial_params(0)
    loss, _, _, res = prob.evaluate(x, trace=True)
    assert res.sensor_trace.shape == (5, 1, 1)
    assert res.target_trace.shape == (5, 1, 4)
    assert res.step_costs.shape == (5, 1)
