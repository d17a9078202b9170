"""Controller layout, initialization, forward pass, sensors, checkpoints."""

import numpy as np
import pytest

from diffdyn import tape as tg
from diffdyn.control import (
    ControllerLeaves,
    ControllerSpec,
    ParamVector,
    SensorChannel,
    SensorSuite,
    clock_values,
    controller_forward,
    init_params,
    load_checkpoint,
    param_count,
    save_checkpoint,
)
from diffdyn.tape import ContractError


def test_param_count_fixed_point_task():
    assert param_count(ControllerSpec((1, 128, 128, 4))) == 17284


def test_param_count_random_point_task():
    assert param_count(ControllerSpec((3, 128, 128, 4))) == 17540


def test_param_count_gait_controller_with_skip():
    spec = ControllerSpec((2, 128, 128, 8), skip_input_to_output=True)
    # 2*128+128 + 128*128+128 + (128+2)*8+8
    assert param_count(spec) == 17944


@pytest.mark.parametrize("seed", range(50))
def test_param_count_matches_vector_length_random_specs(seed):
    rng = np.random.default_rng(seed)
    depth = int(rng.integers(1, 4))
    sizes = tuple(int(rng.integers(1, 40)) for _ in range(depth + 1))
    spec = ControllerSpec(sizes, skip_input_to_output=bool(rng.integers(2)))
    pv = init_params(spec, seed)
    assert pv.data.size == param_count(spec)


def test_zero_output_initialization():
    rng = np.random.default_rng(0)
    for sizes, skip in (((3, 16, 4), False), ((2, 8, 8, 5), True), ((4, 2), False)):
        spec = ControllerSpec(sizes, skip_input_to_output=skip)
        pv = init_params(spec, 123)
        t = tg.Tape()
        leaves = ControllerLeaves(t, spec)
        leaves.write(pv)
        x = t.leaf(rng.standard_normal((7, sizes[0])))
        out = controller_forward(spec, leaves, x)
        assert np.array_equal(out.value, np.zeros((7, sizes[-1])))


def test_init_deterministic_and_seed_sensitive():
    spec = ControllerSpec((3, 16, 4))
    a = init_params(spec, 1)
    b = init_params(spec, 1)
    c = init_params(spec, 2)
    assert np.array_equal(a.data, b.data)
    assert np.any(a.data != c.data)


def test_affine_single_layer():
    spec = ControllerSpec((3, 2), activations=("identity",))
    w = np.arange(6.0).reshape(3, 2)
    b = np.array([0.5, -0.5])
    pv = ParamVector.pack(spec, [(w, b)])
    t = tg.Tape()
    leaves = ControllerLeaves(t, spec)
    leaves.write(pv)
    x = np.array([[1.0, 2.0, 3.0]])
    out = controller_forward(spec, leaves, t.leaf(x))
    assert np.allclose(out.value, x @ w + b)


def test_batch_consistency():
    spec = ControllerSpec((4, 16, 8, 3))
    pv = init_params(spec, 7)
    # make the output layer nonzero so the test is not trivially zeros
    rng = np.random.default_rng(8)
    pv.data[-3 * 8 - 3:] = rng.standard_normal(3 * 8 + 3)
    xs = rng.standard_normal((6, 4))

    t = tg.Tape()
    leaves = ControllerLeaves(t, spec)
    leaves.write(pv)
    batch_out = controller_forward(spec, leaves, t.leaf(xs)).value.copy()

    for i in range(6):
        ti = tg.Tape()
        li = ControllerLeaves(ti, spec)
        li.write(pv)
        single = controller_forward(spec, li, ti.leaf(xs[i:i + 1])).value[0]
        assert np.array_equal(single, batch_out[i])


def test_forward_gradient_matches_fd():
    from diffdyn.tape import finite_difference_check

    spec = ControllerSpec((3, 8, 2))
    rng = np.random.default_rng(3)
    xs = rng.standard_normal((4, 3))

    def f(flat):
        pv = ParamVector(spec, flat)
        t = tg.Tape()
        leaves = ControllerLeaves(t, spec)
        leaves.write(pv)
        out = controller_forward(spec, leaves, t.leaf(xs))
        loss = tg.mean(out)
        t.backward(loss)
        return loss.item(), leaves.read_grad()

    x0 = init_params(spec, 5).data
    x0[-2 * 8 - 2:] = rng.standard_normal(2 * 8 + 2)
    assert finite_difference_check(f, x0) < 1e-5


def test_width_mismatch_raises():
    spec = ControllerSpec((3, 4, 2))
    t = tg.Tape()
    leaves = ControllerLeaves(t, spec)
    leaves.write(init_params(spec, 0))
    with pytest.raises(ContractError):
        controller_forward(spec, leaves, t.leaf(np.zeros((2, 5))))


def test_clock_values():
    assert np.allclose(clock_values(0.0, 1.5), [0.0, 1.0])
    s, c = clock_values(0.1, 1.5)
    assert np.isclose(s, np.sin(2 * np.pi * 0.15))
    assert np.isclose(c, np.cos(2 * np.pi * 0.15))


def test_distance_channel():
    t = tg.Tape()
    from diffdyn.control import SensorExtras, read_sensors
    suite = SensorSuite((SensorChannel("distance_to_target"),))
    extras = SensorExtras(
        target=t.leaf(np.array([[0.5, 0.5, 0.5]])),
        end_effector=t.leaf(np.array([[0.0, 0.0, 0.0]])))
    out = read_sensors(suite, [], [], extras)
    assert np.isclose(out.value[0, 0], np.sqrt(0.75))


def test_sensor_suite_width():
    suite = SensorSuite((
        SensorChannel("joint_angles"), SensorChannel("joint_velocities"),
        SensorChannel("orientation"), SensorChannel("angular_velocity"),
        SensorChannel("linear_velocity"), SensorChannel("height"),
        SensorChannel("contact_masks"), SensorChannel("prev_targets"),
    ))
    assert suite.width(n_joint_axes=8, n_motors=8, n_contacts=4) == \
        8 + 8 + 9 + 3 + 3 + 1 + 4 + 8


def test_checkpoint_roundtrip(tmp_path):
    spec = ControllerSpec((2, 128, 128, 8), skip_input_to_output=True)
    pv = init_params(spec, 99)
    rng = np.random.default_rng(1)
    pv.data[:] = rng.standard_normal(pv.data.size)
    path = tmp_path / "ctrl.ddck"
    save_checkpoint(path, spec, pv)
    spec2, pv2 = load_checkpoint(path)
    assert spec2 == spec
    assert pv2.seed == 99
    assert np.array_equal(pv2.data, pv.data)
    assert (tmp_path / "ctrl.ddck.txt").exists()
    text = (tmp_path / "ctrl.ddck.txt").read_text()
    assert "2-128-128-8" in text and "count: 17944" in text
