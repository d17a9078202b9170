"""Public record() kind names, float32 opt-in, and concurrency basics."""

import threading

import numpy as np
import pytest

from diffdyn import tape as tg


def test_record_by_kind_names():
    t = tg.Tape()
    a = t.leaf([[1.0, 2.0, 3.0]])
    b = t.leaf([[4.0, 5.0, 6.0]])
    assert np.allclose(t.record("add", a, b).value, [[5, 7, 9]])
    assert np.allclose(t.record("mul", a, b).value, [[4, 10, 18]])
    assert np.allclose(t.record("sum", a, axis=-1).value, [[6]])
    assert np.allclose(t.record("mean", a).value, [2.0])
    assert np.allclose(t.record("l2norm", b).value,
                       [[np.sqrt(16 + 25 + 36)]])
    r = t.leaf(np.eye(3)[None])
    assert np.allclose(t.record("batched-3x3-matmul", r, a).value, a.value)
    assert np.allclose(t.record("cross3", a, b).value,
                       np.cross(a.value, b.value))
    sliced = t.record("slice", a, start=1, stop=3)
    assert np.allclose(sliced.value, [[2, 3]])
    assert np.allclose(t.record("clamp", a, lo=1.5, hi=2.5).value,
                       [[1.5, 2.0, 2.5]])
    with pytest.raises(tg.TraceError):
        t.record("no-such-op", a)


def test_float32_config_runs_on_python_executor():
    t = tg.Tape(dtype=np.float32)
    x = t.leaf(np.array([1.0, 2.0], dtype=np.float32))
    loss = tg.sum_(tg.mul(x, x))
    t.finalize()
    assert t._backend == "python"   # compiled core is float64-only
    assert t.buf.dtype == np.float32
    t.run_forward()
    t.backward(loss)
    assert np.allclose(x.grad, [2.0, 4.0])
    assert x.grad.dtype == np.float32


def test_float32_engine_step():
    from diffdyn.config import EngineConfig
    from diffdyn.dynamics import BodyState
    from diffdyn.solver import engine_step
    from tests.conftest import single_ball_world

    cfg = EngineConfig().with_(dtype=np.dtype(np.float32))
    t = tg.Tape(dtype=np.float32)
    ctx, world = single_ball_world(t, BodyState.at_rest((0, 0, 0.4995)),
                                   cfg=cfg)
    state, _ = engine_step(ctx, world)
    assert state[0].x.value.dtype == np.float32
    assert abs(state[0].x.value[0, 2] - 0.4995) < 1e-5


def test_distinct_tapes_run_concurrently():
    """Distinct tapes share no state; parallel replay gives serial results."""
    def build(seed):
        rng = np.random.default_rng(seed)
        t = tg.Tape()
        x = t.leaf(rng.standard_normal((8, 8)))
        w = t.leaf(rng.standard_normal((8, 8)))
        loss = tg.mean(tg.relu(tg.matmul(x, w)))
        t.finalize()
        return t, loss

    tapes = [build(s) for s in range(8)]
    serial = []
    for t, loss in tapes:
        t.run_forward()
        t.backward(loss)
        serial.append((loss.value.copy(), t.adj.copy()))

    results = [None] * len(tapes)

    def worker(i):
        t, loss = tapes[i]
        for _ in range(5):
            t.run_forward()
            t.backward(loss)
        results[i] = (loss.value.copy(), t.adj.copy())

    threads = [threading.Thread(target=worker, args=(i,))
               for i in range(len(tapes))]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    for (v1, a1), (v2, a2) in zip(serial, results):
        assert np.array_equal(v1, v2)
        assert np.array_equal(a1, a2)
