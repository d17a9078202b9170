"""Tape recording, adjoint correctness per primitive, and replay semantics."""

import numpy as np
import pytest

from diffdyn import tape as tg
from diffdyn.tape import finite_difference_check


def test_add_example():
    t = tg.Tape()
    z = tg.add(t.leaf([1.0, 2.0]), t.leaf([3.0, 4.0]))
    assert np.allclose(z.value, [4.0, 6.0])


def test_matmul_identity():
    t = tg.Tape()
    rng = np.random.default_rng(0)
    r = rng.standard_normal((3, 3))
    out = tg.matmul(t.leaf(np.eye(3)), t.leaf(r))
    assert np.allclose(out.value, r)


def test_where_mask_semantics():
    t = tg.Tape()
    out = tg.where_mask(t.leaf([1.0, 0.0]), t.leaf([5.0, 5.0]), t.leaf([7.0, 7.0]))
    assert np.allclose(out.value, [5.0, 7.0])


def test_shape_mismatch_reports_kind_and_shapes():
    t = tg.Tape()
    a = t.leaf(np.zeros((2, 3)))
    b = t.leaf(np.zeros((3, 2)))
    with pytest.raises(tg.TraceError) as err:
        tg.add(a, b)
    assert "add" in str(err.value)
    assert "(2, 3)" in str(err.value)


def test_backward_requires_scalar():
    t = tg.Tape()
    v = tg.relu(t.leaf([1.0, 2.0]))
    with pytest.raises(tg.ContractError):
        t.backward(v)


def test_simple_quadratic_gradient():
    t = tg.Tape()
    x = t.leaf([3.0])
    t.backward(tg.mul(x, x))
    assert np.allclose(x.grad, [6.0])


def test_relu_subgradient_convention():
    t = tg.Tape()
    x = t.leaf([-1.0, 2.0, 0.0])
    t.backward(tg.sum_(tg.relu(x)))
    assert np.allclose(x.grad, [0.0, 1.0, 0.0])


def test_mean_matmul_matches_fd():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((2, 2))

    def f(x):
        t = tg.Tape()
        xt = t.leaf(x.reshape(2, 1))
        loss = tg.mean(tg.matmul(t.const(a), xt))
        t.backward(loss)
        return loss.item(), xt.grad.reshape(-1).copy()

    assert finite_difference_check(f, rng.standard_normal(2)) < 1e-6


# ---------------------------------------------------------------------------
# Per-primitive finite-difference sweep: every opcode, randomized inputs kept
# away from non-smooth points (|x| > 1e-3 for relu/abs/clamp/min/max).
# ---------------------------------------------------------------------------

def _away(rng, shape, margin=1e-3, lo=0.3, hi=1.7):
    """Random values with |x| in [lo, hi], sign random: clear of kinks at 0."""
    mag = rng.uniform(lo, hi, size=shape)
    sign = np.where(rng.uniform(size=shape) < 0.5, -1.0, 1.0)
    return mag * sign


def _scalarize(t, out, rng):
    w = t.const(_away(rng, out.shape))
    flat_w = tg.reshape(w, (out.size,)) if len(out.shape) != 1 else w
    flat_o = tg.reshape(out, (out.size,)) if len(out.shape) != 1 else out
    return tg.sum_(tg.mul(flat_o, flat_w))


CASES = {
    "add_ss": (lambda t, a, b: tg.add(a, b), [(2, 3), (2, 3)]),
    "add_sb": (lambda t, a, b: tg.add(a, b), [(2, 3), (1,)]),
    "add_rb": (lambda t, a, b: tg.add(a, b), [(2, 3), (3,)]),
    "add_cb": (lambda t, a, b: tg.add(a, b), [(2, 3), (2, 1)]),
    "sub_ss": (lambda t, a, b: tg.sub(a, b), [(2, 3), (2, 3)]),
    "sub_sb": (lambda t, a, b: tg.sub(a, b), [(2, 3), (1,)]),
    "sub_bs": (lambda t, a, b: tg.sub(a, b), [(1,), (2, 3)]),
    "sub_rb": (lambda t, a, b: tg.sub(a, b), [(2, 3), (3,)]),
    "sub_cb": (lambda t, a, b: tg.sub(a, b), [(2, 3), (2, 1)]),
    "mul_ss": (lambda t, a, b: tg.mul(a, b), [(2, 3), (2, 3)]),
    "mul_sb": (lambda t, a, b: tg.mul(a, b), [(2, 3), (1,)]),
    "mul_rb": (lambda t, a, b: tg.mul(a, b), [(2, 3), (3,)]),
    "mul_cb": (lambda t, a, b: tg.mul(a, b), [(2, 3), (2, 1)]),
    "div_ss": (lambda t, a, b: tg.div(a, b), [(2, 3), (2, 3)]),
    "div_sb": (lambda t, a, b: tg.div(a, b), [(2, 3), (1,)]),
    "div_bs": (lambda t, a, b: tg.div(a, b), [(1,), (2, 3)]),
    "div_cb": (lambda t, a, b: tg.div(a, b), [(2, 3), (2, 1)]),
    "neg": (lambda t, a: tg.neg(a), [(2, 3)]),
    "relu": (lambda t, a: tg.relu(a), [(2, 3)]),
    "sin": (lambda t, a: tg.sin(a), [(2, 3)]),
    "cos": (lambda t, a: tg.cos(a), [(2, 3)]),
    "sqrt": (lambda t, a: tg.sqrt(a), [(2, 3)]),
    "abs": (lambda t, a: tg.abs_(a), [(2, 3)]),
    "atan": (lambda t, a: tg.atan(a), [(2, 3)]),
    "min": (lambda t, a, b: tg.minimum(a, b), [(2, 3), (2, 3)]),
    "max": (lambda t, a, b: tg.maximum(a, b), [(2, 3), (2, 3)]),
    "clamp_const": (lambda t, a: tg.clamp(a, -1.2, 1.2), [(2, 3)]),
    "clamp_tensor": (lambda t, a, b, c: tg.clamp(a, b, tg.add(b, c)),
                     [(2, 3), (2, 3), (2, 3)]),
    "where_ss": (lambda t, a, b: tg.where_mask(
        t.const([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]), a, b), [(2, 3), (2, 3)]),
    "where_cb": (lambda t, a, b: tg.where_mask(
        t.const([[1.0], [0.0]]), a, b), [(2, 3), (2, 3)]),
    "concat": (lambda t, a, b: tg.concat(a, b), [(2, 3), (2, 2)]),
    "slice": (lambda t, a: tg.slice_cols(a, 1, 3), [(2, 4)]),
    "sum_cols": (lambda t, a: tg.sum_(a, axis=-1), [(2, 4)]),
    "sum_all": (lambda t, a: tg.sum_(a), [(2, 4)]),
    "mean_cols": (lambda t, a: tg.mean(a, axis=-1), [(2, 4)]),
    "mean_all": (lambda t, a: tg.mean(a), [(2, 4)]),
    "l2norm": (lambda t, a: tg.l2norm(a), [(2, 3)]),
    "matmul": (lambda t, a, b: tg.matmul(a, b), [(2, 3), (3, 2)]),
    "bmm33": (lambda t, a, b: tg.bmm33(a, b), [(2, 3, 3), (2, 3, 3)]),
    "bmv3": (lambda t, a, b: tg.bmm33(a, b), [(2, 3, 3), (2, 3)]),
    "t33": (lambda t, a: tg.transpose(a), [(2, 3, 3)]),
    "t2d": (lambda t, a: tg.transpose(a), [(3, 2)]),
    "cross3": (lambda t, a, b: tg.cross3(a, b), [(2, 3), (2, 3)]),
    "reshape": (lambda t, a: tg.reshape(a, (3, 2)), [(2, 3)]),
}


@pytest.mark.parametrize("name", sorted(CASES))
def test_primitive_gradients_match_fd(name):
    build, shapes = CASES[name]
    rng = np.random.default_rng(hash(name) % 2**32)
    n_trials = 100
    sizes = [int(np.prod(s)) for s in shapes]
    for _ in range(n_trials):
        xs = [_away(rng, s) for s in shapes]
        if name == "sqrt":
            xs[0] = np.abs(xs[0])
        if name == "clamp_tensor":
            # keep lo < x < hi or firmly outside, never near the bounds
            xs[1] = xs[0] - rng.uniform(0.1, 0.5, size=shapes[1])
            xs[2] = rng.uniform(0.2, 0.6, size=shapes[2])
        wseed = rng.integers(2**32)

        def f(flat):
            t = tg.Tape()
            leaves = []
            pos = 0
            for s, n in zip(shapes, sizes):
                leaves.append(t.leaf(flat[pos:pos + n].reshape(s)))
                pos += n
            out = build(t, *leaves)
            loss = _scalarize(t, out, np.random.default_rng(wseed))
            t.backward(loss)
            g = np.concatenate([lv.grad.reshape(-1).copy() for lv in leaves])
            return loss.item(), g

        x0 = np.concatenate([x.reshape(-1) for x in xs])
        err = finite_difference_check(f, x0, step=1e-6)
        assert err < 1e-5, f"{name}: FD mismatch {err:.2e}"


def test_backward_linearity():
    rng = np.random.default_rng(3)
    x0 = rng.standard_normal(4)
    c = 2.75

    def grads(w1, w2):
        t = tg.Tape()
        x = t.leaf(x0)
        l1 = tg.sum_(tg.mul(x, x))
        l2 = tg.mean(tg.sin(x))
        loss = tg.add(tg.mul(l1, t.scalar(w1)), tg.mul(l2, t.scalar(w2)))
        t.backward(loss)
        return x.grad.copy()

    g1 = grads(1.0, 0.0)
    g2 = grads(0.0, 1.0)
    g12 = grads(1.0, c)
    assert np.allclose(g12, g1 + c * g2, rtol=1e-12, atol=1e-14)


def test_replay_is_bit_identical():
    rng = np.random.default_rng(11)
    t = tg.Tape()
    x = t.leaf(rng.standard_normal((4, 3)))
    w = t.leaf(rng.standard_normal((3, 3)))
    h = tg.relu(tg.matmul(x, w))
    loss = tg.mean(tg.mul(h, h))
    t.finalize()
    t.run_forward()
    first = loss.value.copy()
    first_buf = t.buf.copy()
    for _ in range(3):
        t.run_forward()
        assert loss.value[0] == first[0]
        assert np.array_equal(t.buf, first_buf)


def test_adjoint_accumulates_over_consumers():
    t = tg.Tape()
    x = t.leaf([2.0])
    y = tg.mul(x, x)          # x^2
    z = tg.add(y, tg.mul(x, t.scalar(3.0)))   # x^2 + 3x
    t.backward(z)
    assert np.allclose(x.grad, [2 * 2.0 + 3.0])


def test_leaf_overwrite_guard():
    t = tg.Tape()
    x = t.leaf([1.0])
    y = tg.relu(x)
    with pytest.raises(tg.ContractError):
        y.set_value([2.0])


def test_fd_check_quadratic_exact():
    def f(x):
        t = tg.Tape()
        xt = t.leaf(x.reshape(1, -1))
        loss = tg.sum_(tg.mul(xt, xt))
        t.backward(loss)
        return loss.item(), xt.grad.reshape(-1).copy()

    assert finite_difference_check(f, np.array([1.0, 2.0, 3.0])) < 1e-6
