"""Recording tape for reverse-mode differentiation over fixed-shape tensors.

A :class:`Tape` is an append-only sequence of primitive nodes in topological
order.  Recording is eager: every ``record`` call validates shapes, evaluates
the node, and returns a :class:`Tensor` handle.  After :meth:`Tape.finalize`
the node values live in one contiguous buffer and the whole tape can be
re-executed (``run_forward``) or differentiated (``run_backward``) by either
the compiled core or the pure-numpy executor, selected in
:mod:`diffdyn.tape.backend`.

Scalars are tensors of shape ``(1,)``.  The leading axis of engine tensors is
a batch axis fixed at trace time; a batch of robots is one trace.  Replaying
a tape with identical leaf values is bit-identical under a given executor
because every kernel uses a fixed reduction order, and adjoint accumulation
runs sequentially in reverse node order.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from . import backend, ops


class TraceError(ValueError):
    """Shape or arity mismatch while recording a node."""


class ContractError(ValueError):
    """Operation precondition violated (e.g. backward from a non-scalar)."""


class Tensor:
    """Handle to one node of a tape; does not own its storage."""

    __slots__ = ("tape", "idx", "shape")

    def __init__(self, tape: "Tape", idx: int, shape: tuple[int, ...]):
        self.tape = tape
        self.idx = idx
        self.shape = shape

    @property
    def value(self) -> np.ndarray:
        return self.tape.value_of(self.idx)

    @property
    def grad(self) -> np.ndarray:
        return self.tape.grad_of(self.idx)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1

    def set_value(self, arr) -> None:
        self.tape.set_value(self.idx, arr)

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.value.reshape(-1)[0])

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(self.tape.scalar(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(self.tape.scalar(other), self)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Tensor(idx={self.idx}, shape={self.shape})"


class Tape:
    """Append-only computation graph with packed replay buffers."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._op: list[int] = []
        self._a: list[int] = []
        self._b: list[int] = []
        self._c: list[int] = []
        self._iaux: list[tuple[int, int, int, int]] = []
        self._faux: list[tuple[float, float]] = []
        self._shapes: list[tuple[int, ...]] = []
        self._vals: list[np.ndarray] = []
        self._scalar_cache: dict[float, Tensor] = {}
        self.finalized = False
        # packed form (set by finalize)
        self.op_arr = None
        self.abc_arr = None
        self.iaux_arr = None
        self.faux_arr = None
        self.off_arr = None
        self.sz_arr = None
        self.buf = None
        self.adj = None
        self._views: list[np.ndarray] = []
        self._adj_views: list[np.ndarray] = []

    # -- introspection ------------------------------------------------------

    def __len__(self) -> int:
        return len(self._op)

    @property
    def n_nodes(self) -> int:
        return len(self._op)

    def value_of(self, idx: int) -> np.ndarray:
        return self._views[idx] if self.finalized else self._vals[idx]

    def grad_of(self, idx: int) -> np.ndarray:
        if not self.finalized or self.adj is None:
            raise ContractError("gradients are available only after backward")
        return self._adj_views[idx]

    def set_value(self, idx: int, arr) -> None:
        if self._op[idx] != ops.LEAF:
            raise ContractError("only leaf values may be overwritten")
        dst = self.value_of(idx)
        src = np.asarray(arr, dtype=self.dtype).reshape(dst.shape)
        np.copyto(dst, src)

    # -- node creation ------------------------------------------------------

    def _push(self, op, shape, a=-1, b=-1, c=-1, iaux=(0, 0, 0, 0),
              faux=(0.0, 0.0), value=None) -> Tensor:
        if self.finalized:
            raise ContractError("tape is finalized; no further recording")
        idx = len(self._op)
        if value is None:
            value = np.empty(shape, dtype=self.dtype)
            xv = self._vals[a] if a >= 0 else None
            yv = self._vals[b] if b >= 0 else None
            zv = self._vals[c] if c >= 0 else None
            ops.FWD[op](value, xv, yv, zv, iaux, faux)
        self._op.append(op)
        self._a.append(a)
        self._b.append(b)
        self._c.append(c)
        self._iaux.append(tuple(iaux))
        self._faux.append(tuple(faux))
        self._shapes.append(tuple(shape))
        self._vals.append(value)
        return Tensor(self, idx, tuple(shape))

    def leaf(self, value, name: str | None = None) -> Tensor:
        arr = np.ascontiguousarray(np.asarray(value, dtype=self.dtype))
        if arr.ndim == 0:
            arr = arr.reshape(1)
        return self._push(ops.LEAF, arr.shape, value=arr)

    def const(self, value) -> Tensor:
        return self.leaf(value)

    def scalar(self, v) -> Tensor:
        """Cached constant of shape (1,); reused across the trace."""
        if isinstance(v, Tensor):
            return v
        key = float(v)
        t = self._scalar_cache.get(key)
        if t is None:
            t = self.const(np.array([key]))
            self._scalar_cache[key] = t
        return t

    def record(self, kind: str, *inputs, **kw) -> Tensor:
        """Public dispatch by operation kind name."""
        try:
            fn = _KIND_DISPATCH[kind]
        except KeyError:
            raise TraceError(f"unknown operation kind {kind!r}") from None
        return fn(*inputs, **kw)

    # -- packing and execution ----------------------------------------------

    def finalize(self) -> None:
        if self.finalized:
            return
        n = len(self._op)
        self.op_arr = np.asarray(self._op, dtype=np.int32)
        self.abc_arr = np.stack(
            [np.asarray(self._a, dtype=np.int32),
             np.asarray(self._b, dtype=np.int32),
             np.asarray(self._c, dtype=np.int32)], axis=1
        ) if n else np.zeros((0, 3), np.int32)
        self.iaux_arr = np.asarray(self._iaux, dtype=np.int32).reshape(n, 4)
        self.faux_arr = np.asarray(self._faux, dtype=np.float64).reshape(n, 2)
        sizes = np.asarray([v.size for v in self._vals], dtype=np.int64)
        self.sz_arr = sizes
        self.off_arr = np.zeros(n, dtype=np.int64)
        if n:
            np.cumsum(sizes[:-1], out=self.off_arr[1:])
        total = int(sizes.sum())
        self.buf = np.zeros(total, dtype=self.dtype)
        self.adj = np.zeros(total, dtype=self.dtype)
        self._views = []
        self._adj_views = []
        for i in range(n):
            o, s = self.off_arr[i], self._shapes[i]
            view = self.buf[o:o + sizes[i]].reshape(s)
            np.copyto(view, self._vals[i])
            self._views.append(view)
            self._adj_views.append(self.adj[o:o + sizes[i]].reshape(s))
        self._vals = list(self._views)
        self.finalized = True
        backend.prepare(self)

    def run_forward(self) -> None:
        """Re-evaluate every non-leaf node from current leaf values."""
        self.finalize()
        backend.run_forward(self)

    def zero_adjoints(self) -> None:
        self.finalize()
        self.adj[:] = 0.0

    def run_backward(self, seeds: Iterable[tuple[Tensor, np.ndarray]],
                     zero: bool = True) -> None:
        """Accumulate adjoints from explicit seeds (low-level entry point)."""
        self.finalize()
        if zero:
            self.adj[:] = 0.0
        for t, g in seeds:
            self._adj_views[t.idx] += np.asarray(g, dtype=self.dtype).reshape(t.shape)
        backend.run_backward(self)

    def backward(self, loss: Tensor) -> None:
        """Populate adjoints of every node with d(loss)/d(node)."""
        if loss.tape is not self:
            raise ContractError("loss tensor belongs to a different tape")
        if loss.size != 1:
            raise ContractError(
                f"backward requires a scalar loss; got shape {loss.shape}")
        self.run_backward([(loss, np.ones(1, dtype=self.dtype))])


# ---------------------------------------------------------------------------
# Recording helpers: shape checks, broadcast-mode resolution, node creation.
# ---------------------------------------------------------------------------

def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Tensor):
            return x.tape
    raise TraceError("at least one operand must be a Tensor")


def _as_tensor(tape: Tape, x) -> Tensor:
    if isinstance(x, Tensor):
        if x.tape is not tape:
            raise TraceError("operands recorded on different tapes")
        return x
    return tape.scalar(x)


def _binary_mode(kind: str, x: Tensor, y: Tensor,
                 commutative: bool) -> tuple[Tensor, Tensor, str, tuple]:
    if x.shape == y.shape:
        return x, y, "SS", (x.size, 0, 0, 0)
    if x.size == 1 and y.size == 1:
        # e.g. (1,) vs (1,1): the lower-rank side acts as the scalar
        x_is_scalar = len(x.shape) < len(y.shape)
    else:
        x_is_scalar = x.size == 1
    if y.size == 1 and not x_is_scalar:
        return x, y, "SB", (x.size, 0, 0, 0)
    if x_is_scalar:
        if commutative:
            return y, x, "SB", (y.size, 0, 0, 0)
        return x, y, "BS", (y.size, 0, 0, 0)
    if len(x.shape) == 2 and y.shape == (x.shape[0], 1):
        return x, y, "CB", (x.shape[0], x.shape[1], 0, 0)
    if len(x.shape) == 2 and len(y.shape) == 1 and x.shape[1] == y.shape[0]:
        return x, y, "RB", (x.shape[0], x.shape[1], 0, 0)
    raise TraceError(f"{kind}: incompatible shapes {x.shape} and {y.shape}")


_BIN_OPS = {
    "add": {"SS": ops.ADD_SS, "SB": ops.ADD_SB, "RB": ops.ADD_RB, "CB": ops.ADD_CB},
    "sub": {"SS": ops.SUB_SS, "SB": ops.SUB_SB, "BS": ops.SUB_BS,
            "RB": ops.SUB_RB, "CB": ops.SUB_CB},
    "mul": {"SS": ops.MUL_SS, "SB": ops.MUL_SB, "RB": ops.MUL_RB, "CB": ops.MUL_CB},
    "div": {"SS": ops.DIV_SS, "SB": ops.DIV_SB, "BS": ops.DIV_BS, "CB": ops.DIV_CB},
}


def _binary(kind: str, x, y) -> Tensor:
    tape = _tape_of(x, y)
    x = _as_tensor(tape, x)
    y = _as_tensor(tape, y)
    commutative = kind in ("add", "mul")
    x, y, mode, iaux = _binary_mode(kind, x, y, commutative)
    table = _BIN_OPS[kind]
    if mode not in table:
        raise TraceError(f"{kind}: unsupported broadcast {x.shape} vs {y.shape}")
    out_shape = y.shape if mode == "BS" else x.shape
    return tape._push(table[mode], out_shape, a=x.idx, b=y.idx, iaux=iaux)


def add(x, y) -> Tensor:
    return _binary("add", x, y)


def sub(x, y) -> Tensor:
    return _binary("sub", x, y)


def mul(x, y) -> Tensor:
    return _binary("mul", x, y)


def div(x, y) -> Tensor:
    return _binary("div", x, y)


def _unary(op: int, x: Tensor) -> Tensor:
    return x.tape._push(op, x.shape, a=x.idx, iaux=(x.size, 0, 0, 0))


def neg(x: Tensor) -> Tensor:
    return _unary(ops.NEG, x)


def relu(x: Tensor) -> Tensor:
    return _unary(ops.RELU, x)


def sin(x: Tensor) -> Tensor:
    return _unary(ops.SIN, x)


def cos(x: Tensor) -> Tensor:
    return _unary(ops.COS, x)


def sqrt(x: Tensor) -> Tensor:
    return _unary(ops.SQRT, x)


def abs_(x: Tensor) -> Tensor:
    return _unary(ops.ABS, x)


def atan(x: Tensor) -> Tensor:
    return _unary(ops.ATAN, x)


def minimum(x: Tensor, y: Tensor) -> Tensor:
    tape = _tape_of(x, y)
    x, y = _as_tensor(tape, x), _as_tensor(tape, y)
    if x.shape != y.shape:
        raise TraceError(f"min: shapes differ {x.shape} vs {y.shape}")
    return tape._push(ops.MIN_SS, x.shape, a=x.idx, b=y.idx,
                      iaux=(x.size, 0, 0, 0))


def maximum(x: Tensor, y: Tensor) -> Tensor:
    tape = _tape_of(x, y)
    x, y = _as_tensor(tape, x), _as_tensor(tape, y)
    if x.shape != y.shape:
        raise TraceError(f"max: shapes differ {x.shape} vs {y.shape}")
    return tape._push(ops.MAX_SS, x.shape, a=x.idx, b=y.idx,
                      iaux=(x.size, 0, 0, 0))


def clamp(x: Tensor, lo, hi) -> Tensor:
    """Clamp to [lo, hi]; bounds are floats or same-shape tensors."""
    tape = x.tape
    if isinstance(lo, Tensor) or isinstance(hi, Tensor):
        lo = _as_tensor(tape, lo) if isinstance(lo, Tensor) else \
            tape.const(np.full(x.shape, float(lo)))
        hi = _as_tensor(tape, hi) if isinstance(hi, Tensor) else \
            tape.const(np.full(x.shape, float(hi)))
        if lo.shape != x.shape or hi.shape != x.shape:
            raise TraceError(
                f"clamp: bounds {lo.shape}/{hi.shape} must match {x.shape}")
        return tape._push(ops.CLAMP_TENSOR, x.shape, a=x.idx, b=lo.idx,
                          c=hi.idx, iaux=(x.size, 0, 0, 0))
    return tape._push(ops.CLAMP_CONST, x.shape, a=x.idx,
                      iaux=(x.size, 0, 0, 0), faux=(float(lo), float(hi)))


def where_mask(mask: Tensor, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise select: a where mask > 0, else b; no gradient to mask."""
    tape = _tape_of(mask, a, b)
    mask, a, b = (_as_tensor(tape, t) for t in (mask, a, b))
    if a.shape != b.shape:
        raise TraceError(f"where_mask: branch shapes differ {a.shape} vs {b.shape}")
    if mask.shape == a.shape:
        op, iaux = ops.WHERE_SS, (a.size, 0, 0, 0)
    elif len(a.shape) == 2 and mask.shape == (a.shape[0], 1):
        op, iaux = ops.WHERE_CB, (a.shape[0], a.shape[1], 0, 0)
    else:
        raise TraceError(
            f"where_mask: mask {mask.shape} incompatible with {a.shape}")
    return tape._push(op, a.shape, a=mask.idx, b=a.idx, c=b.idx, iaux=iaux)


def concat(x: Tensor, y: Tensor) -> Tensor:
    """Concatenate two 2-D tensors along the trailing axis."""
    tape = _tape_of(x, y)
    x, y = _as_tensor(tape, x), _as_tensor(tape, y)
    if len(x.shape) != 2 or len(y.shape) != 2 or x.shape[0] != y.shape[0]:
        raise TraceError(f"concat: needs 2-D, equal rows; got {x.shape}, {y.shape}")
    rows, k1, k2 = x.shape[0], x.shape[1], y.shape[1]
    return tape._push(ops.CONCAT2, (rows, k1 + k2), a=x.idx, b=y.idx,
                      iaux=(rows, k1, k2, 0))


def concat_many(parts: Sequence[Tensor]) -> Tensor:
    out = parts[0]
    for p in parts[1:]:
        out = concat(out, p)
    return out


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if len(x.shape) != 2 or not (0 <= start < stop <= x.shape[1]):
        raise TraceError(f"slice: [{start}:{stop}] invalid for shape {x.shape}")
    rows = x.shape[0]
    return x.tape._push(ops.SLICE_COLS, (rows, stop - start), a=x.idx,
                        iaux=(rows, x.shape[1], start, stop))


def sum_(x: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        return x.tape._push(ops.SUM_ALL, (1,), a=x.idx, iaux=(x.size, 0, 0, 0))
    if axis in (-1, 1) and len(x.shape) == 2:
        return x.tape._push(ops.SUM_COLS, (x.shape[0], 1), a=x.idx,
                            iaux=(x.shape[0], x.shape[1], 0, 0))
    raise TraceError(f"sum: axis {axis} unsupported for shape {x.shape}")


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        return x.tape._push(ops.MEAN_ALL, (1,), a=x.idx, iaux=(x.size, 0, 0, 0))
    if axis in (-1, 1) and len(x.shape) == 2:
        return x.tape._push(ops.MEAN_COLS, (x.shape[0], 1), a=x.idx,
                            iaux=(x.shape[0], x.shape[1], 0, 0))
    raise TraceError(f"mean: axis {axis} unsupported for shape {x.shape}")


def l2norm(x: Tensor) -> Tensor:
    """Row-wise Euclidean norm of a 2-D tensor -> (rows, 1)."""
    if len(x.shape) != 2:
        raise TraceError(f"l2norm: needs 2-D input, got {x.shape}")
    return x.tape._push(ops.L2_COLS, (x.shape[0], 1), a=x.idx,
                        iaux=(x.shape[0], x.shape[1], 0, 0))


def matmul(x: Tensor, y: Tensor) -> Tensor:
    if len(x.shape) != 2 or len(y.shape) != 2 or x.shape[1] != y.shape[0]:
        raise TraceError(f"matmul: incompatible shapes {x.shape} @ {y.shape}")
    n, m = x.shape
    k = y.shape[1]
    return x.tape._push(ops.MATMUL, (n, k), a=x.idx, b=y.idx, iaux=(n, m, k, 0))


def bmm33(x: Tensor, y: Tensor) -> Tensor:
    """Batched 3x3 multiply: (B,3,3)@(B,3,3) -> (B,3,3) or (B,3,3)@(B,3) -> (B,3)."""
    if len(x.shape) != 3 or x.shape[1:] != (3, 3):
        raise TraceError(f"bmm33: first operand must be (B,3,3), got {x.shape}")
    nb = x.shape[0]
    if y.shape == (nb, 3, 3):
        return x.tape._push(ops.BMM33, (nb, 3, 3), a=x.idx, b=y.idx,
                            iaux=(nb, 0, 0, 0))
    if y.shape == (nb, 3):
        return x.tape._push(ops.BMV3, (nb, 3), a=x.idx, b=y.idx,
                            iaux=(nb, 0, 0, 0))
    raise TraceError(f"bmm33: incompatible shapes {x.shape} @ {y.shape}")


def transpose(x: Tensor) -> Tensor:
    if len(x.shape) == 2:
        n, m = x.shape
        return x.tape._push(ops.T2D, (m, n), a=x.idx, iaux=(n, m, 0, 0))
    if len(x.shape) == 3 and x.shape[1:] == (3, 3):
        return x.tape._push(ops.T33, x.shape, a=x.idx, iaux=(x.shape[0], 0, 0, 0))
    raise TraceError(f"transpose: unsupported shape {x.shape}")


def cross3(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape or len(x.shape) != 2 or x.shape[1] != 3:
        raise TraceError(f"cross3: needs matching (B,3) inputs, got {x.shape}, {y.shape}")
    return x.tape._push(ops.CROSS3, x.shape, a=x.idx, b=y.idx,
                        iaux=(x.shape[0], 0, 0, 0))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise TraceError(f"reshape: cannot view {x.shape} as {shape}")
    return x.tape._push(ops.RESHAPE, shape, a=x.idx, iaux=(x.size, 0, 0, 0))


_KIND_DISPATCH = {
    "add": add, "sub": sub, "mul": mul, "div": div, "neg": neg,
    "matmul": matmul, "transpose": transpose, "sum": sum_, "mean": mean,
    "relu": relu, "sin": sin, "cos": cos, "sqrt": sqrt, "abs": abs_,
    "min": minimum, "max": maximum, "clamp": clamp, "where_mask": where_mask,
    "concat": concat, "slice": slice_cols, "l2norm": l2norm, "cross3": cross3,
    "batched-3x3-matmul": bmm33, "bmm33": bmm33,
    # extensions beyond the core kernel set (joint encoders, layout moves)
    "atan": atan, "reshape": reshape,
}
