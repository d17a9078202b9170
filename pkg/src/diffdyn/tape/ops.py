"""Primitive operation set for the recording tape.

Every node on a tape is one of the opcodes below.  Binary elementwise
opcodes come in broadcast variants resolved at record time: SS (same
shape), SB (second operand is a single scalar), BS (first operand is a
single scalar), RB (second operand is a row vector broadcast over the
leading axis), CB (second operand is a per-row column broadcast over the
trailing axis).

The numpy kernels here are the reference executors; the compiled core in
``_core.pyx`` implements the same table over flat buffers and must stay
in sync (see OPCODE_NAMES and the parity tests).

Subgradient conventions, fixed engine-wide:
  relu'(0) = 0; |x|'(0) = 0; clamp' = 1 strictly inside the interval and 0
  at and outside the boundaries (with tensor bounds, the gradient is routed
  to the active bound instead); min/max route the gradient to the first
  argument on ties; where_mask passes gradient only through the selected
  branch and never through the mask.
"""

from __future__ import annotations

import numpy as np

LEAF = 0

ADD_SS = 1
ADD_SB = 2
ADD_RB = 3
ADD_CB = 4
SUB_SS = 5
SUB_SB = 6
SUB_BS = 7
SUB_RB = 8
SUB_CB = 9
MUL_SS = 10
MUL_SB = 11
MUL_RB = 12
MUL_CB = 13
DIV_SS = 14
DIV_SB = 15
DIV_BS = 16
DIV_CB = 17

NEG = 18
RELU = 19
SIN = 20
COS = 21
SQRT = 22
ABS = 23
ATAN = 24

MIN_SS = 25
MAX_SS = 26
CLAMP_CONST = 27
CLAMP_TENSOR = 28
WHERE_SS = 29
WHERE_CB = 30

CONCAT2 = 31
SLICE_COLS = 32
SUM_COLS = 33
SUM_ALL = 34
MEAN_COLS = 35
MEAN_ALL = 36
L2_COLS = 37

MATMUL = 38
BMM33 = 39
BMV3 = 40
T33 = 41
T2D = 42
CROSS3 = 43
RESHAPE = 44

N_OPCODES = 45

OPCODE_NAMES = {
    LEAF: "leaf",
    ADD_SS: "add_ss", ADD_SB: "add_sb", ADD_RB: "add_rb", ADD_CB: "add_cb",
    SUB_SS: "sub_ss", SUB_SB: "sub_sb", SUB_BS: "sub_bs", SUB_RB: "sub_rb",
    SUB_CB: "sub_cb",
    MUL_SS: "mul_ss", MUL_SB: "mul_sb", MUL_RB: "mul_rb", MUL_CB: "mul_cb",
    DIV_SS: "div_ss", DIV_SB: "div_sb", DIV_BS: "div_bs", DIV_CB: "div_cb",
    NEG: "neg", RELU: "relu", SIN: "sin", COS: "cos", SQRT: "sqrt",
    ABS: "abs", ATAN: "atan",
    MIN_SS: "min_ss", MAX_SS: "max_ss",
    CLAMP_CONST: "clamp_const", CLAMP_TENSOR: "clamp_tensor",
    WHERE_SS: "where_ss", WHERE_CB: "where_cb",
    CONCAT2: "concat2", SLICE_COLS: "slice_cols",
    SUM_COLS: "sum_cols", SUM_ALL: "sum_all",
    MEAN_COLS: "mean_cols", MEAN_ALL: "mean_all", L2_COLS: "l2_cols",
    MATMUL: "matmul", BMM33: "bmm33", BMV3: "bmv3",
    T33: "t33", T2D: "t2d", CROSS3: "cross3", RESHAPE: "reshape",
}

_L2_EPS = 1e-12


# ---------------------------------------------------------------------------
# Forward kernels.  Signature: fwd(out, x, y, z, ia, fa) with logical-shape
# views; unused arguments are None.
# ---------------------------------------------------------------------------

def _f_add_ss(out, x, y, z, ia, fa):
    np.add(x, y, out=out)


def _f_add_sb(out, x, y, z, ia, fa):
    np.add(x, y.reshape(()) if y.size == 1 else y, out=out)


def _f_add_rb(out, x, y, z, ia, fa):
    np.add(x, y, out=out)


_f_add_cb = _f_add_rb


def _f_sub_ss(out, x, y, z, ia, fa):
    np.subtract(x, y, out=out)


def _f_sub_sb(out, x, y, z, ia, fa):
    np.subtract(x, y.reshape(()), out=out)


def _f_sub_bs(out, x, y, z, ia, fa):
    np.subtract(x.reshape(()), y, out=out)


def _f_sub_rb(out, x, y, z, ia, fa):
    np.subtract(x, y, out=out)


_f_sub_cb = _f_sub_rb


def _f_mul_ss(out, x, y, z, ia, fa):
    np.multiply(x, y, out=out)


def _f_mul_sb(out, x, y, z, ia, fa):
    np.multiply(x, y.reshape(()), out=out)


def _f_mul_rb(out, x, y, z, ia, fa):
    np.multiply(x, y, out=out)


_f_mul_cb = _f_mul_rb


def _f_div_ss(out, x, y, z, ia, fa):
    np.divide(x, y, out=out)


def _f_div_sb(out, x, y, z, ia, fa):
    np.divide(x, y.reshape(()), out=out)


def _f_div_bs(out, x, y, z, ia, fa):
    np.divide(x.reshape(()), y, out=out)


def _f_div_cb(out, x, y, z, ia, fa):
    np.divide(x, y, out=out)


def _f_neg(out, x, y, z, ia, fa):
    np.negative(x, out=out)


def _f_relu(out, x, y, z, ia, fa):
    np.maximum(x, 0.0, out=out)


def _f_sin(out, x, y, z, ia, fa):
    np.sin(x, out=out)


def _f_cos(out, x, y, z, ia, fa):
    np.cos(x, out=out)


def _f_sqrt(out, x, y, z, ia, fa):
    np.sqrt(x, out=out)


def _f_abs(out, x, y, z, ia, fa):
    np.absolute(x, out=out)


def _f_atan(out, x, y, z, ia, fa):
    np.arctan(x, out=out)


def _f_min_ss(out, x, y, z, ia, fa):
    np.minimum(x, y, out=out)


def _f_max_ss(out, x, y, z, ia, fa):
    np.maximum(x, y, out=out)


def _f_clamp_const(out, x, y, z, ia, fa):
    np.clip(x, fa[0], fa[1], out=out)


def _f_clamp_tensor(out, x, y, z, ia, fa):
    # min(max(x, lo), hi): the hi bound wins when lo > hi.
    np.clip(x, y, z, out=out)


def _f_where_ss(out, x, y, z, ia, fa):
    np.copyto(out, z)
    np.copyto(out, y, where=x > 0)


_f_where_cb = _f_where_ss


def _f_concat2(out, x, y, z, ia, fa):
    k1 = ia[1]
    out[:, :k1] = x
    out[:, k1:] = y


def _f_slice_cols(out, x, y, z, ia, fa):
    np.copyto(out, x[:, ia[2]:ia[3]])


def _f_sum_cols(out, x, y, z, ia, fa):
    np.sum(x, axis=1, keepdims=True, out=out)


def _f_sum_all(out, x, y, z, ia, fa):
    out[0] = x.sum()


def _f_mean_cols(out, x, y, z, ia, fa):
    np.mean(x, axis=1, keepdims=True, out=out)


def _f_mean_all(out, x, y, z, ia, fa):
    out[0] = x.mean()


def _f_l2_cols(out, x, y, z, ia, fa):
    np.sqrt(np.sum(x * x, axis=1, keepdims=True), out=out)


def _f_matmul(out, x, y, z, ia, fa):
    # row-by-row so each batch row's bits are independent of the batch size
    for i in range(x.shape[0]):
        np.matmul(x[i], y, out=out[i])


def _f_bmm33(out, x, y, z, ia, fa):
    np.matmul(x, y, out=out)


def _f_bmv3(out, x, y, z, ia, fa):
    np.matmul(x, y[:, :, None], out=out[:, :, None])


def _f_t33(out, x, y, z, ia, fa):
    np.copyto(out, np.swapaxes(x, 1, 2))


def _f_t2d(out, x, y, z, ia, fa):
    np.copyto(out, x.T)


def _f_cross3(out, x, y, z, ia, fa):
    np.copyto(out, np.cross(x, y))


def _f_reshape(out, x, y, z, ia, fa):
    np.copyto(out.reshape(-1), x.reshape(-1))


FWD = [None] * N_OPCODES
FWD[ADD_SS] = _f_add_ss
FWD[ADD_SB] = _f_add_sb
FWD[ADD_RB] = _f_add_rb
FWD[ADD_CB] = _f_add_cb
FWD[SUB_SS] = _f_sub_ss
FWD[SUB_SB] = _f_sub_sb
FWD[SUB_BS] = _f_sub_bs
FWD[SUB_RB] = _f_sub_rb
FWD[SUB_CB] = _f_sub_cb
FWD[MUL_SS] = _f_mul_ss
FWD[MUL_SB] = _f_mul_sb
FWD[MUL_RB] = _f_mul_rb
FWD[MUL_CB] = _f_mul_cb
FWD[DIV_SS] = _f_div_ss
FWD[DIV_SB] = _f_div_sb
FWD[DIV_BS] = _f_div_bs
FWD[DIV_CB] = _f_div_cb
FWD[NEG] = _f_neg
FWD[RELU] = _f_relu
FWD[SIN] = _f_sin
FWD[COS] = _f_cos
FWD[SQRT] = _f_sqrt
FWD[ABS] = _f_abs
FWD[ATAN] = _f_atan
FWD[MIN_SS] = _f_min_ss
FWD[MAX_SS] = _f_max_ss
FWD[CLAMP_CONST] = _f_clamp_const
FWD[CLAMP_TENSOR] = _f_clamp_tensor
FWD[WHERE_SS] = _f_where_ss
FWD[WHERE_CB] = _f_where_cb
FWD[CONCAT2] = _f_concat2
FWD[SLICE_COLS] = _f_slice_cols
FWD[SUM_COLS] = _f_sum_cols
FWD[SUM_ALL] = _f_sum_all
FWD[MEAN_COLS] = _f_mean_cols
FWD[MEAN_ALL] = _f_mean_all
FWD[L2_COLS] = _f_l2_cols
FWD[MATMUL] = _f_matmul
FWD[BMM33] = _f_bmm33
FWD[BMV3] = _f_bmv3
FWD[T33] = _f_t33
FWD[T2D] = _f_t2d
FWD[CROSS3] = _f_cross3
FWD[RESHAPE] = _f_reshape


# ---------------------------------------------------------------------------
# Backward kernels.  Signature: bwd(g, ax, ay, az, x, y, z, out, ia, fa).
# g is the adjoint of the output; ax/ay/az are adjoint views of the inputs
# (None where the input is absent).  Kernels accumulate with +=.
# ---------------------------------------------------------------------------

def _b_add_ss(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += g
    ay += g


def _b_add_sb(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += g
    ay += g.sum()


def _b_add_rb(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += g
    ay += g.sum(axis=0)


def _b_add_cb(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += g
    ay += g.sum(axis=1, keepdims=True)


def _b_sub_ss(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += g
    ay -= g


def _b_sub_sb(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += g
    ay -= g.sum()


def _b_sub_bs(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += g.sum()
    ay -= g


def _b_sub_rb(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += g
    ay -= g.sum(axis=0)


def _b_sub_cb(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += g
    ay -= g.sum(axis=1, keepdims=True)


def _b_mul_ss(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += g * y
    ay += g * x


def _b_mul_sb(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += g * y.reshape(())
    ay += (g * x).sum()


def _b_mul_rb(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += g * y
    ay += (g * x).sum(axis=0)


def _b_mul_cb(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += g * y
    ay += (g * x).sum(axis=1, keepdims=True)


def _b_div_ss(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += g / y
    ay -= g * out / y


def _b_div_sb(g, ax, ay, az, x, y, z, out, ia, fa):
    ys = y.reshape(())
    ax += g / ys
    ay -= (g * out).sum() / ys


def _b_div_bs(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += (g / y).sum()
    ay -= g * out / y


def _b_div_cb(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += g / y
    ay -= (g * out / y).sum(axis=1, keepdims=True)


def _b_neg(g, ax, ay, az, x, y, z, out, ia, fa):
    ax -= g


def _b_relu(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += g * (x > 0)


def _b_sin(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += g * np.cos(x)


def _b_cos(g, ax, ay, az, x, y, z, out, ia, fa):
    ax -= g * np.sin(x)


def _b_sqrt(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += g * 0.5 / out


def _b_abs(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += g * np.sign(x)


def _b_atan(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += g / (1.0 + x * x)


def _b_min_ss(g, ax, ay, az, x, y, z, out, ia, fa):
    m = x <= y
    ax += g * m
    ay += g * ~m


def _b_max_ss(g, ax, ay, az, x, y, z, out, ia, fa):
    m = x >= y
    ax += g * m
    ay += g * ~m


def _b_clamp_const(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += g * ((x > fa[0]) & (x < fa[1]))


def _b_clamp_tensor(g, ax, ay, az, x, y, z, out, ia, fa):
    low = x <= y
    high = (x >= z) & ~low
    ax += g * ~(low | high)
    ay += g * low
    az += g * high


def _b_where_ss(g, ax, ay, az, x, y, z, out, ia, fa):
    m = x > 0
    ay += g * m
    az += g * ~m


_b_where_cb = _b_where_ss


def _b_concat2(g, ax, ay, az, x, y, z, out, ia, fa):
    k1 = ia[1]
    ax += g[:, :k1]
    ay += g[:, k1:]


def _b_slice_cols(g, ax, ay, az, x, y, z, out, ia, fa):
    ax[:, ia[2]:ia[3]] += g


def _b_sum_cols(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += g


def _b_sum_all(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += g.reshape(-1)[0]


def _b_mean_cols(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += g / ia[1]


def _b_mean_all(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += g.reshape(-1)[0] / x.size


def _b_l2_cols(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += g * (x / np.maximum(out, _L2_EPS))


def _b_matmul(g, ax, ay, az, x, y, z, out, ia, fa):
    for i in range(x.shape[0]):
        ax[i] += g[i] @ y.T
    ay += x.T @ g


def _b_bmm33(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += g @ np.swapaxes(y, 1, 2)
    ay += np.swapaxes(x, 1, 2) @ g


def _b_bmv3(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += g[:, :, None] * y[:, None, :]
    ay += np.einsum("bij,bi->bj", x, g)


def _b_t33(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += np.swapaxes(g, 1, 2)


def _b_t2d(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += g.T


def _b_cross3(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += np.cross(y, g)
    ay += np.cross(g, x)


def _b_reshape(g, ax, ay, az, x, y, z, out, ia, fa):
    ax += g.reshape(ax.shape)


BWD = [None] * N_OPCODES
BWD[ADD_SS] = _b_add_ss
BWD[ADD_SB] = _b_add_sb
BWD[ADD_RB] = _b_add_rb
BWD[ADD_CB] = _b_add_cb
BWD[SUB_SS] = _b_sub_ss
BWD[SUB_SB] = _b_sub_sb
BWD[SUB_BS] = _b_sub_bs
BWD[SUB_RB] = _b_sub_rb
BWD[SUB_CB] = _b_sub_cb
BWD[MUL_SS] = _b_mul_ss
BWD[MUL_SB] = _b_mul_sb
BWD[MUL_RB] = _b_mul_rb
BWD[MUL_CB] = _b_mul_cb
BWD[DIV_SS] = _b_div_ss
BWD[DIV_SB] = _b_div_sb
BWD[DIV_BS] = _b_div_bs
BWD[DIV_CB] = _b_div_cb
BWD[NEG] = _b_neg
BWD[RELU] = _b_relu
BWD[SIN] = _b_sin
BWD[COS] = _b_cos
BWD[SQRT] = _b_sqrt
BWD[ABS] = _b_abs
BWD[ATAN] = _b_atan
BWD[MIN_SS] = _b_min_ss
BWD[MAX_SS] = _b_max_ss
BWD[CLAMP_CONST] = _b_clamp_const
BWD[CLAMP_TENSOR] = _b_clamp_tensor
BWD[WHERE_SS] = _b_where_ss
BWD[WHERE_CB] = _b_where_cb
BWD[CONCAT2] = _b_concat2
BWD[SLICE_COLS] = _b_slice_cols
BWD[SUM_COLS] = _b_sum_cols
BWD[SUM_ALL] = _b_sum_all
BWD[MEAN_COLS] = _b_mean_cols
BWD[MEAN_ALL] = _b_mean_all
BWD[L2_COLS] = _b_l2_cols
BWD[MATMUL] = _b_matmul
BWD[BMM33] = _b_bmm33
BWD[BMV3] = _b_bmv3
BWD[T33] = _b_t33
BWD[T2D] = _b_t2d
BWD[CROSS3] = _b_cross3
BWD[RESHAPE] = _b_reshape
