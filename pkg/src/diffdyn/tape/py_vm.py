"""Pure-numpy tape executor; the fallback twin of the compiled core.

Builds per-node argument tuples once per tape, then replays them.  Semantics
match ``_core`` exactly; performance is what numpy dispatch allows.
"""

from __future__ import annotations

from . import ops


def prepare(tape) -> None:
    fwd = []
    views = tape._views
    avs = tape._adj_views
    op_list = tape._op
    a_list, b_list, c_list = tape._a, tape._b, tape._c
    for i in range(len(op_list)):
        op = op_list[i]
        if op == ops.LEAF:
            continue
        a, b, c = a_list[i], b_list[i], c_list[i]
        fwd.append((
            ops.FWD[op], views[i],
            views[a] if a >= 0 else None,
            views[b] if b >= 0 else None,
            views[c] if c >= 0 else None,
            tape._iaux[i], tape._faux[i],
        ))
    bwd = []
    for i in range(len(op_list) - 1, -1, -1):
        op = op_list[i]
        if op == ops.LEAF:
            continue
        a, b, c = a_list[i], b_list[i], c_list[i]
        bwd.append((
            ops.BWD[op], avs[i],
            avs[a] if a >= 0 else None,
            avs[b] if b >= 0 else None,
            avs[c] if c >= 0 else None,
            views[a] if a >= 0 else None,
            views[b] if b >= 0 else None,
            views[c] if c >= 0 else None,
            views[i], tape._iaux[i], tape._faux[i],
        ))
    tape._py_fwd = fwd
    tape._py_bwd = bwd


def run_forward(tape) -> None:
    for fn, out, x, y, z, ia, fa in tape._py_fwd:
        fn(out, x, y, z, ia, fa)


def run_backward(tape) -> None:
    for fn, g, ax, ay, az, x, y, z, out, ia, fa in tape._py_bwd:
        if not g.any():
            continue
        fn(g, ax, ay, az, x, y, z, out, ia, fa)
