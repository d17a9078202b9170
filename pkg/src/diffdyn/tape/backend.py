"""Executor selection: compiled core when importable, numpy fallback otherwise.

The compiled core handles 64-bit tapes only; 32-bit tapes always run on the
numpy executor.  ``DIFFDYN_BACKEND=python|compiled`` overrides the default
(requesting ``compiled`` when it is unavailable raises at import of the tape
that needs it).
"""

from __future__ import annotations

import os

import numpy as np

try:
    from . import _core
    HAVE_COMPILED = True
except ImportError:  # pragma: no cover - depends on the build environment
    _core = None
    HAVE_COMPILED = False

_FORCED = os.environ.get("DIFFDYN_BACKEND", "").strip().lower() or None


def default_backend() -> str:
    if _FORCED == "python":
        return "python"
    if _FORCED == "compiled":
        if not HAVE_COMPILED:
            raise RuntimeError(
                "DIFFDYN_BACKEND=compiled but diffdyn.tape._core is not built")
        return "compiled"
    return "compiled" if HAVE_COMPILED else "python"


def prepare(tape) -> None:
    name = default_backend()
    if name == "compiled" and tape.dtype != np.float64:
        name = "python"
    tape._backend = name
    tape._py_fwd = None
    tape._py_bwd = None


def _ensure_py(tape) -> None:
    if tape._py_fwd is None:
        from . import py_vm
        py_vm.prepare(tape)


def run_forward(tape) -> None:
    if tape._backend == "compiled":
        _core.run_forward(tape.op_arr, tape.abc_arr, tape.iaux_arr,
                          tape.faux_arr, tape.off_arr, tape.sz_arr, tape.buf)
    else:
        _ensure_py(tape)
        from . import py_vm
        py_vm.run_forward(tape)


def run_backward(tape) -> None:
    if tape._backend == "compiled":
        _core.run_backward(tape.op_arr, tape.abc_arr, tape.iaux_arr,
                           tape.faux_arr, tape.off_arr, tape.sz_arr,
                           tape.buf, tape.adj)
    else:
        _ensure_py(tape)
        from . import py_vm
        py_vm.run_backward(tape)
