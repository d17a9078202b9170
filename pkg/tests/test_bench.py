"""Benchmark harness: grid schema, batching economy, backend comparison."""

import numpy as np
import pytest

from diffdyn.bench import (
    BENCH_CSV_HEADER,
    SMALL_CONTROLLER,
    bench_rows_to_csv,
    measure_case,
    model_seconds_per_day,
    run_benchmark,
)


def test_csv_header():
    assert BENCH_CSV_HEADER == "batch,params,workers,fwd_s,fwd_bwd_s,ratio"


def test_small_grid_rows():
    rows = run_benchmark(batches=(1,), controllers=(SMALL_CONTROLLER,),
                         workers=(1,), duration=0.05)
    assert len(rows) == 1
    r = rows[0]
    assert r.params == 17944
    assert r.fwd_s > 0 and r.fwd_bwd_s > r.fwd_s
    csv = bench_rows_to_csv(rows).splitlines()
    assert csv[0] == BENCH_CSV_HEADER
    assert csv[1].startswith("1,17944,1,")
    assert model_seconds_per_day(r, 0.05) > 0


@pytest.mark.slow
def test_batched_per_robot_cost_beats_serial():
    """Per-robot cost at batch 64 is well below 64x the single-robot cost."""
    single = measure_case(SMALL_CONTROLLER, batch=1, workers=1, duration=0.1)
    batched = measure_case(SMALL_CONTROLLER, batch=64, workers=2, duration=0.1)
    per_robot_batched = batched.fwd_s / 64
    assert per_robot_batched < 0.5 * single.fwd_s


def test_backend_comparison_runs():
    from diffdyn.tape import HAVE_COMPILED
    if not HAVE_COMPILED:
        pytest.skip("compiled core unavailable")
    a = measure_case(SMALL_CONTROLLER, 1, 1, duration=0.03,
                     backend="compiled")
    b = measure_case(SMALL_CONTROLLER, 1, 1, duration=0.03, backend="python")
    assert a.fwd_s > 0 and b.fwd_s > 0
    # the compiled core is the point of the split: it should not be slower
    assert a.fwd_s < b.fwd_s
