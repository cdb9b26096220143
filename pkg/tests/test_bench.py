import time

import numpy as np
import pytest

from salad.bench import (
    benchmark_inference,
    encoder_stack_rows,
    init_recurrent_reference,
    recurrent_reference_forward,
)
from salad.model import SaladConfig, build_model

TINY = dict(n_frames=6, n_freq=16, conv_channels=2, conv_blocks=1, pool_sizes=(4,), width=8,
            n_heads=2, grid_alpha=90, fft_size=32, variant="CMH")


def test_gru_zero_input_closed_form():
    p = init_recurrent_reference(np.random.default_rng(0), 8)
    out = recurrent_reference_forward(np.zeros((3, 8)), p)
    z = 1 / (1 + np.exp(-p["bz"]))
    r = 1 / (1 + np.exp(-p["br"]))
    h1 = (1 - z) * np.tanh(p["bn"] + r * p["bhn"])
    np.testing.assert_allclose(out[0], h1, atol=1e-12)
    np.testing.assert_array_equal(out, recurrent_reference_forward(np.zeros((3, 8)), p))


def test_gru_sequential_dependency():
    rng = np.random.default_rng(1)
    p = init_recurrent_reference(rng, 8)
    x = rng.standard_normal((5, 8))
    y = x.copy()
    y[2] += 0.5
    a, b = recurrent_reference_forward(x, p), recurrent_reference_forward(y, p)
    np.testing.assert_array_equal(a[:2], b[:2])
    assert not np.allclose(a[3], b[3])


def test_encoder_rows_match_model():
    m = build_model(SaladConfig(**TINY), seed=0)
    x = np.random.default_rng(2).standard_normal((6, 8))
    np.testing.assert_allclose(encoder_stack_rows(m, x, None, 3), m.stack.forward(x, keep_cache=False),
                               atol=1e-12)


def test_report_shape_and_positive_latencies():
    m = build_model(SaladConfig(**TINY), seed=0)
    seqs = np.random.default_rng(3).standard_normal((2, 6, 16, 6))
    rep = benchmark_inference(m, seqs, worker_counts=(1, 2), warmup=2, runs=5)
    assert len(rep.rows) == 6
    assert all(r["median_s"] > 0 and r["q1_s"] <= r["median_s"] <= r["q3_s"] for r in rep.rows)
    assert "logical CPUs" in rep.table().splitlines()[0]
    lines = rep.csv().splitlines()
    assert lines[0].startswith("kind,workers,median_s") and len(lines) == 7
    assert rep.median("full", 2) > 0
    with pytest.raises(KeyError):
        rep.median("full", 8)
    with pytest.raises(ValueError):
        benchmark_inference(m, [], worker_counts=(1,))


def test_recurrent_cost_is_linear_in_frames():
    p = init_recurrent_reference(np.random.default_rng(4), 128)
    x = np.random.default_rng(5).standard_normal((400, 128))

    def once(n):
        t0 = time.perf_counter()
        recurrent_reference_forward(x[:n], p)
        return time.perf_counter() - t0

    once(400)
    # interleaved so that host load drifts hit both lengths alike
    ratios = [once(400) / once(200) for _ in range(40)]
    assert abs(np.median(ratios) - 2) <= 0.5
