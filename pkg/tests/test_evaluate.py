from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from salad.evaluate import compute_metrics, format_report, match_estimates
from salad.grid import angular_distance


def test_identical_estimates_give_zero_error():
    t = [(10.0, 20.0), (-30.0, 150.0)]
    np.testing.assert_allclose(match_estimates(t, t), 0, atol=1e-6)


def test_swapped_order_same_errors():
    truths = [(0.0, 0.0), (20.0, 90.0)]
    est = [(1.0, 2.0), (18.0, 95.0)]
    np.testing.assert_allclose(match_estimates(est[::-1], truths), match_estimates(est, truths))


def brute_min_total(est, truths):
    best = None
    for p in permutations(range(len(est))):
        errs = [angular_distance(est[p[k]], truths[k]) for k in range(len(truths))]
        if best is None or sum(errs) < sum(best):
            best = errs
    return best


direction = st.tuples(st.floats(-90, 90), st.floats(-180, 180))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(direction, direction), min_size=1, max_size=3))
def test_matches_brute_force(pairs):
    est = [p[0] for p in pairs]
    truths = [p[1] for p in pairs]
    got = match_estimates(est, truths)
    assert got.sum() == pytest.approx(sum(brute_min_total(est, truths)), abs=1e-6)


def test_length_mismatch():
    with pytest.raises(ValueError):
        match_estimates([(0, 0)], [(0, 0), (1, 1)])


def test_metrics_examples():
    r = compute_metrics([[0.0], [0.0, 0.0]])
    assert r.acc_10 == r.acc_15 == 100 and r.mean_err == r.median_err == r.std_err == 0
    r = compute_metrics([[5.0, 12.0]])
    assert r.acc_15 == 100 and r.acc_10 == 0
    r = compute_metrics([[4.0, 6.0], [8.0], [20.0]])
    assert r.mean_err == pytest.approx(9.5) and r.median_err == pytest.approx(7.0)
    assert r.std_err == pytest.approx(np.std([4, 6, 8, 20]))
    assert r.n_sequences == 3


def test_per_source_reading():
    r = compute_metrics([[5.0, 12.0], [3.0]], require_all=False)
    assert r.acc_10 == pytest.approx(200 / 3)
    assert compute_metrics([[5.0, 12.0], [3.0]]).acc_10 == 50


def test_empty_input():
    with pytest.raises(ValueError):
        compute_metrics([])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.floats(0, 180), min_size=1, max_size=3), min_size=1, max_size=12),
       st.randoms(use_true_random=False))
def test_metric_invariants(seqs, rnd):
    r = compute_metrics(seqs)
    assert 0 <= r.acc_10 <= r.acc_15 <= 100
    assert min(r.mean_err, r.median_err, r.std_err) >= 0
    shuffled = list(seqs)
    rnd.shuffle(shuffled)
    s = compute_metrics(shuffled)
    assert s.accuracy == r.accuracy and s.median_err == r.median_err
    assert s.mean_err == pytest.approx(r.mean_err)


def test_format_report_columns():
    text = format_report(compute_metrics([[3.0], [11.0]]), "TRAMP")
    head, row = text.splitlines()
    for col in ("Acc. <10°", "Acc. <15°", "Mean", "Med.", "Std."):
        assert col in head
    assert row.startswith("TRAMP") and "50.0" in row and "100.0" in row
