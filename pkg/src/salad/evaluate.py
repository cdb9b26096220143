"""Sequence-level localization metrics."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations
from typing import Sequence

import numpy as np

from .grid import angular_distance

__all__ = ["EvalReport", "match_estimates", "compute_metrics", "format_report"]


def match_estimates(estimates, truths) -> np.ndarray:
    """Per-truth angular errors under the assignment minimizing total error.

    Both arguments are lists of (el, az) in degrees with the same length.
    The search is exhaustive over permutations, which is exact and cheap for
    the source counts used here (S <= 3). Errors are returned in truth order.
    """
    est = np.asarray(estimates, dtype=float).reshape(-1, 2)
    tru = np.asarray(truths, dtype=float).reshape(-1, 2)
    if len(est) != len(tru):
        raise ValueError(f"{len(est)} estimates cannot be matched to {len(tru)} truths")
    if len(tru) == 0:
        return np.zeros(0)
    cost = angular_distance(tru[:, None, :], est[None, :, :])  # (truth, estimate)
    cost = np.atleast_2d(cost)
    s = len(tru)
    best, best_perm = np.inf, None
    for perm in permutations(range(s)):
        total = cost[np.arange(s), perm].sum()
        if total < best:
            best, best_perm = total, perm
    return cost[np.arange(s), best_perm]


@dataclass(frozen=True)
class EvalReport:
    accuracy: dict[float, float]  # tolerance (deg) -> percent of correct sequences
    mean_err: float
    median_err: float
    std_err: float
    n_sequences: int

    @property
    def acc_10(self) -> float:
        return self.accuracy[10.0]

    @property
    def acc_15(self) -> float:
        return self.accuracy[15.0]


def compute_metrics(
    errors_per_sequence: Sequence[Sequence[float]],
    tolerances: Sequence[float] = (10.0, 15.0),
    require_all: bool = True,
) -> EvalReport:
    """Accuracy at each tolerance plus pooled error statistics.

    With ``require_all`` (default) a sequence is correct at tolerance t only
    if every matched source error is below t. Otherwise each source is scored
    on its own and accuracy is the percentage of correct sources.
    """
    seqs = [np.asarray(e, dtype=float).reshape(-1) for e in errors_per_sequence]
    if not seqs:
        raise ValueError("no sequences to evaluate")
    pooled = np.concatenate(seqs)
    if pooled.size == 0:
        raise ValueError("sequences contain no matched errors")
    acc = {}
    for tol in tolerances:
        if require_all:
            ok = [bool(np.all(e < tol)) for e in seqs]
        else:
            ok = list(pooled < tol)
        acc[float(tol)] = 100.0 * float(np.mean(ok))
    return EvalReport(acc, float(pooled.mean()), float(np.median(pooled)),
                      float(pooled.std()), len(seqs))


def format_report(report: EvalReport, label: str = "") -> str:
    cols = [f"Acc. <{t:g}°" for t in report.accuracy] + ["Mean", "Med.", "Std.", "N"]
    vals = [f"{a:.1f}" for a in report.accuracy.values()] + [
        f"{report.mean_err:.1f}", f"{report.median_err:.1f}", f"{report.std_err:.1f}",
        str(report.n_sequences),
    ]
    width = max(len(c) for c in cols) + 2
    head = "".join(c.rjust(width) for c in cols)
    row = "".join(v.rjust(width) for v in vals)
    if label:
        pad = max(len(label), 5) + 2
        return "Model".ljust(pad) + head + "\n" + label.ljust(pad) + row
    return head + "\n" + row
