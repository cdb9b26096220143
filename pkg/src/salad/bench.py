"""Inference latency versus worker count, with a recurrent contrast cell.

The encoder stack parallelizes over frames (see
:func:`salad.attention.encoder_forward_rows`); the recurrent reference
cannot, because frame t needs the hidden state of frame t - 1.
"""

from __future__ import annotations

import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .attention import encoder_forward_rows
from .grid import extract_peaks
from .model import SaladModel
from . import nn
from .nn import sigmoid

__all__ = [
    "init_recurrent_reference",
    "recurrent_reference_forward",
    "encoder_stack_rows",
    "TimingReport",
    "benchmark_inference",
    "host_description",
]


def init_recurrent_reference(rng: np.random.Generator, width: int, dtype=np.float64) -> dict:
    """GRU cell parameters (update z, reset r, candidate n) with small random weights."""
    s = 1.0 / np.sqrt(width)
    p = {}
    for gate in ("z", "r", "n"):
        p["w" + gate] = rng.uniform(-s, s, (width, width)).astype(dtype)
        p["u" + gate] = rng.uniform(-s, s, (width, width)).astype(dtype)
        p["b" + gate] = rng.uniform(-s, s, width).astype(dtype)
    p["bhn"] = rng.uniform(-s, s, width).astype(dtype)
    return p


def recurrent_reference_forward(x: np.ndarray, p: dict, h0: np.ndarray | None = None) -> np.ndarray:
    """Run a GRU over the frames of x (N, G), strictly one frame after another.

    Used only as a timing contrast to the encoder stack.
    """
    n, g = x.shape
    h = np.zeros(g, dtype=x.dtype) if h0 is None else h0
    out = np.empty_like(x)
    for t in range(n):
        z, _ = sigmoid(p["wz"] @ x[t] + p["uz"] @ h + p["bz"])
        r, _ = sigmoid(p["wr"] @ x[t] + p["ur"] @ h + p["br"])
        cand = np.tanh(p["wn"] @ x[t] + p["bn"] + r * (p["un"] @ h + p["bhn"]))
        h = (1.0 - z) * cand + z * h
        out[t] = h
    return out


def encoder_stack_rows(model: SaladModel, x: np.ndarray, executor=None, n_blocks: int = 1):
    """Encoder stack of ``model`` on one (N, G) sequence, frame blocks spread over workers."""
    for enc in model.stack.encoders:
        x = encoder_forward_rows(x, enc.params, enc.variant, executor, n_blocks, enc.cmh_norm)
    return x


def host_description() -> str:
    return (f"{platform.platform()}; python {platform.python_version()}; "
            f"{platform.processor() or platform.machine()}; {os.cpu_count()} logical CPUs")


@dataclass
class TimingReport:
    host: str
    sequence_duration: float
    rows: list = field(default_factory=list)  # dicts: kind, workers, median_s, q1_s, q3_s, realtime_percent

    def add(self, kind: str, workers: int, samples: list[float]) -> dict:
        q1, med, q3 = np.percentile(samples, [25, 50, 75])
        row = dict(kind=kind, workers=workers, median_s=float(med), q1_s=float(q1), q3_s=float(q3),
                   realtime_percent=100.0 * float(med) / self.sequence_duration, runs=len(samples))
        self.rows.append(row)
        return row

    def median(self, kind: str, workers: int) -> float:
        for r in self.rows:
            if r["kind"] == kind and r["workers"] == workers:
                return r["median_s"]
        raise KeyError((kind, workers))

    def table(self) -> str:
        lines = [f"host: {self.host}", f"sequence duration: {self.sequence_duration:.3f} s",
                 f"{'kind':<12}{'workers':>8}{'median ms':>12}{'IQR ms':>18}{'real-time %':>13}"]
        for r in self.rows:
            iqr = f"{1e3 * r['q1_s']:.3f}-{1e3 * r['q3_s']:.3f}"
            lines.append(f"{r['kind']:<12}{r['workers']:>8}{1e3 * r['median_s']:>12.3f}{iqr:>18}"
                         f"{r['realtime_percent']:>13.2f}")
        return "\n".join(lines)

    def csv(self) -> str:
        keys = ["kind", "workers", "median_s", "q1_s", "q3_s", "realtime_percent", "runs"]
        return "\n".join([",".join(keys)] + [",".join(str(r[k]) for k in keys) for r in self.rows]) + "\n"


def _time(fn, warmup: int, runs: int) -> list[float]:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return samples


def benchmark_inference(model: SaladModel, sequences, worker_counts=(1, 2, 4, 8), warmup: int = 50,
                        runs: int = 200, sequence_duration: float = 0.8, kinds=("encoder", "recurrent", "full"),
                        seed: int = 0) -> TimingReport:
    """Median latency per sequence for each worker count.

    ``encoder``: the encoder stack on one (N, G) sequence with frames split
    across workers. ``recurrent``: the GRU reference on the same input with
    the same pool available. ``full``: conv module, parallel encoder stack,
    head, frame averaging and peak extraction. BLAS is pinned to one thread
    so that the worker count alone sets the parallelism.
    """
    sequences = [np.asarray(s, dtype=model.dtype) for s in sequences]
    if not sequences:
        raise ValueError("need at least one feature sequence")
    rng = np.random.default_rng(seed)
    gru = init_recurrent_reference(rng, model.config.width, model.dtype)
    report = TimingReport(host_description(), sequence_duration)
    encoded_inputs = [_conv_features(model, s) for s in sequences]

    with threadpool_limits(limits=1):
        for workers in worker_counts:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                ex = pool if workers > 1 else None
                cycle = iter(range(10**12))

                def pick(items):
                    return items[next(cycle) % len(items)]

                if "encoder" in kinds:
                    report.add("encoder", workers, _time(
                        lambda: encoder_stack_rows(model, pick(encoded_inputs), ex, workers), warmup, runs))
                if "recurrent" in kinds:
                    # the pool is available, but the frame recursion leaves nothing to split
                    report.add("recurrent", workers, _time(
                        lambda: pool.submit(recurrent_reference_forward, pick(encoded_inputs), gru).result(),
                        warmup, runs))
                if "full" in kinds:
                    report.add("full", workers, _time(
                        lambda: _infer_parallel(model, pick(sequences), ex, workers), warmup, runs))
    return report


def _conv_features(model: SaladModel, seq: np.ndarray) -> np.ndarray:
    """Output of the conv module reshaped to (N, G)."""
    p, h = model.params, seq[None]
    for b, k in enumerate(model.config.pool_sizes):
        h = nn.relu(nn.conv2d(h, p[f"conv{b}a_w"], p[f"conv{b}a_b"])[0])[0]
        h = nn.relu(nn.conv2d(h, p[f"conv{b}b_w"], p[f"conv{b}b_b"])[0])[0]
        h = nn.maxpool_freq(h, k)[0]
    return np.ascontiguousarray(h[0].reshape(h.shape[1], -1))


def _infer_parallel(model: SaladModel, seq: np.ndarray, ex, workers: int, n_sources: int = 1):
    x = _conv_features(model, seq)
    x = encoder_stack_rows(model, x, ex, workers)
    p = model.params
    h = x @ p["head1_w"].T + p["head1_b"]
    probs, _ = sigmoid(h @ p["head2_w"].T + p["head2_b"])
    return extract_peaks(probs.mean(axis=0), model.grid, n_sources)
