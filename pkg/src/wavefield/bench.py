"""Wall-clock scaling of the wave layer against naive softmax attention."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .layer import LayerParams, wave_layer_backward, wave_layer_forward

# rows of the attention matrix materialized at once are capped at this many
# scores, so large n stays O(n^2) in time without an n^2 allocation
ATTENTION_BLOCK_ELEMENTS = 1 << 23


def naive_attention(X, Wq, Wk, Wv):
    """Single-head softmax attention, scores materialized block by block."""
    n, d = X.shape
    Q, K, V = X @ Wq, X @ Wk, X @ Wv
    out = np.empty_like(V)
    rows = max(1, ATTENTION_BLOCK_ELEMENTS // n)
    scale = 1.0 / np.sqrt(d)
    for i in range(0, n, rows):
        S = (Q[i:i + rows] @ K.T) * scale
        S -= S.max(axis=1, keepdims=True)
        np.exp(S, out=S)
        S /= S.sum(axis=1, keepdims=True)
        out[i:i + rows] = S @ V
    return out


@dataclass
class BenchRow:
    n: int
    wave_seconds: float
    attention_seconds: float
    skipped: bool = False

    @property
    def ratio(self) -> float:
        return self.wave_seconds / self.attention_seconds


LONG_CALL_SECONDS = 1.0
POINT_BUDGET_SECONDS = 10.0
MIN_POINT_SECONDS = 1.0


def _median_time(fn, reps: int, warmup: int) -> float:
    """Median wall time of ``fn``.

    A warmup call longer than ``LONG_CALL_SECONDS`` already amortizes any
    first-call cost, so it is kept as a sample; repetitions stop once
    ``POINT_BUDGET_SECONDS`` is spent and at least one sample exists.
    Calls much shorter than ``MIN_POINT_SECONDS`` are noisy one at a time, so
    sampling continues past ``reps`` until that much time is spent.
    """
    times = []
    for _ in range(warmup):
        t0 = time.perf_counter()
        fn()
        dt = time.perf_counter() - t0
        if dt > LONG_CALL_SECONDS:
            times.append(dt)
            break
    while (len(times) < max(1, reps) or sum(times) < MIN_POINT_SECONDS) and (
        not times or sum(times) < POINT_BUDGET_SECONDS
    ):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def bench_point(n: int, d: int = 64, steps: int = 4, reps: int = 3, warmup: int = 1, seed: int = 0) -> BenchRow:
    rng = np.random.default_rng(seed)
    try:
        H = rng.normal(size=(n, d))
        dH = rng.normal(size=(n, d))
        p = LayerParams.init(d, steps, rng, dt0=0.2)
        W = [rng.normal(0.0, 1.0 / np.sqrt(d), (d, d)) for _ in range(3)]

        def wave():
            _, tape = wave_layer_forward(H, p)
            wave_layer_backward(tape, dH)

        wave_t = _median_time(wave, reps, warmup)
        attn_t = _median_time(lambda: naive_attention(H, *W), reps, warmup)
    except MemoryError:
        return BenchRow(n, float("nan"), float("nan"), skipped=True)
    return BenchRow(n, wave_t, attn_t)


def run_bench(ns, d: int = 64, steps: int = 4, reps: int = 3, warmup: int = 1, seed: int = 0, threads: int = 1):
    """Time both contenders at each ``n``, pinned to ``threads`` BLAS threads."""
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=threads):
        return [bench_point(int(n), d, steps, reps, warmup, seed) for n in ns]
