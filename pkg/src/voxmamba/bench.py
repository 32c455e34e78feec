"""Scan timing: sequential vs chunked, with a linear-complexity fit."""
from __future__ import annotations

import time

import numpy as np

from .ssm import DEFAULT_CHUNK, discretize_zoh, scan_chunked, scan_sequential

DEFAULT_LENGTHS = tuple(2 ** p for p in range(10, 21))


def _random_case(L, d, n, rng, dtype=np.float64):
    a = -rng.uniform(0.5, 3.0, size=(d, n))
    delta = rng.uniform(0.01, 0.5, size=(L, d, 1))
    b = rng.normal(size=(L, 1, n))
    a_bar, b_bar = discretize_zoh(a, b, delta)
    x = rng.normal(size=(L, d)).astype(dtype)
    c = rng.normal(size=(L, n)).astype(dtype)
    return x, a_bar.astype(dtype), b_bar.astype(dtype), c


def linear_fit(x: np.ndarray, y: np.ndarray):
    """Least-squares line plus coefficient of determination."""
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(((y - pred) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def run_scan_bench(lengths=DEFAULT_LENGTHS, reps: int = 10, d: int = 1,
                   n: int = 4, chunk: int = DEFAULT_CHUNK, seed: int = 0) -> dict:
    """Median runtimes per length, max |chunked - sequential|, and the
    linear fit of sequential runtime against L."""
    rng = np.random.default_rng(seed)
    rows = []
    for L in lengths:
        x, a_bar, b_bar, c = _random_case(L, d, n, rng)
        t_seq, t_chunk = [], []
        y_seq = y_chunk = None
        for _ in range(reps):
            t0 = time.perf_counter()
            y_seq = scan_sequential(x, a_bar, b_bar, c)
            t_seq.append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            y_chunk = scan_chunked(x, a_bar, b_bar, c, chunk=chunk)
            t_chunk.append(time.perf_counter() - t0)
        rows.append({
            "L": int(L),
            "median_sequential_s": float(np.median(t_seq)),
            "median_chunked_s": float(np.median(t_chunk)),
            "max_abs_diff": float(np.abs(y_seq - y_chunk).max()),
        })
    ls = np.array([r["L"] for r in rows], dtype=np.float64)
    ts = np.array([r["median_sequential_s"] for r in rows])
    slope, intercept, r2 = linear_fit(ls, ts)
    return {
        "rows": rows,
        "fit": {"slope_s_per_token": slope, "intercept_s": intercept, "r2": r2},
        "config": {"reps": reps, "d": d, "n": n, "chunk": chunk, "seed": seed},
    }
