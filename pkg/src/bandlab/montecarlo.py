"""Seed derivation, deterministic parallel trial execution and binomial
confidence intervals shared by the experiments."""
from __future__ import annotations

import hashlib
import math
import os
from concurrent.futures import ThreadPoolExecutor
from statistics import NormalDist
from typing import Callable, Iterable, List, Optional, Sequence, TypeVar

import numpy as np

__all__ = ["trial_seed", "map_trials", "wilson_interval", "resolve_threads", "ExperimentError",
           "THREADS_ENV", "fmt_value", "mean_stderr"]

T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV = "BANDLAB_THREADS"
Z95 = NormalDist().inv_cdf(0.975)


class ExperimentError(RuntimeError):
    """A trial failed; the message carries the grid point / trial context."""


def trial_seed(master_seed: int, tag: str, grid_index: int, trial: int) -> int:
    """Stable 63-bit seed for one trial of one grid point."""
    payload = f"{int(master_seed)}|{tag}|{int(grid_index)}|{int(trial)}".encode()
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little") >> 1


def resolve_threads(threads: Optional[int] = None) -> int:
    if threads is None:
        env = os.environ.get(THREADS_ENV, "")
        threads = int(env) if env.strip() else 1
    if threads <= 0:
        threads = os.cpu_count() or 1
    return threads


def map_trials(func: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None) -> List[R]:
    """``[func(x) for x in items]``, possibly on a thread pool; order is kept."""
    items = list(items)
    threads = resolve_threads(threads)
    if threads == 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))


def wilson_interval(successes: int, trials: int, z: float = Z95):
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        return 0.0, 1.0
    p = successes / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    centre = (p + z2 / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials)) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == trials else min(1.0, centre + half)
    return lo, hi


def fmt_value(v) -> str:
    """CSV cell: ints verbatim, booleans as true/false, floats with 17 digits."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return format(float(v), ".17g")


def mean_stderr(values: Sequence[float]):
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        return math.nan, math.nan
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.nan
    return float(x.mean()), se
