"""Semicircle reference law, exact KS distance of the scaled ESD, and the
edge (largest eigenvalue) experiment."""
from __future__ import annotations

import math
from dataclasses import dataclass, astuple, fields
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .eigensolve import ConvergenceError, eigen_full, lambda_extreme
from .ensemble import EntryLaw, PatternKind, build_pattern, sample_matrix
from .montecarlo import ExperimentError, fmt_value, map_trials, trial_seed

__all__ = [
    "semicircle_pdf",
    "semicircle_cdf",
    "semicircle_quantile",
    "ks_distance",
    "EdgeExperimentRow",
    "edge_experiment",
    "summarize_ratios",
    "EDGE_HEADER",
]

EDGE_HEADER = "n,w,trial,seed,lambda_max,ratio,ks"


def semicircle_pdf(x):
    x = np.asarray(x, dtype=float)
    out = np.sqrt(np.clip(4.0 - x * x, 0.0, None)) / (2.0 * math.pi)
    return out if out.ndim else float(out)


def semicircle_cdf(x):
    x = np.asarray(x, dtype=float)
    y = np.clip(x, -2.0, 2.0)
    out = 0.5 + y * np.sqrt(4.0 - y * y) / (4.0 * math.pi) + np.arcsin(y / 2.0) / math.pi
    out = np.where(x <= -2.0, 0.0, np.where(x >= 2.0, 1.0, out))
    return out if out.ndim else float(out)


def semicircle_quantile(p, tol: float = 1e-15):
    """Inverse of :func:`semicircle_cdf` by bisection (vectorized)."""
    p = np.asarray(p, dtype=float)
    lo = np.full(p.shape, -2.0)
    hi = np.full(p.shape, 2.0)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        below = semicircle_cdf(mid) < p
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.max(hi - lo, initial=0.0) < tol:
            break
    return 0.5 * (lo + hi)


def ks_distance(eigenvalues: Sequence[float], scale: float = 1.0) -> float:
    """sup |ESD(lambda/scale) - semicircle CDF|, evaluated at the jumps.

    At the j-th smallest point (1-based) both one-sided gaps
    ``j/n - F(x_j)`` and ``F(x_j) - (j-1)/n`` are taken, which also handles
    ties exactly.
    """
    if not scale > 0:
        raise ValueError("scale must be positive")
    x = np.sort(np.asarray(eigenvalues, dtype=float)) / scale
    n = x.size
    if n == 0:
        raise ValueError("empty spectrum")
    f = semicircle_cdf(x)
    j = np.arange(1, n + 1)
    return float(max(np.max(j / n - f), np.max(f - (j - 1) / n)))


@dataclass(frozen=True)
class EdgeExperimentRow:
    n: int
    w: int
    trial: int
    seed: int
    lambda_max: float
    ratio: float
    ks: float

    def csv(self) -> str:
        return ",".join(fmt_value(v) for v in astuple(self))


def edge_trial(law: EntryLaw, kind: PatternKind, n: int, w: int, trial: int, seed: int,
               with_ks: bool = True, spectrum_out: Optional[list] = None) -> EdgeExperimentRow:
    """One edge trial. With ``with_ks`` the full spectrum supplies both the KS
    distance and lambda_max (Lanczos then only cross-checks it)."""
    pattern = build_pattern(kind, n, w)
    h = sample_matrix(law, pattern, seed)
    scale = math.sqrt(pattern.w)
    try:
        lam, resid = lambda_extreme(h, "max", rng=np.random.default_rng(np.random.SeedSequence(seed)))
        ks = math.nan
        if with_ks:
            spectrum = eigen_full(h)
            top = spectrum.lambda_max
            if abs(top - lam) > resid + 1e-9 * max(1.0, abs(top)):
                raise ConvergenceError(f"Lanczos lambda_max {lam!r} disagrees with full spectrum {top!r}")
            lam = top
            ks = ks_distance(spectrum.eigenvalues, scale)
            if spectrum_out is not None:
                spectrum_out.append(spectrum.eigenvalues)
    except ConvergenceError as exc:
        raise ExperimentError(f"n={n} w={w} trial={trial} seed={seed}: {exc}") from exc
    return EdgeExperimentRow(n, pattern.w, trial, seed, lam, lam / scale, ks)


def edge_experiment(law: EntryLaw, kind, grid: Sequence[Tuple[int, int]], trials: int,
                    master_seed: int, threads: Optional[int] = None, with_ks: bool = True,
                    tag: str = "edge") -> List[EdgeExperimentRow]:
    """One row per (n, w, trial); rows ordered by grid point then trial."""
    kind = PatternKind(kind)
    if not grid:
        raise ValueError("empty (n, w) grid")
    tasks = [(gi, n, w, t, trial_seed(master_seed, tag, gi, t))
             for gi, (n, w) in enumerate(grid) for t in range(trials)]
    return map_trials(lambda x: edge_trial(law, kind, x[1], x[2], x[3], x[4], with_ks), tasks, threads)


def summarize_ratios(rows: Sequence[EdgeExperimentRow]) -> dict:
    """Mean/std of ratio and mean KS per (n, w)."""
    out = {}
    for key in dict.fromkeys((r.n, r.w) for r in rows):
        sel = [r for r in rows if (r.n, r.w) == key]
        ratios = np.array([r.ratio for r in sel])
        ks = np.array([r.ks for r in sel])
        out[key] = {
            "trials": len(sel),
            "mean_ratio": float(ratios.mean()),
            "std_ratio": float(ratios.std(ddof=1)) if len(sel) > 1 else math.nan,
            "var_ratio": float(ratios.var(ddof=1)) if len(sel) > 1 else math.nan,
            "mean_ks": float(np.mean(ks)),
            "max_ks": float(np.max(ks)),
        }
    return out


EDGE_FIELDS = [f.name for f in fields(EdgeExperimentRow)]
