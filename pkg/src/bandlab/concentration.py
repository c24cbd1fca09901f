"""Tail experiments for the operator norm, quadratic forms and rho_L, epsilon
nets on the complex unit sphere, and the scalar subgaussian inequalities."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from .eigensolve import _as_array, eigen_full, spectral_radius
from .ensemble import EntryLaw, PatternKind, SparsityPattern, build_pattern, sample_entries, sample_matrix
from .localization import DEFAULT_BUDGET, rho_L, rho_L_exhaustive, rho_L_search
from .montecarlo import fmt_value, map_trials, trial_seed, wilson_interval

__all__ = [
    "STATISTICS",
    "TAIL_HEADER",
    "NET_HEADER",
    "TailEstimate",
    "norm_tail_experiment",
    "quadratic_form_tail",
    "rhoL_tail_experiment",
    "NetSizeError",
    "NetCoverageError",
    "EpsilonNet",
    "sphere_points",
    "sphere_grid",
    "build_epsilon_net",
    "NetBoundReport",
    "net_lambda_bound_check",
    "DivergentIntegralError",
    "MgfRow",
    "mgf_bound_check",
    "LinearizationConstants",
    "linearization_constants",
    "LinearizationReport",
    "gaussian_linearization_check",
]

STATISTICS = ("op_norm_over_sqrtN", "quadratic_form", "rhoL_over_sqrt_LlogN")
TAIL_HEADER = "statistic,n,L,t,exceed,lo95,hi95,trials"
NET_HEADER = "n,epsilon,size,bound,coverage_samples,coverage_ok"


# -- tail estimates ------------------------------------------------------------


@dataclass
class TailEstimate:
    """Empirical exceedance probabilities of ``values`` over ``scale * t``.

    ``exact`` is False when rho_L had to be lower-bounded by local search;
    the CSV statistic then carries a ``_search`` suffix.
    """

    statistic: str
    n: int
    thresholds: np.ndarray
    exceed_prob: np.ndarray
    lo95: np.ndarray
    hi95: np.ndarray
    trials: int
    L: Optional[int] = None
    fit: Optional[Dict[str, float]] = None
    exact: bool = True
    values: np.ndarray = field(default=None, repr=False)

    @property
    def label(self) -> str:
        return self.statistic if self.exact else self.statistic + "_search"

    def csv_rows(self) -> List[str]:
        L = "" if self.L is None else str(self.L)
        return [",".join([self.label, str(self.n), L, fmt_value(t), fmt_value(p),
                          fmt_value(lo), fmt_value(hi), str(self.trials)])
                for t, p, lo, hi in zip(self.thresholds, self.exceed_prob, self.lo95, self.hi95)]


def _fit_rate(x: np.ndarray, p: np.ndarray, size: float) -> Optional[Dict[str, float]]:
    """Least squares of -log(p)/size against x over the points with 0 < p < 1."""
    keep = (p > 0) & (p < 1)
    if keep.sum() < 3:
        return None
    y = -np.log(p[keep]) / size
    slope, intercept = np.polyfit(x[keep], y, 1)
    return {"slope": float(slope), "intercept": float(intercept), "points": int(keep.sum())}


def _tail(statistic: str, n: int, values: np.ndarray, scale: float, t_grid: Sequence[float],
          strict: bool, fit_x, fit_size: float, L: Optional[int] = None, exact: bool = True) -> TailEstimate:
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("t_grid must be a non-empty 1-d sequence")
    values = np.asarray(values, dtype=float)
    trials = values.size
    cut = t * scale
    hits = np.array([(values > c).sum() if strict else (values >= c).sum() for c in cut], dtype=np.int64)
    prob = hits / trials
    order = np.argsort(t, kind="stable")
    assert np.all(np.diff(prob[order]) <= 0), "exceedance must be non-increasing in the threshold"
    ci = [wilson_interval(int(h), trials) for h in hits]
    fit = _fit_rate(fit_x(t), prob, fit_size)
    return TailEstimate(statistic, n, t, prob, np.array([c[0] for c in ci]), np.array([c[1] for c in ci]),
                        trials, L, fit, exact, values)


def _resolve_pattern(pattern, n: int, w: Optional[int] = None) -> SparsityPattern:
    if pattern is None:
        return build_pattern(PatternKind.FULL, n, n)
    if isinstance(pattern, SparsityPattern):
        if pattern.n != n:
            raise ValueError(f"pattern is {pattern.n} x {pattern.n}, expected n = {n}")
        return pattern
    kind = PatternKind(pattern)
    return build_pattern(kind, n, n if kind is PatternKind.FULL else w)


def norm_tail_experiment(law: EntryLaw, n: int, t_grid: Sequence[float], trials: int, seed: int,
                         threads: Optional[int] = None, pattern=None, w: Optional[int] = None,
                         grid_index: int = 0, tag: str = "norm_tail") -> TailEstimate:
    """P(||X|| > t sqrt(N)); N is the row width W for band patterns.

    The fit is -log(p)/N against t^2.
    """
    pat = _resolve_pattern(pattern, n, w)
    size = float(pat.w)

    def one(k):
        return spectral_radius(sample_matrix(law, pat, trial_seed(seed, tag, grid_index, k)).data)

    values = np.array(map_trials(one, range(trials), threads))
    return _tail("op_norm_over_sqrtN", n, values, math.sqrt(size), t_grid, True,
                 lambda t: t * t, size)


def quadratic_form_tail(law: EntryLaw, n: int, z, t_grid: Sequence[float], trials: int, seed: int,
                        threads: Optional[int] = None, pattern=None, w: Optional[int] = None,
                        grid_index: int = 0, tag: str = "quad_tail") -> TailEstimate:
    """P(|Xz|^2 >= N t) for a fixed vector |z| <= 1; fit of -log(p)/N against t."""
    z = np.asarray(z)
    if z.shape != (n,):
        raise ValueError(f"z must have shape ({n},)")
    if np.linalg.norm(z) > 1.0 + 1e-12:
        raise ValueError("z must lie in the unit ball")
    pat = _resolve_pattern(pattern, n, w)
    size = float(pat.w)

    def one(k):
        x = sample_matrix(law, pat, trial_seed(seed, tag, grid_index, k)).data
        return float(np.sum(np.abs(x @ z) ** 2))

    values = np.array(map_trials(one, range(trials), threads))
    return _tail("quadratic_form", n, values, size, t_grid, False, lambda t: t, size)


def rhoL_tail_experiment(law: EntryLaw, pattern, n: int, L: int, t_grid: Sequence[float], trials: int,
                         seed: int, threads: Optional[int] = None, w: Optional[int] = None,
                         mode: str = "auto", budget: int = DEFAULT_BUDGET,
                         grid_index: int = 0, tag: str = "rhoL_tail") -> TailEstimate:
    """P(rho_L(X) >= t sqrt(L ln n)).

    ``mode`` is ``exact`` (exhaustive, may raise BudgetError), ``search``
    (local-search lower bound) or ``auto`` (exact when within budget).
    """
    if mode not in ("auto", "exact", "search"):
        raise ValueError(f"unknown rho_L mode {mode!r}")
    if n < 2:
        raise ValueError("n must be >= 2 so that ln n > 0")
    pat = _resolve_pattern(pattern, n, w)
    size = L * math.log(n)

    def one(k):
        s = trial_seed(seed, tag, grid_index, k)
        x = sample_matrix(law, pat, s).data
        if mode == "exact":
            return rho_L_exhaustive(x, L, budget), True
        if mode == "search":
            return rho_L_search(x, L, rng=np.random.default_rng(s)), L == n
        return rho_L(x, L, budget, rng=np.random.default_rng(s))

    out = map_trials(one, range(trials), threads)
    values = np.array([v for v, _ in out])
    exact = all(e for _, e in out)
    return _tail("rhoL_over_sqrt_LlogN", n, values, math.sqrt(size), t_grid, False,
                 lambda t: t, size, L=L, exact=exact)


# -- epsilon nets --------------------------------------------------------------


class NetSizeError(RuntimeError):
    pass


class NetCoverageError(RuntimeError):
    pass


def sphere_points(rng: np.random.Generator, m: int, n: int) -> np.ndarray:
    """m uniform points on the unit sphere of C^n, as real (m, 2n) arrays."""
    x = rng.standard_normal((m, 2 * n))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _to_complex(x: np.ndarray) -> np.ndarray:
    return x[:, 0::2] + 1j * x[:, 1::2]


def _circle_count(eta: float) -> int:
    return max(1, math.ceil(math.pi / (2.0 * math.asin(eta / 2.0)) - 1e-12))


def _bands(eta: float, f: float):
    """Latitude bands for one recursion level: (centre, sub-radius) pairs.

    A point at latitude phi and a grid point at phi_j with sphere directions
    u, u_j are at squared distance 4 sin^2((phi - phi_j)/2) +
    cos(phi) cos(phi_j) |u - u_j|^2, so a band of half-width alpha/2 leaves
    ``eta^2 - (2 sin(alpha/4))^2`` for the lower-dimensional net.
    """
    k = math.ceil(math.pi / (4.0 * math.asin(eta * f / 2.0)) - 1e-12)
    alpha = math.pi / k
    chord2 = (2.0 * math.sin(alpha / 4.0)) ** 2
    out = []
    for j in range(k):
        lo = -0.5 * math.pi + j * alpha
        hi = lo + alpha
        c = lo + 0.5 * alpha
        cmax = 1.0 if lo <= 0.0 <= hi else math.cos(min(abs(lo), abs(hi)))
        out.append((c, math.sqrt((eta * eta - chord2) / (cmax * math.cos(c)))))
    return out


def _grid_count(d: int, eta: float, f: float) -> int:
    if eta >= 2.0:
        return 1
    if d == 1:
        return _circle_count(eta)
    return sum(_grid_count(d - 1, e, f) for _, e in _bands(eta, f))


def _grid(d: int, eta: float, f: float) -> np.ndarray:
    if eta >= 2.0:
        p = np.zeros((1, d + 1))
        p[0, 0] = 1.0
        return p
    if d == 1:
        m = _circle_count(eta)
        a = 2.0 * math.pi * np.arange(m) / m
        return np.stack([np.cos(a), np.sin(a)], axis=1)
    parts = []
    for c, e in _bands(eta, f):
        sub = _grid(d - 1, e, f)
        parts.append(np.hstack([math.cos(c) * sub, np.full((sub.shape[0], 1), math.sin(c))]))
    return np.vstack(parts)


def sphere_grid(n: int, epsilon: float) -> np.ndarray:
    """Deterministic epsilon-covering of the unit sphere of C^n (real (m, 2n) form).

    Recursive latitude bands; the split of each radius between the band
    width and the lower-dimensional net is chosen to minimize the size.
    """
    d = 2 * n - 1
    if d == 1:
        return _grid(1, epsilon, 0.5)
    fs = np.linspace(0.3, 0.8, 11)
    best = min(fs, key=lambda f: _grid_count(d, epsilon, float(f)))
    return _grid(d, epsilon, float(best))


def _greedy_add(pts: np.ndarray, cand: np.ndarray, eps: float) -> np.ndarray:
    """Candidates accepted in order when farther than eps from every accepted point."""
    if pts.shape[0] and cand.shape[0]:
        d, _ = cKDTree(pts).query(cand, k=1, distance_upper_bound=eps * (1 + 1e-12))
        cand = cand[d > eps]
    if cand.shape[0] == 0:
        return cand
    tree = cKDTree(cand)
    blocked = np.zeros(cand.shape[0], dtype=bool)
    taken = np.zeros(cand.shape[0], dtype=bool)
    for i in range(cand.shape[0]):
        if blocked[i]:
            continue
        taken[i] = True
        blocked[tree.query_ball_point(cand[i], eps)] = True
    return cand[taken]


def _pack(pts: np.ndarray, n: int, eps: float, rng: np.random.Generator, batch: int,
          patience: int, max_batches: int) -> np.ndarray:
    quiet = 0
    for _ in range(max_batches):
        new = _greedy_add(pts, sphere_points(rng, batch, n), eps)
        if new.shape[0] == 0:
            quiet += 1
            if quiet >= patience:
                break
        else:
            quiet = 0
            pts = np.vstack([pts, new])
    return pts


def _max_distance(pts: np.ndarray, samples: np.ndarray) -> np.ndarray:
    d, _ = cKDTree(pts).query(samples, k=1)
    return d


@dataclass
class EpsilonNet:
    n: int
    epsilon: float
    points: np.ndarray = field(repr=False)
    coverage_samples: int
    coverage_ok: bool
    method: str = "greedy"
    max_distance: float = math.nan
    attempts: int = 1

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    @property
    def bound(self) -> float:
        return (2.0 / self.epsilon) ** (2 * self.n)

    def csv_row(self) -> str:
        return ",".join(fmt_value(v) for v in (self.n, self.epsilon, self.size, self.bound,
                                               self.coverage_samples, self.coverage_ok))


def build_epsilon_net(n: int, epsilon: float, rng: Optional[np.random.Generator] = None,
                      coverage_samples: int = 100_000, method: str = "auto", batch: int = 100_000,
                      patience: int = 3, max_batches: int = 200) -> EpsilonNet:
    """Epsilon-net of the unit sphere of C^n with an empirical coverage test.

    ``greedy`` packs random sphere points first-fit (an epsilon-separated
    set; coverage follows from maximality, which random candidates only
    approach, leaving small holes). ``grid`` uses the recursive latitude
    grid, whose coverage holds by construction; ``auto`` means grid. On a
    coverage failure the
    uncovered test points are added, packing continues, and the test is
    repeated once on fresh samples.
    """
    if not 1 <= n <= 4:
        raise ValueError(f"n must lie in [1, 4], got {n}")
    if not 0.0 < epsilon < 0.25:
        raise ValueError(f"epsilon must lie in (0, 1/4), got {epsilon}")
    if method == "auto":
        method = "grid"
    if method not in ("greedy", "grid"):
        raise ValueError(f"unknown net method {method!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    bound = (2.0 / epsilon) ** (2 * n)

    if method == "grid":
        pts = sphere_grid(n, epsilon)
    else:
        pts = _pack(np.empty((0, 2 * n)), n, epsilon, rng, batch, patience, max_batches)

    for attempt in (1, 2):
        if pts.shape[0] > bound:
            raise NetSizeError(f"net has {pts.shape[0]} points, above the bound (2/eps)^(2n) = {bound:.6g}")
        samples = sphere_points(rng, coverage_samples, n)
        d = _max_distance(pts, samples)
        miss = d > epsilon
        if not miss.any():
            return EpsilonNet(n, epsilon, _to_complex(pts), coverage_samples, True, method,
                              float(d.max(initial=0.0)), attempt)
        if attempt == 1:
            pts = np.vstack([pts, _greedy_add(pts, samples[miss], epsilon)])
            if method == "greedy":
                pts = _pack(pts, n, epsilon, rng, batch, patience, max_batches)
    raise NetCoverageError(f"{int(miss.sum())} of {coverage_samples} sphere points farther than "
                           f"{epsilon} from the net (max distance {float(d.max()):.6g})")


def _as_real(points: np.ndarray) -> np.ndarray:
    out = np.empty((points.shape[0], 2 * points.shape[1]))
    out[:, 0::2] = points.real
    out[:, 1::2] = points.imag
    return out


@dataclass(frozen=True)
class NetBoundReport:
    lhs: float
    rhs: float
    norm: float
    ok: bool


def net_lambda_bound_check(net: EpsilonNet, P) -> NetBoundReport:
    """lambda_max(P) <= max_i z_i* P z_i / (1 - 2 eps) for a PSD matrix P."""
    p = _as_array(P)
    if p.shape != (net.n, net.n):
        raise ValueError(f"P must be {net.n} x {net.n}")
    vals = eigen_full(p).eigenvalues
    norm = float(np.max(np.abs(vals))) if vals.size else 0.0
    if vals[0] < -1e-10 * norm:
        raise ValueError(f"P is not positive semidefinite (lambda_min = {vals[0]:.6g})")
    z = net.points
    quad = np.einsum("ij,ij->i", z.conj(), z @ p.T).real
    rhs = float(quad.max()) / (1.0 - 2.0 * net.epsilon)
    lhs = float(vals[-1])
    return NetBoundReport(lhs, rhs, norm, bool(lhs <= rhs + 1e-9 * norm))


# -- scalar subgaussian inequalities -----------------------------------------


class DivergentIntegralError(ValueError):
    pass


@dataclass(frozen=True)
class MgfRow:
    r: float
    lhs: float
    gaussian_integral: float
    mid: float
    outer: float
    ok: bool


def _exp(x: float) -> float:
    return math.exp(x) if x < 709.0 else math.inf


def mgf_bound_check(law: EntryLaw, delta: float, r_grid: Sequence[float]) -> List[MgfRow]:
    """E e^{rX} <= 1 + 3 E[e^{delta X^2}] (e^{r^2/delta} - 1) <= e^{3 r^2 E[e^{delta X^2}] / delta}.

    The chain is compared in log space, so huge middle terms do not overflow.
    """
    if law.is_complex:
        raise ValueError("mgf_bound_check needs a real-valued law")
    if not delta > 0:
        raise ValueError("delta must be positive")
    try:
        k = law.gaussian_integral(delta)
    except ValueError as exc:
        raise DivergentIntegralError(str(exc)) from exc
    rows = []
    for r in r_grid:
        r = float(r)
        log_lhs = math.log(law.mgf(r))
        a = r * r / delta
        # log(1 + 3k(e^a - 1)), stable for small and huge a
        log_mid = math.log1p(3.0 * k * math.expm1(a)) if a < 700.0 else a + math.log(3.0 * k)
        log_outer = 3.0 * r * r * k / delta
        ok = log_lhs <= log_mid + 1e-12 and log_mid <= log_outer + 1e-12
        rows.append(MgfRow(r, _exp(log_lhs), k, _exp(log_mid), _exp(log_outer), ok))
    return rows


def _a_star() -> float:
    """Largest a in (0, 1) with (1 - a)^(-1/2) <= e^a."""
    return brentq(lambda a: a + 0.5 * math.log1p(-a), 0.5, 1.0 - 1e-15, xtol=1e-15)


@dataclass(frozen=True)
class LinearizationConstants:
    tau: float
    C: float
    tau_real: float
    C_real: float
    complex: bool


def linearization_constants(delta: float, K: float, complex_case: bool) -> LinearizationConstants:
    """tau_R = sqrt(a* delta / (12 K)), C_R = 12 K / delta; the complex case
    uses tau_R / sqrt(8) and 4 C_R."""
    tau_r = math.sqrt(_a_star() * delta / (12.0 * K))
    c_r = 12.0 * K / delta
    if complex_case:
        return LinearizationConstants(tau_r / math.sqrt(8.0), 4.0 * c_r, tau_r, c_r, True)
    return LinearizationConstants(tau_r, c_r, tau_r, c_r, False)


@dataclass(frozen=True)
class LinearizationRow:
    z_norm: float
    estimate: float
    stderr: float
    bound: float
    ok: bool


@dataclass
class LinearizationReport:
    constants: LinearizationConstants
    trials: int
    rows: List[LinearizationRow]

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.rows)


def gaussian_linearization_check(law: EntryLaw, n: int, z_grid, trials: int, seed: int,
                                 chunk: int = 100_000) -> LinearizationReport:
    """Monte Carlo E exp(|Y.z|^2) against exp(C |z|^2) for Y with i.i.d. law entries.

    Passes when ``estimate - 4 stderr <= exp(C |z|^2)`` for each z. All z
    share the same draws of Y.
    """
    zs = [np.asarray(z) for z in z_grid]
    for z in zs:
        if z.shape != (n,):
            raise ValueError(f"every z must have shape ({n},)")
    complex_case = law.is_complex or any(np.iscomplexobj(z) for z in zs)
    const = linearization_constants(law.delta, law.K, complex_case)
    for z in zs:
        if np.linalg.norm(z) > const.tau * (1 + 1e-12):
            raise ValueError(f"|z| = {np.linalg.norm(z):.6g} exceeds tau = {const.tau:.6g}")
    if trials < 2:
        raise ValueError("need at least 2 trials")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    sums = np.zeros(len(zs))
    sq = np.zeros(len(zs))
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        y = sample_entries(law, rng, m * n).reshape(m, n)
        for i, z in enumerate(zs):
            v = np.exp(np.abs(y @ z.conj()) ** 2)
            sums[i] += v.sum()
            sq[i] += (v * v).sum()
        done += m
    rows = []
    for i, z in enumerate(zs):
        mean = float(sums[i] / trials)
        var = max(sq[i] / trials - mean * mean, 0.0) * trials / (trials - 1)
        se = math.sqrt(var / trials)
        nz2 = float(np.linalg.norm(z) ** 2)
        bound = math.exp(const.C * nz2)
        rows.append(LinearizationRow(math.sqrt(nz2), mean, se, bound, bool(mean - 4.0 * se <= bound)))
    return LinearizationReport(const, trials, rows)
