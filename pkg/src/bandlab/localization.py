"""(L, eta)-localization of eigenvectors, principal-submatrix spectral radii
and the localized-eigenvalue bound |lambda| sqrt(1-eta) <= rho_L + sqrt(eta) rho."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .eigensolve import ConvergenceError, Spectrum, _as_array, batch_extremes, eigen_full, spectral_radius
from .ensemble import EntryLaw, PatternKind, build_pattern, sample_matrix
from .montecarlo import ExperimentError, fmt_value, map_trials, trial_seed

__all__ = [
    "MASS_TOL",
    "LocalizationError",
    "BudgetError",
    "top_support",
    "tail_mass",
    "is_localized",
    "loc_length",
    "loc_lengths",
    "LocalizationReport",
    "localization_report",
    "rho_L_exhaustive",
    "rho_L_search",
    "rho_L",
    "LemmaReport",
    "lemma_bound_check",
    "lemma_experiment",
    "default_L",
    "check_window_parameters",
    "DelocalizationResult",
    "delocalization_experiment",
    "DELOC_HEADER",
    "LEMMA_HEADER",
]

# slack on squared-mass comparisons; sums of |v_j|^2 carry rounding
MASS_TOL = 1e-12
UNIT_TOL = 1e-8
DEFAULT_BUDGET = 2_000_000
_CHUNK = 20_000

DELOC_HEADER = ("n,w,trial,seed,eig_index,lambda,eta_at_L,loc_len_eta10,loc_len_eta25,"
                "loc_len_eta50,in_window,localized")
LEMMA_HEADER = "n,w,trial,seed,L,eig_index,lambda,eta_i,rho_L,rho,margin,ok"


class LocalizationError(ValueError):
    pass


class BudgetError(LocalizationError):
    pass


def _unit(v) -> np.ndarray:
    v = np.asarray(v)
    if v.ndim != 1 or v.size == 0:
        raise LocalizationError("expected a non-empty vector")
    norm = float(np.linalg.norm(v))
    if abs(norm - 1.0) > UNIT_TOL:
        raise LocalizationError(f"vector is not unit (norm {norm:.12g})")
    return v


def _sorted_masses(v: np.ndarray):
    mass = np.abs(v) ** 2
    order = np.argsort(-mass, axis=0, kind="stable")
    return np.take_along_axis(mass, order, axis=0), order


def _tails(sorted_mass: np.ndarray) -> np.ndarray:
    # tails[L] = mass outside the top-L prefix; small terms summed first
    rev = np.cumsum(sorted_mass[::-1], axis=0)[::-1]
    zero = np.zeros((1,) + sorted_mass.shape[1:])
    return np.concatenate([rev, zero], axis=0)


def top_support(v, L: int) -> np.ndarray:
    """Indices of the L largest |v_j| (lower index first on ties)."""
    v = np.asarray(v)
    return np.sort(_sorted_masses(v)[1][:L])


def tail_mass(v, L: int) -> float:
    v = np.asarray(v)
    return float(_tails(_sorted_masses(v)[0])[L])


def _check_params(n: int, L: int, eta: float) -> None:
    if not 0.0 <= eta < 1.0:
        raise LocalizationError(f"eta must lie in [0, 1), got {eta}")
    if not 1 <= L <= n:
        raise LocalizationError(f"L must lie in [1, {n}], got {L}")


def is_localized(v, L: int, eta: float) -> bool:
    """True iff some L coordinates carry all but at most eta of the mass.

    The top-L coordinates by magnitude are an optimal choice of support.
    """
    v = _unit(v)
    _check_params(v.size, L, eta)
    return tail_mass(v, L) <= eta + MASS_TOL


def loc_length(v, eta: float) -> int:
    """Smallest L for which v is (L, eta)-localized."""
    v = _unit(v)
    _check_params(v.size, 1, eta)
    return int(loc_lengths(v[:, None], [eta])[0, 0])


def loc_lengths(vectors: np.ndarray, etas: Sequence[float]) -> np.ndarray:
    """Localization lengths of the columns of ``vectors``; shape (len(etas), ncols)."""
    tails = _tails(_sorted_masses(np.asarray(vectors))[0])[1:]  # tails for L = 1..n
    out = np.empty((len(etas), tails.shape[1]), dtype=np.int64)
    for k, eta in enumerate(etas):
        ok = tails <= eta + MASS_TOL
        out[k] = np.argmax(ok, axis=0) + 1  # tails[n-1] = 0 so some row is always true
    return out


@dataclass
class LocalizationReport:
    lambdas: np.ndarray
    vectors: np.ndarray = field(repr=False)
    loc_len: Dict[float, np.ndarray]

    def top_support(self, i: int, L: int) -> np.ndarray:
        return top_support(self.vectors[:, i], L)

    def tail_mass(self, i: int, L: int) -> float:
        return tail_mass(self.vectors[:, i], L)


def localization_report(spectrum: Spectrum, etas: Sequence[float] = (0.1, 0.25, 0.5)) -> LocalizationReport:
    if spectrum.eigenvectors is None:
        raise LocalizationError("spectrum has no eigenvectors")
    lens = loc_lengths(spectrum.eigenvectors, etas)
    return LocalizationReport(spectrum.eigenvalues, spectrum.eigenvectors,
                              {float(e): lens[k] for k, e in enumerate(etas)})


# -- principal submatrices ------------------------------------------------------


def _subset_radii(a: np.ndarray, subsets: np.ndarray) -> np.ndarray:
    stack = a[subsets[:, :, None], subsets[:, None, :]]
    lo, hi = batch_extremes(stack)
    return np.maximum(-lo, hi)


def rho_L_exhaustive(h, L: int, budget: int = DEFAULT_BUDGET, return_subset: bool = False):
    """Exact max spectral radius over all L x L principal submatrices.

    Subsets are visited in lexicographic order; the first maximizer is kept.
    """
    a = _as_array(h)
    n = a.shape[0]
    if not 1 <= L <= n:
        raise LocalizationError(f"L must lie in [1, {n}], got {L}")
    count = math.comb(n, L)
    if count > budget:
        raise BudgetError(f"C({n},{L}) = {count} principal submatrices exceeds the budget {budget}; "
                          "use rho_L_search for a lower bound")
    best, best_subset = -1.0, None
    combos = itertools.combinations(range(n), L)
    while True:
        chunk = list(itertools.islice(combos, _CHUNK))
        if not chunk:
            break
        subsets = np.array(chunk, dtype=np.intp)
        radii = _subset_radii(a, subsets)
        k = int(np.argmax(radii))
        if radii[k] > best:
            best, best_subset = float(radii[k]), subsets[k]
    return (best, best_subset) if return_subset else best


def rho_L_search(h, L: int, restarts: int = 8, swap_budget: int = 10_000,
                 rng: Optional[np.random.Generator] = None) -> float:
    """Lower bound on rho_L: best-improvement single-swap local search.

    Each restart draws a random L-subset and repeatedly applies the swap
    (one index out, one in) with the largest gain until none improves or
    ``swap_budget`` accepted swaps have been spent in total.
    """
    a = _as_array(h)
    n = a.shape[0]
    if not 1 <= L <= n:
        raise LocalizationError(f"L must lie in [1, {n}], got {L}")
    if L == n:
        return spectral_radius(a)
    rng = rng if rng is not None else np.random.default_rng(0)
    best = -1.0
    swaps = 0
    for _ in range(max(1, restarts)):
        subset = np.sort(rng.choice(n, size=L, replace=False))
        current = float(_subset_radii(a, subset[None])[0])
        while swaps < swap_budget:
            outside = np.setdiff1d(np.arange(n), subset)
            cands = np.repeat(subset[None], L * outside.size, axis=0)
            pos = np.repeat(np.arange(L), outside.size)
            cands[np.arange(cands.shape[0]), pos] = np.tile(outside, L)
            radii = _subset_radii(a, cands)
            k = int(np.argmax(radii))
            if not radii[k] > current:
                break
            subset, current = np.sort(cands[k]), float(radii[k])
            swaps += 1
        best = max(best, current)
        if swaps >= swap_budget:
            break
    return best


def rho_L(h, L: int, budget: int = DEFAULT_BUDGET, rng=None):
    """(value, exact): exhaustive when affordable, else local-search lower bound."""
    n = _as_array(h).shape[0]
    if math.comb(n, L) <= budget:
        return rho_L_exhaustive(h, L, budget), True
    return rho_L_search(h, L, rng=rng), False


# -- localized-eigenvalue bound ------------------------------------------------


@dataclass
class LemmaReport:
    L: int
    rho_L: float
    rho: float
    lambdas: np.ndarray
    etas: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    tol: float

    @property
    def margin(self) -> np.ndarray:
        return self.rhs - self.lhs

    @property
    def ok(self) -> np.ndarray:
        return self.margin >= -self.tol

    @property
    def violations(self) -> int:
        return int(np.count_nonzero(~self.ok))


def lemma_bound_check(spectrum: Spectrum, h, L: int, rho_l: Optional[float] = None,
                      rho: Optional[float] = None) -> LemmaReport:
    """Check |lambda_i| sqrt(1-eta_i) <= rho_L + sqrt(eta_i) rho for every pair.

    ``eta_i`` is the mass of v_i outside its top-L support, so v_i is
    (L, eta_i)-localized by construction and the inequality must hold
    deterministically. Comparisons allow ``1e-8 * rho`` of rounding.
    """
    if spectrum.eigenvectors is None:
        raise LocalizationError("lemma check needs eigenvectors")
    a = _as_array(h)
    if rho_l is None:
        rho_l = rho_L_exhaustive(a, L)
    if rho is None:
        rho = spectral_radius(a)
    masses, _ = _sorted_masses(spectrum.eigenvectors)
    etas = _tails(masses)[L]
    if np.any(etas >= 1.0):
        raise LocalizationError("eta_i >= 1 for a unit eigenvector")
    lam = spectrum.eigenvalues
    lhs = np.abs(lam) * np.sqrt(1.0 - etas)
    rhs = rho_l + np.sqrt(etas) * rho
    return LemmaReport(L, float(rho_l), float(rho), lam, etas, lhs, rhs, 1e-8 * rho)


def lemma_experiment(law: EntryLaw, kind, n: int, w: Optional[int], Ls: Sequence[int], trials: int,
                     master_seed: int, threads: Optional[int] = None, tag: str = "localization"):
    """Per trial: sample, diagonalize, and run the bound check for every L.

    Returns a list (per trial) of dicts with the seed, reports per L and the
    exhaustive rho_L values.
    """
    kind = PatternKind(kind)
    pattern = build_pattern(kind, n, w)

    def one(t):
        seed = trial_seed(master_seed, tag, 0, t)
        h = sample_matrix(law, pattern, seed)
        try:
            spectrum = eigen_full(h, want_vectors=True)
        except ConvergenceError as exc:
            raise ExperimentError(f"n={n} trial={t} seed={seed}: {exc}") from exc
        rho = spectral_radius(h)
        reports = {L: lemma_bound_check(spectrum, h, L, rho=rho) for L in Ls}
        return {"trial": t, "seed": seed, "rho": rho, "reports": reports}

    return map_trials(one, range(trials), threads)


def lemma_rows(n: int, w: int, results) -> List[str]:
    out = []
    for res in results:
        for L, rep in res["reports"].items():
            for i in range(rep.lambdas.size):
                out.append(",".join(fmt_value(x) for x in (
                    n, w, res["trial"], res["seed"], L, i, rep.lambdas[i], rep.etas[i],
                    rep.rho_L, rep.rho, rep.margin[i], bool(rep.ok[i]))))
    return out


# -- delocalization experiment -------------------------------------------------


def default_L(w: int, n: int, c: float = 4.0) -> int:
    """L = max(1, floor(W / (c ln N)))."""
    return max(1, int(math.floor(w / (c * math.log(n)))))


def check_window_parameters(eta: float, kappa: float) -> None:
    if not 0.0 <= eta < 1.0:
        raise LocalizationError(f"eta must lie in [0, 1), got {eta}")
    floor = math.sqrt(eta / (1.0 - eta))
    if not floor < kappa < 1.0:
        raise LocalizationError(
            f"need sqrt(eta/(1-eta)) < kappa < 1; sqrt({eta}/(1-{eta})) = {floor:.6g}, kappa = {kappa}")


@dataclass
class DelocalizationResult:
    n: int
    w: int
    L: int
    eta: float
    kappa: float
    seeds: List[int]
    in_window: List[int]
    localized: List[int]
    rows: List[str] = field(repr=False, default_factory=list)

    @property
    def violations(self) -> int:
        """Trials with at least one localized eigenvector in the window."""
        return sum(1 for x in self.localized if x > 0)

    @property
    def total_localized(self) -> int:
        return sum(self.localized)


def delocalization_experiment(law: EntryLaw, kind, n: int, w: int, L: Optional[int], eta: float,
                              kappa: float, trials: int, master_seed: int,
                              threads: Optional[int] = None, c: float = 4.0,
                              tag: str = "delocalization") -> DelocalizationResult:
    """Count (L, eta)-localized eigenvectors with |lambda| >= 2 kappa sqrt(W)."""
    check_window_parameters(eta, kappa)
    pattern = build_pattern(PatternKind(kind), n, w)
    if L is None:
        L = default_L(pattern.w, n, c)
    if not 1 <= L <= n:
        raise LocalizationError(f"L must lie in [1, {n}], got {L}")
    threshold = 2.0 * kappa * math.sqrt(pattern.w)

    def one(t):
        seed = trial_seed(master_seed, tag, 0, t)
        h = sample_matrix(law, pattern, seed)
        try:
            spectrum = eigen_full(h, want_vectors=True)
        except ConvergenceError as exc:
            raise ExperimentError(f"n={n} w={w} trial={t} seed={seed}: {exc}") from exc
        vecs = spectrum.eigenvectors
        masses, _ = _sorted_masses(vecs)
        eta_at_L = _tails(masses)[L]
        lens = loc_lengths(vecs, (0.1, 0.25, 0.5))
        window = np.abs(spectrum.eigenvalues) >= threshold
        localized = window & (eta_at_L <= eta + MASS_TOL)
        rows = [",".join(fmt_value(x) for x in (
            n, pattern.w, t, seed, i, spectrum.eigenvalues[i], eta_at_L[i], lens[0, i], lens[1, i],
            lens[2, i], bool(window[i]), bool(localized[i]))) for i in range(n)]
        return seed, int(window.sum()), int(localized.sum()), rows

    results = map_trials(one, range(trials), threads)
    return DelocalizationResult(
        n=n, w=pattern.w, L=L, eta=eta, kappa=kappa,
        seeds=[r[0] for r in results], in_window=[r[1] for r in results],
        localized=[r[2] for r in results], rows=[row for r in results for row in r[3]])
