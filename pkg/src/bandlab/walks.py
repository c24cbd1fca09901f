"""Closed-walk equivalence classes behind the moment method, the inequalities
relating their edge counts, and Monte Carlo / analytic bounds on E Tr X^{2k}."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .ensemble import EntryLaw, SparsityPattern, sample_matrix
from .montecarlo import map_trials, trial_seed

__all__ = [
    "DEFAULT_K_LIMIT",
    "WalkClass",
    "canonical_walk",
    "edge_multiplicities",
    "enumerate_classes",
    "classes_by_t",
    "FKReport",
    "verify_fk_inequalities",
    "count_bound",
    "count_bound_check",
    "class_expansion_moment",
    "TraceMomentEstimate",
    "trace_power",
    "trace_moment_mc",
    "TraceBound",
    "BoundValidityError",
    "trace_moment_bound",
]

DEFAULT_K_LIMIT = 5


def canonical_walk(seq: Sequence[int]) -> Tuple[int, ...]:
    """Relabel vertices 1, 2, 3, ... in order of first appearance."""
    if len(seq) < 2 or len(seq) % 2:
        raise ValueError("walk length must be even and >= 2")
    labels: Dict[int, int] = {}
    return tuple(labels.setdefault(x, len(labels) + 1) for x in seq)


def edge_multiplicities(word: Sequence[int]) -> Counter:
    """Undirected edge visit counts of the closed walk (last -> first included)."""
    n = len(word)
    return Counter(frozenset((word[i], word[(i + 1) % n])) for i in range(n))


@dataclass(frozen=True)
class WalkClass:
    word: Tuple[int, ...]
    t: int
    edge_multiplicities: Dict[frozenset, int] = field(compare=False, hash=False, repr=False)
    l: int
    m: int

    @property
    def k(self) -> int:
        return len(self.word) // 2

    @property
    def edges(self) -> int:
        return self.l + self.m

    @classmethod
    def from_word(cls, word: Sequence[int]) -> "WalkClass":
        word = tuple(word)
        mult = edge_multiplicities(word)
        l = sum(1 for c in mult.values() if c == 2)
        m = sum(1 for c in mult.values() if c >= 3)
        return cls(word, max(word), dict(mult), l, m)


def _growth_strings(length: int, max_label: int) -> Iterator[Tuple[int, ...]]:
    word = [1] * length

    def rec(pos: int, top: int):
        if pos == length:
            yield tuple(word)
            return
        for x in range(1, min(top + 1, max_label) + 1):
            word[pos] = x
            yield from rec(pos + 1, max(top, x))

    yield from rec(1, 1)


def enumerate_classes(k: int, limit: int = DEFAULT_K_LIMIT) -> List[WalkClass]:
    """All classes of closed walks of length 2k with every edge visited twice.

    Words are generated directly in canonical form (each new label is one
    more than the current maximum), so no deduplication is needed; output is
    in lexicographic word order. Labels beyond k+1 are pruned since such
    walks cannot visit every edge twice.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > limit:
        raise ValueError(f"k={k} exceeds the enumeration limit {limit}; raise the limit explicitly")
    out = []
    for word in _growth_strings(2 * k, k + 1):
        mult = edge_multiplicities(word)
        if min(mult.values()) >= 2:
            l = sum(1 for c in mult.values() if c == 2)
            out.append(WalkClass(word, max(word), dict(mult), l, len(mult) - l))
    return out


def classes_by_t(classes: Sequence[WalkClass]) -> Dict[int, List[WalkClass]]:
    grouped: Dict[int, List[WalkClass]] = {}
    for c in classes:
        grouped.setdefault(c.t, []).append(c)
    return dict(sorted(grouped.items()))


@dataclass
class FKReport:
    k: int
    checked: int
    counterexample: Optional[Tuple[WalkClass, str]] = None

    @property
    def ok(self) -> bool:
        return self.counterexample is None


def _fk_failures(c: WalkClass, k: int) -> List[str]:
    fails = []
    if not 2 * c.l + 3 * c.m <= 2 * k:
        fails.append("2l+3m <= 2k")
    if not c.t <= c.l + c.m + 1:
        fails.append("t <= l+m+1")
    if not 2 * k - 2 * c.l <= 6 * (k - c.t + 1):
        fails.append("2k-2l <= 6(k-t+1)")
    if not c.t <= k + 1:
        fails.append("t <= k+1")
    return fails


def verify_fk_inequalities(k: int, classes: Optional[Sequence[WalkClass]] = None) -> FKReport:
    """Check the four counting inequalities on every class; stop at the first failure."""
    classes = enumerate_classes(k) if classes is None else classes
    for i, c in enumerate(classes):
        fails = _fk_failures(c, k)
        if fails:
            return FKReport(k, i + 1, (c, "; ".join(fails)))
    return FKReport(k, len(classes))


def count_bound(k: int, t: int) -> int:
    return 4**k * (2 * k) ** (6 * (k - t + 1))


def count_bound_check(k: int, classes: Optional[Sequence[WalkClass]] = None) -> List[dict]:
    """Rows {k, t, count, bound, ok} for t = 1..k+1."""
    classes = enumerate_classes(k) if classes is None else classes
    counts = Counter(c.t for c in classes)
    rows = []
    for t in range(1, k + 2):
        b = count_bound(k, t)
        rows.append({"k": k, "t": t, "count": counts.get(t, 0), "bound": b, "ok": counts.get(t, 0) <= b})
    return rows


def class_expansion_moment(n: int, k: int, even_moment: Callable[[int], float],
                           classes: Optional[Sequence[WalkClass]] = None) -> float:
    """Exact E Tr X^{2k} for a full n x n real symmetric matrix with i.i.d.
    symmetric entries, summed class by class.

    A class with t vertices is realized by n (n-1) ... (n-t+1) index tuples;
    its expectation is the product over edges of ``even_moment(mult)`` and
    vanishes when some multiplicity is odd.
    """
    classes = enumerate_classes(k) if classes is None else classes
    total = 0.0
    for c in classes:
        if c.t > n:
            continue
        mults = c.edge_multiplicities.values()
        if any(m % 2 for m in mults):
            continue
        total += math.perm(n, c.t) * math.prod(even_moment(m) for m in mults)
    return total


# -- trace moments -------------------------------------------------------------


def trace_power(x: np.ndarray, k: int) -> float:
    """log Tr X^{2k} = log ||X^k||_F^2 for Hermitian X, with rescaling
    so large k neither overflows nor underflows. Returns -inf for 0."""
    y = np.asarray(x)
    log_scale = 0.0
    for _ in range(k - 1):
        y = y @ x
        s = float(np.max(np.abs(y), initial=0.0))
        if s == 0.0:
            return -math.inf
        if s > 1e100 or s < 1e-100:
            y = y / s
            log_scale += math.log(s)
    fro2 = float(np.sum(np.abs(y) ** 2))
    if fro2 == 0.0:
        return -math.inf
    return math.log(fro2) + 2.0 * log_scale


@dataclass
class TraceMomentEstimate:
    k: int
    trials: int
    log_values: np.ndarray = field(repr=False)
    mean: float
    stderr: float
    log_mean: float


def _aggregate_logs(k: int, logs: np.ndarray) -> TraceMomentEstimate:
    top = float(np.max(logs))
    if top == -math.inf:
        return TraceMomentEstimate(k, logs.size, logs, 0.0, 0.0, -math.inf)
    rel = np.exp(logs - top)
    mean_rel = float(rel.mean())
    se_rel = float(rel.std(ddof=1) / math.sqrt(rel.size)) if rel.size > 1 else math.nan
    with np.errstate(over="ignore"):
        scale = math.exp(top) if top < 709.0 else math.inf
    return TraceMomentEstimate(k, logs.size, logs, mean_rel * scale, se_rel * scale,
                               math.log(mean_rel) + top)


def trace_moment_mc(law: EntryLaw, pattern: SparsityPattern, k: int, trials: int, master_seed: int,
                    threads: Optional[int] = None, tag: str = "trace_moment") -> TraceMomentEstimate:
    """Sample mean and standard error of Tr X^{2k} over independent matrices."""
    if k < 1:
        raise ValueError("k must be >= 1")

    def one(t):
        h = sample_matrix(law, pattern, trial_seed(master_seed, tag, 0, t))
        return trace_power(h.data, k)

    logs = np.array(map_trials(one, range(trials), threads))
    return _aggregate_logs(k, logs)


class BoundValidityError(ValueError):
    pass


@dataclass(frozen=True)
class TraceBound:
    value: float
    threshold: float
    ln_n: float
    k_upper: float


def trace_moment_bound(n: int, w: int, k: int, C: float, alpha: float) -> TraceBound:
    """N W^k 4^k / (1 - (2k (6Ck)^alpha)^6 / W), valid when W exceeds the threshold.

    Also returns the two ends of the admissible k window, ln N and
    W^(1/(6(1+alpha))).
    """
    threshold = (2 * k * (6 * C * k) ** alpha) ** 6
    if not w > threshold:
        raise BoundValidityError(
            f"bound needs W > (2k(6Ck)^alpha)^6 = {threshold:.6g}; got W = {w}")
    value = n * float(w) ** k * 4.0**k / (1.0 - threshold / w)
    return TraceBound(value, threshold, math.log(n), w ** (1.0 / (6.0 * (1.0 + alpha))))
