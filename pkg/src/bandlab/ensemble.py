"""Sparsity patterns, entry laws and Hermitian random matrix sampling.

Entries are derived from a counter-based stream (numpy's Philox): the value
stored at position ``(i, j)`` is a fixed function of the master seed and of
``(i, j)`` only, so a matrix can be generated in any row order or row
partition and comes out bit-identical.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, TextIO, Union

import numpy as np
from scipy import special

__all__ = [
    "LawKind",
    "PatternKind",
    "EntryLaw",
    "SparsityPattern",
    "HermitianMatrix",
    "HypothesisReport",
    "PatternError",
    "build_pattern",
    "sample_entry",
    "sample_entries",
    "sample_matrix",
    "validate_hypotheses",
    "matrix_from_array",
    "philox_key",
]

SeedLike = Union[int, np.integer, np.random.SeedSequence]

# words drawn per position before transforming; rows are padded to a multiple
# of the Philox block so each row starts on a counter boundary.
_BLOCK = 4
_CHUNK_WORDS = 1 << 22


class PatternError(ValueError):
    pass


class LawKind(str, Enum):
    GAUSSIAN_REAL = "gaussian_real"
    GAUSSIAN_COMPLEX = "gaussian_complex"
    RADEMACHER = "rademacher"
    UNIFORM = "uniform"
    TRUNCATED_GAUSSIAN = "truncated_gaussian"


class PatternKind(str, Enum):
    STANDARD_BAND = "standard_band"
    CYCLIC_BAND = "cyclic_band"
    FULL = "full"
    CUSTOM = "custom"


def _gauss_legendre_mean(func, lo: float, hi: float, weight=None) -> float:
    """Average of ``func`` over [lo, hi] against ``weight`` (uniform if None)."""
    x, wq = np.polynomial.legendre.leggauss(64)
    t = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
    w = wq * 0.5 * (hi - lo)
    dens = np.ones_like(t) if weight is None else weight(t)
    return float(np.sum(w * dens * func(t)) / np.sum(w * dens))


@dataclass(frozen=True)
class EntryLaw:
    """A centered, variance-one scalar law with its tail metadata.

    ``C, alpha`` bound the moments, ``E|X|^k <= (C k)^(alpha k)``; ``delta, K``
    bound the Gaussian integrability, ``E exp(delta |X|^2) <= K``. When
    ``delta``/``K`` are omitted they are filled with the exact value of
    ``E exp(delta |X|^2)`` at a law-specific default ``delta``.
    """

    kind: LawKind
    cutoff: Optional[float] = None
    C: float = 1.0
    alpha: float = 0.5
    delta: Optional[float] = None
    K: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", LawKind(self.kind))
        if self.kind is LawKind.TRUNCATED_GAUSSIAN:
            if self.cutoff is None or not self.cutoff > 0:
                raise ValueError("truncated_gaussian needs a positive cutoff")
        elif self.cutoff is not None:
            raise ValueError(f"cutoff only applies to truncated_gaussian, not {self.kind.value}")
        if self.C < 0 or self.alpha < 0:
            raise ValueError("moment profile needs C >= 0 and alpha >= 0")
        if self.delta is None:
            object.__setattr__(self, "delta", 1.0 if self.kind is LawKind.RADEMACHER else 0.25)
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.K is None:
            object.__setattr__(self, "K", self.gaussian_integral(self.delta))
        if not self.K >= 1.0:
            raise ValueError("K must be >= 1")

    @property
    def is_complex(self) -> bool:
        return self.kind is LawKind.GAUSSIAN_COMPLEX

    @property
    def words(self) -> int:
        return 2 if self.is_complex else 1

    @property
    def truncation_scale(self) -> float:
        """Standard deviation of N(0,1) conditioned on [-cutoff, cutoff]."""
        c = self.cutoff
        mass = special.erf(c / math.sqrt(2.0))
        var = 1.0 - 2.0 * c * math.exp(-0.5 * c * c) / (math.sqrt(2.0 * math.pi) * mass)
        return math.sqrt(var)

    def support_bound(self) -> float:
        """Largest possible |X| (inf for Gaussian laws)."""
        if self.kind is LawKind.RADEMACHER:
            return 1.0
        if self.kind is LawKind.UNIFORM:
            return math.sqrt(3.0)
        if self.kind is LawKind.TRUNCATED_GAUSSIAN:
            return self.cutoff / self.truncation_scale
        return math.inf

    def _truncated_weight(self, t):
        s = self.truncation_scale
        return np.exp(-0.5 * (t * s) ** 2)

    def gaussian_integral(self, delta: float) -> float:
        """E exp(delta |X|^2); raises if it diverges."""
        k = self.kind
        if k is LawKind.RADEMACHER:
            return math.exp(delta)
        if k is LawKind.GAUSSIAN_REAL:
            if delta >= 0.5:
                raise ValueError(f"E exp(delta X^2) diverges for a standard Gaussian at delta={delta} >= 1/2")
            return (1.0 - 2.0 * delta) ** -0.5
        if k is LawKind.GAUSSIAN_COMPLEX:
            if delta >= 1.0:
                raise ValueError(f"E exp(delta |X|^2) diverges for a complex Gaussian at delta={delta} >= 1")
            return 1.0 / (1.0 - delta)
        a = self.support_bound()
        weight = self._truncated_weight if k is LawKind.TRUNCATED_GAUSSIAN else None
        return _gauss_legendre_mean(lambda t: np.exp(delta * t * t), -a, a, weight)

    def mgf(self, r: float) -> float:
        """E exp(r X) for real laws."""
        k = self.kind
        if k is LawKind.GAUSSIAN_COMPLEX:
            raise ValueError("mgf is defined for real-valued laws only")
        if k is LawKind.RADEMACHER:
            return math.cosh(r)
        if k is LawKind.GAUSSIAN_REAL:
            return math.exp(0.5 * r * r)
        a = self.support_bound()
        weight = self._truncated_weight if k is LawKind.TRUNCATED_GAUSSIAN else None
        return _gauss_legendre_mean(lambda t: np.exp(r * t), -a, a, weight)

    def abs_moment(self, k: int) -> float:
        """Exact E|X|^k."""
        kind = self.kind
        if kind is LawKind.RADEMACHER:
            return 1.0
        if kind is LawKind.GAUSSIAN_REAL:
            return 2.0 ** (k / 2) * math.gamma((k + 1) / 2) / math.sqrt(math.pi)
        if kind is LawKind.GAUSSIAN_COMPLEX:
            return math.gamma(1 + k / 2)
        if kind is LawKind.UNIFORM:
            return 3.0 ** (k / 2) / (k + 1)
        a = self.support_bound()
        return _gauss_legendre_mean(lambda t: np.abs(t) ** k, -a, a, self._truncated_weight)

    def moment_bound(self, k: int) -> float:
        return (self.C * k) ** (self.alpha * k)

    # -- transforms from raw 64-bit words ------------------------------------

    def from_words(self, w0: np.ndarray, w1: Optional[np.ndarray] = None) -> np.ndarray:
        """Map raw uint64 words to draws of the law (vectorized)."""
        k = self.kind
        if k is LawKind.RADEMACHER:
            return np.where((w0 >> np.uint64(63)) == 1, 1.0, -1.0)
        u0 = _unit_interval(w0)
        if k is LawKind.GAUSSIAN_REAL:
            return special.ndtri(u0)
        if k is LawKind.UNIFORM:
            return math.sqrt(3.0) * (2.0 * u0 - 1.0)
        if k is LawKind.TRUNCATED_GAUSSIAN:
            half = special.ndtr(self.cutoff) - 0.5
            return special.ndtri(0.5 + (2.0 * u0 - 1.0) * half) / self.truncation_scale
        if w1 is None:
            raise ValueError("complex law needs two words per draw")
        return (special.ndtri(u0) + 1j * special.ndtri(_unit_interval(w1))) * math.sqrt(0.5)

    def real_from_words(self, w0: np.ndarray) -> np.ndarray:
        """Real variance-one companion law (used on the diagonal)."""
        if self.kind is LawKind.GAUSSIAN_COMPLEX:
            return special.ndtri(_unit_interval(w0))
        return self.from_words(w0)


def _unit_interval(w: np.ndarray) -> np.ndarray:
    # 53 high bits, shifted by half an ulp: values lie strictly inside (0, 1)
    return ((w >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def sample_entry(law: EntryLaw, rng: np.random.Generator) -> Union[float, complex]:
    """One draw from ``law``."""
    return sample_entries(law, rng, 1)[0].item()


def sample_entries(law: EntryLaw, rng: np.random.Generator, size: int) -> np.ndarray:
    words = rng.integers(0, 2**64, size=(law.words, size), dtype=np.uint64, endpoint=False)
    return law.from_words(words[0], words[1] if law.is_complex else None)


# -- patterns -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SparsityPattern:
    n: int
    kind: PatternKind
    w: int
    mask: np.ndarray = field(repr=False)

    @property
    def halfwidth(self) -> Optional[int]:
        if self.kind in (PatternKind.STANDARD_BAND, PatternKind.CYCLIC_BAND):
            return (self.w - 1) // 2
        return None

    @property
    def row_counts(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    @property
    def nnz(self) -> int:
        return int(self.mask.sum())

    def __eq__(self, other):
        if not isinstance(other, SparsityPattern):
            return NotImplemented
        return (self.n, self.kind, self.w) == (other.n, other.kind, other.w) and np.array_equal(
            self.mask, other.mask
        )

    __hash__ = None


def build_pattern(kind: Union[PatternKind, str], n: int, w: Optional[int] = None,
                  mask: Optional[np.ndarray] = None) -> SparsityPattern:
    """Build a sparsity pattern; band kinds take ``w = 2b + 1``."""
    kind = PatternKind(kind)
    if n < 1:
        raise PatternError("n must be positive")
    if kind is PatternKind.FULL:
        w = n if w is None else w
        if w != n:
            raise PatternError(f"full pattern has w = n = {n}, got w={w}")
        m = np.ones((n, n), dtype=bool)
    elif kind is PatternKind.CUSTOM:
        if mask is None:
            raise PatternError("custom pattern needs a mask")
        m = np.array(mask, dtype=bool)
        if m.shape != (n, n):
            raise PatternError(f"mask shape {m.shape} does not match n={n}")
        if not np.array_equal(m, m.T):
            raise PatternError("custom mask is not symmetric")
        if w is None:
            w = int(m.sum(axis=1).max()) if n else 0
        if w < 1:
            raise PatternError("w must be positive")
    else:
        if w is None:
            raise PatternError("band patterns need w")
        if w < 1 or w % 2 == 0:
            raise PatternError(f"band width must be odd, got w={w}")
        if w > n:
            raise PatternError(f"band width w={w} exceeds n={n}")
        b = (w - 1) // 2
        i = np.arange(n)
        dist = np.abs(i[:, None] - i[None, :])
        if kind is PatternKind.CYCLIC_BAND:
            dist = np.minimum(dist, n - dist)
        m = dist <= b
    m.setflags(write=False)
    return SparsityPattern(n=n, kind=kind, w=int(w), mask=m)


# -- matrices -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HermitianMatrix:
    """Dense Hermitian matrix tied to the pattern it was sampled on."""

    data: np.ndarray = field(repr=False)
    pattern: SparsityPattern

    def __post_init__(self):
        self.data.setflags(write=False)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def w(self) -> int:
        return self.pattern.w

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.data)

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def to_csv(self, fh: TextIO) -> None:
        """Write allowed positions as ``row,col,re,im``."""
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["row", "col", "re", "im"])
        rows, cols = np.nonzero(self.pattern.mask)
        vals = self.data[rows, cols]
        for r, c, v in zip(rows.tolist(), cols.tolist(), vals.tolist()):
            v = complex(v)
            out.writerow([r, c, format(v.real, ".17g"), format(v.imag, ".17g")])


def matrix_from_array(a, pattern: Optional[SparsityPattern] = None) -> HermitianMatrix:
    a = np.array(a)
    if a.dtype.kind in "biu":
        a = a.astype(np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.array_equal(a, a.conj().T):
        raise ValueError("matrix is not Hermitian")
    if pattern is None:
        pattern = build_pattern(PatternKind.CUSTOM, a.shape[0], mask=a != 0) if a.any() else \
            build_pattern(PatternKind.CUSTOM, a.shape[0], w=1, mask=np.zeros(a.shape, bool))
    return HermitianMatrix(data=a, pattern=pattern)


def philox_key(seed: SeedLike) -> np.ndarray:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    return ss.generate_state(2, np.uint64)


def _row_stride(n: int, words: int) -> int:
    return -(-n * words // _BLOCK) * _BLOCK


def _position_words(key: np.ndarray, row0: int, row1: int, n: int, words: int) -> np.ndarray:
    """Raw words for rows ``row0:row1``; shape (rows, n, words)."""
    stride = _row_stride(n, words)
    start_block = row0 * stride // _BLOCK
    bg = np.random.Philox(key=key, counter=np.array([start_block, 0, 0, 0], dtype=np.uint64))
    raw = bg.random_raw((row1 - row0) * stride).reshape(row1 - row0, stride)
    return raw[:, : n * words].reshape(row1 - row0, n, words)


def _fill_rows(out: np.ndarray, law: EntryLaw, mask: np.ndarray, key: np.ndarray,
               row0: int, row1: int) -> None:
    n = out.shape[0]
    raw = _position_words(key, row0, row1, n, law.words)
    rows = np.arange(row0, row1)
    upper = mask[row0:row1] & (np.arange(n)[None, :] > rows[:, None])
    r, c = np.nonzero(upper)
    w = raw[r, c]
    out[r + row0, c] = law.from_words(w[:, 0], w[:, 1] if law.is_complex else None)
    diag = mask[rows, rows]
    d = rows[diag]
    out[d, d] = law.real_from_words(raw[d - row0, d, 0])


def row_blocks(n: int, words: int, max_words: int = _CHUNK_WORDS) -> list:
    rows = max(1, max_words // max(_row_stride(n, words), 1))
    return [(a, min(a + rows, n)) for a in range(0, n, rows)]


def sample_matrix(law: EntryLaw, pattern: SparsityPattern, seed: SeedLike,
                  blocks: Optional[Iterable[tuple]] = None) -> HermitianMatrix:
    """Sample a Hermitian matrix with independent entries on ``pattern``.

    The upper triangle is drawn position by position from the Philox stream
    keyed by ``seed``, mirrored by conjugation, and the diagonal is real.
    ``blocks`` (row ranges) only changes how the work is split, never the
    result.
    """
    n = pattern.n
    dtype = np.complex128 if law.is_complex else np.float64
    out = np.zeros((n, n), dtype=dtype)
    key = philox_key(seed)
    for row0, row1 in (blocks if blocks is not None else row_blocks(n, law.words)):
        _fill_rows(out, law, pattern.mask, key, row0, row1)
    iu = np.tril_indices(n, -1)
    out[iu] = out.T[iu].conj()
    return HermitianMatrix(data=out, pattern=pattern)


# -- hypothesis checks --------------------------------------------------------


@dataclass
class HypothesisReport:
    row_counts: np.ndarray
    w: int
    full_row_fraction: float
    overfull_rows: list
    moments: dict = field(default_factory=dict)  # k -> (empirical, bound, ok)

    @property
    def rows_ok(self) -> bool:
        return not self.overfull_rows

    @property
    def moments_ok(self) -> bool:
        return all(ok for _, _, ok in self.moments.values())

    @property
    def ok(self) -> bool:
        return self.rows_ok and self.moments_ok


def validate_hypotheses(pattern: SparsityPattern, law: Optional[EntryLaw] = None,
                        samples: int = 100_000, seed: SeedLike = 0,
                        max_moment: int = 12) -> HypothesisReport:
    """Row-count and moment diagnostics for a (pattern, law) pair.

    Rows with more than ``w`` allowed entries are listed in
    ``overfull_rows``; the moment check compares empirical ``E|X|^k`` with
    ``(C k)^(alpha k)`` for ``2 <= k <= max_moment``.
    """
    counts = pattern.row_counts
    report = HypothesisReport(
        row_counts=counts,
        w=pattern.w,
        full_row_fraction=float(np.mean(counts == pattern.w)),
        overfull_rows=np.flatnonzero(counts > pattern.w).tolist(),
    )
    if law is not None:
        x = np.abs(sample_entries(law, np.random.default_rng(np.random.SeedSequence(int(seed))), samples))
        for k in range(2, max_moment + 1):
            emp = float(np.mean(x**k))
            bound = law.moment_bound(k)
            report.moments[k] = (emp, bound, emp <= bound)
    return report
