"""Hermitian eigensolvers: Householder tridiagonalization + implicit QL, and
Lanczos with full reorthogonalization for extreme eigenvalues."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse

from . import _kernels

__all__ = [
    "ConvergenceError",
    "Spectrum",
    "TridiagonalForm",
    "tridiagonalize",
    "eigen_full",
    "lambda_extreme",
    "spectral_radius",
    "batch_extremes",
]

MAX_SWEEPS = 50
BLOCK = 32


class ConvergenceError(RuntimeError):
    """Iteration limit hit; carries the best estimate seen so far."""

    def __init__(self, message: str, estimate: float = math.nan, residual: float = math.inf):
        super().__init__(message)
        self.estimate = estimate
        self.residual = residual


def _as_array(h) -> np.ndarray:
    a = np.asarray(h)
    if a.dtype.kind in "biu":
        a = a.astype(np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    return a


@dataclass
class Spectrum:
    eigenvalues: np.ndarray
    eigenvectors: Optional[np.ndarray]
    residual_bound: float

    @property
    def n(self) -> int:
        return self.eigenvalues.size

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])

    @property
    def rho(self) -> float:
        return float(max(-self.eigenvalues[0], self.eigenvalues[-1]))


@dataclass
class TridiagonalForm:
    """``H = Q T Q^*`` with ``T`` real symmetric tridiagonal.

    ``Q = H_0 H_1 ... H_{n-2}``, ``H_k = I - tau_k v_k v_k^*``, where ``v_k``
    is stored below the diagonal in column ``k`` of ``reflectors`` with an
    implicit leading 1 at row ``k+1``.
    """

    diag: np.ndarray
    offdiag: np.ndarray
    reflectors: np.ndarray
    taus: np.ndarray

    @property
    def n(self) -> int:
        return self.diag.size

    def matrix(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.offdiag, 1) + np.diag(self.offdiag, -1)

    def _block(self, j0: int, jb: int):
        n = self.n
        V = np.tril(self.reflectors[j0 + 1:, j0:j0 + jb], -1).astype(self.reflectors.dtype)
        V[np.arange(jb), np.arange(jb)] = 1.0
        taus = self.taus[j0:j0 + jb]
        T = np.zeros((jb, jb), dtype=V.dtype)
        for i in range(jb):
            T[i, i] = taus[i]
            if i:
                T[:i, i] = -taus[i] * (T[:i, :i] @ (V[:, :i].conj().T @ V[:, i]))
        assert V.shape[0] == n - j0 - 1
        return V, T

    def apply_q(self, z: np.ndarray) -> np.ndarray:
        """Return ``Q @ z``."""
        n = self.n
        dtype = np.result_type(self.reflectors.dtype, z.dtype)
        out = np.array(z, dtype=dtype, copy=True)
        starts = list(range(0, max(n - 1, 0), BLOCK))
        for j0 in reversed(starts):
            jb = min(BLOCK, n - 1 - j0)
            V, T = self._block(j0, jb)
            sub = out[j0 + 1:]
            sub -= V @ (T @ (V.conj().T @ sub))
        return out

    def q(self) -> np.ndarray:
        return self.apply_q(np.eye(self.n, dtype=self.reflectors.dtype))


def _larfg(alpha, x):
    xnorm = float(np.linalg.norm(x)) if x.size else 0.0
    ar = float(np.real(alpha))
    ai = float(np.imag(alpha))
    if xnorm == 0.0 and ai == 0.0:
        return ar, 0.0, x
    beta = -math.copysign(math.sqrt(ar * ar + ai * ai + xnorm * xnorm), ar)
    return beta, (beta - alpha) / beta, x / (alpha - beta)


def tridiagonalize(h, block: int = BLOCK) -> TridiagonalForm:
    """Blocked Householder reduction of a Hermitian matrix (lower storage).

    Panel columns are reduced one at a time against the un-updated trailing
    matrix corrected by the panel's ``V, W``; the trailing matrix is then
    updated with ``A -= V W^* + W V^*``.
    """
    a = np.array(_as_array(h), copy=True)
    if np.iscomplexobj(a):
        a = a.astype(np.complex128)
    else:
        a = a.astype(np.float64)
    n = a.shape[0]
    d = np.zeros(n)
    e = np.zeros(max(n - 1, 0))
    taus = np.zeros(max(n - 1, 0), dtype=a.dtype)
    for j0 in range(0, n - 1, block):
        jb = min(block, n - 1 - j0)
        V = np.zeros((n, jb), a.dtype)
        W = np.zeros((n, jb), a.dtype)
        for i in range(jb):
            c = j0 + i
            if i:
                a[c:, c] -= V[c:, :i] @ W[c, :i].conj() + W[c:, :i] @ V[c, :i].conj()
            d[c] = a[c, c].real
            beta, tau, vt = _larfg(a[c + 1, c], a[c + 2:, c])
            e[c] = beta
            taus[c] = tau
            a[c + 1, c] = 1.0
            a[c + 2:, c] = vt
            v = a[c + 1:, c]
            V[c + 1:, i] = v
            p = a[c + 1:, c + 1:] @ v
            if i:
                p -= V[c + 1:, :i] @ (W[c + 1:, :i].conj().T @ v) + W[c + 1:, :i] @ (V[c + 1:, :i].conj().T @ v)
            p *= tau
            p += (-0.5 * tau * np.vdot(p, v)) * v
            W[c + 1:, i] = p
        s = j0 + jb
        a[s:, s:] -= V[s:] @ W[s:].conj().T + W[s:] @ V[s:].conj().T
    if n:
        d[n - 1] = a[n - 1, n - 1].real
    return TridiagonalForm(diag=d, offdiag=e, reflectors=a, taus=taus)


def _fix_phase(vecs: np.ndarray) -> None:
    # first coordinate above sqrt(eps) made real positive
    mag = np.abs(vecs)
    first = np.argmax(mag > 1.5e-8, axis=0)
    cols = np.arange(vecs.shape[1])
    lead = vecs[first, cols]
    vecs *= (np.abs(lead) / lead).conj() if np.iscomplexobj(vecs) else np.sign(lead)


def eigen_full(h, want_vectors: bool = False, tol: Optional[float] = None) -> Spectrum:
    """All eigenvalues (ascending) and optionally eigenvectors of ``h``.

    ``tol`` (default ``1e-10 * ||h||_F``) bounds the certified residual
    ``max_j ||h v_j - lambda_j v_j||``; it is only checked when vectors are
    requested.
    """
    a = _as_array(h)
    n = a.shape[0]
    if n == 0:
        raise ValueError("empty matrix")
    if tol is None:
        tol = 1e-10 * max(float(np.linalg.norm(a)), np.finfo(float).tiny)
    tri = tridiagonalize(a)
    d = tri.diag.copy()
    e = np.zeros(n)
    e[: n - 1] = tri.offdiag
    zt = np.eye(n) if want_vectors else np.zeros((1, 1))
    status = _kernels.tql_implicit(d, e, zt, want_vectors, MAX_SWEEPS)
    if status >= 0:
        raise ConvergenceError(f"QL iteration exceeded {MAX_SWEEPS} sweeps at eigenvalue {status}",
                               estimate=float(d[status]))
    order = np.argsort(d, kind="stable")
    vals = d[order]
    if not want_vectors:
        return Spectrum(vals, None, math.nan)
    vecs = tri.apply_q(np.ascontiguousarray(zt[order].T))
    _fix_phase(vecs)
    resid = np.linalg.norm(a @ vecs - vecs * vals, axis=0)
    bound = float(resid.max())
    if bound > tol:
        raise ConvergenceError(f"residual {bound:.3e} exceeds tolerance {tol:.3e}", residual=bound)
    return Spectrum(vals, vecs, bound)


def batch_extremes(stack: np.ndarray):
    """(min, max) eigenvalue of each matrix in a (b, m, m) Hermitian stack."""
    stack = np.ascontiguousarray(stack)
    if stack.dtype.kind in "biu":
        stack = stack.astype(np.float64)
    if stack.shape[0] == 0:
        return np.empty(0), np.empty(0)
    lo, hi, bad = _kernels.batch_extremes(stack, MAX_SWEEPS)
    if bad >= 0:
        raise ConvergenceError(f"QL iteration exceeded {MAX_SWEEPS} sweeps on matrix {bad}")
    return lo, hi


def spectral_radius(h) -> float:
    """Exact ``||h||`` via tridiagonalization + QL (no vectors)."""
    lo, hi = batch_extremes(_as_array(h)[None])
    return float(max(-lo[0], hi[0]))


def _operator(a: np.ndarray):
    nnz = np.count_nonzero(a)
    if nnz < 0.2 * a.size:
        return sparse.csr_array(a)
    return a


def _ritz(alphas, betas, j):
    d = np.array(alphas[:j], dtype=np.float64)
    e = np.zeros(j)
    e[: j - 1] = betas[: j - 1]
    last = np.zeros((j, 1))
    last[j - 1, 0] = 1.0
    status = _kernels.tql_implicit(d, e, last, True, MAX_SWEEPS)
    if status >= 0:
        raise ConvergenceError("QL failed on the Lanczos tridiagonal")
    return d, np.abs(last[:, 0])


def lambda_extreme(h, which: str = "max", tol: Optional[float] = None,
                   max_iter: Optional[int] = None, rng: Optional[np.random.Generator] = None,
                   check_every: int = 5):
    """Extreme eigenvalue by Lanczos with full reorthogonalization.

    ``which`` is ``"max"``, ``"min"`` or ``"spectral_radius"``. Returns
    ``(value, residual)``; the value is within ``residual`` of an eigenvalue.
    Restarts once (fresh random direction) on breakdown.
    """
    if which not in ("max", "min", "spectral_radius"):
        raise ValueError(f"unknown target {which!r}")
    a = _as_array(h)
    n = a.shape[0]
    if n == 0:
        raise ValueError("empty matrix")
    if tol is None:
        tol = 1e-10 * max(float(np.linalg.norm(a)), np.finfo(float).tiny)
    if max_iter is None:
        max_iter = min(n, 1500)
    max_iter = max(1, min(max_iter, n))
    rng = rng if rng is not None else np.random.default_rng(0)
    op = _operator(a)
    cplx = np.iscomplexobj(a)
    dtype = np.complex128 if cplx else np.float64

    def random_start():
        x = rng.standard_normal(n)
        if cplx:
            x = x + 1j * rng.standard_normal(n)
        return x.astype(dtype)

    Q = np.zeros((n, max_iter), dtype=dtype)
    alphas = np.zeros(max_iter)
    betas = np.zeros(max_iter)
    q = random_start()
    q /= np.linalg.norm(q)
    restarted = False
    best = (math.nan, math.inf)
    for j in range(max_iter):
        Q[:, j] = q
        r = op @ q
        alphas[j] = float(np.vdot(q, r).real)
        basis = Q[:, : j + 1]
        for _ in range(2):
            r -= basis @ (basis.conj().T @ r)
        beta = float(np.linalg.norm(r))
        scale = abs(alphas[j]) + (betas[j - 1] if j else 0.0)
        broke = beta <= 1e-12 * max(scale, np.finfo(float).tiny)
        betas[j] = 0.0 if broke else beta
        k = j + 1
        if broke or k == max_iter or k % check_every == 0:
            theta, last = _ritz(alphas, betas, k)
            resid = beta * last if not broke else np.zeros(k)
            imin, imax = int(np.argmin(theta)), int(np.argmax(theta))
            if which == "max":
                val, res = theta[imax], resid[imax]
            elif which == "min":
                val, res = theta[imin], resid[imin]
            else:
                val = max(-theta[imin], theta[imax])
                res = max(resid[imin], resid[imax])
            best = (float(val), float(res))
            if broke:
                # invariant subspace: Ritz pairs are exact there
                if k == n or k == max_iter or restarted:
                    return best
                restarted = True
                x = random_start()
                for _ in range(2):
                    x -= basis @ (basis.conj().T @ x)
                q = x / np.linalg.norm(x)
                continue
            if res <= tol:
                return best
        q = r / beta
    raise ConvergenceError(
        f"Lanczos did not reach residual {tol:.3e} within {max_iter} iterations",
        estimate=best[0], residual=best[1])
