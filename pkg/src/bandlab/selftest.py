"""Quick invariant suite behind ``bandlab selftest``; each check compares an
implementation against an independent reference and finishes in seconds."""
from __future__ import annotations

import itertools
import math
import time
from typing import Callable, List, Tuple

import numpy as np
from scipy import integrate

from .concentration import build_epsilon_net, mgf_bound_check, net_lambda_bound_check
from .config import parse_config, render_config
from .eigensolve import eigen_full, lambda_extreme
from .ensemble import EntryLaw, build_pattern, sample_matrix
from .localization import lemma_bound_check, loc_length, rho_L_exhaustive, tail_mass
from .montecarlo import wilson_interval
from .spectral import edge_experiment, semicircle_cdf, semicircle_pdf
from .walks import classes_by_t, enumerate_classes, verify_fk_inequalities

Check = Tuple[str, Callable[[], Tuple[bool, str]]]


def _toeplitz():
    n = 100
    h = np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)
    ref = np.sort(2 * np.cos(np.arange(1, n + 1) * np.pi / (n + 1)))
    err = float(np.max(np.abs(eigen_full(h).eigenvalues - ref)))
    return err <= 1e-8, f"max error {err:.2e}"


def _reconstruction():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((40, 40)) + 1j * rng.standard_normal((40, 40))
    h = a + a.conj().T
    s = eigen_full(h, want_vectors=True)
    v = s.eigenvectors
    err = float(np.max(np.abs(v @ np.diag(s.eigenvalues) @ v.conj().T - h)))
    orth = float(np.max(np.abs(v.conj().T @ v - np.eye(40))))
    return err < 1e-10 and orth < 1e-10, f"reconstruction {err:.1e}, orthogonality {orth:.1e}"


def _lanczos():
    h = sample_matrix(EntryLaw("gaussian_real"), build_pattern("cyclic_band", 300, 31), 3)
    lam, resid = lambda_extreme(h, "max")
    top = eigen_full(h).lambda_max
    return abs(lam - top) <= resid + 1e-9 * abs(top), f"|diff| {abs(lam - top):.1e}"


def _row_blocks():
    law, pat = EntryLaw("gaussian_complex"), build_pattern("standard_band", 57, 9)
    a = sample_matrix(law, pat, 11).data
    b = sample_matrix(law, pat, 11, blocks=[(0, 5), (5, 40), (40, 57)]).data
    return bool(np.array_equal(a, b)), "row-block partition changes nothing"


def _semicircle():
    val, _ = integrate.quad(semicircle_pdf, -2, 1)
    return abs(val - semicircle_cdf(1.0)) < 1e-12, f"F(1) = {semicircle_cdf(1.0):.6f}"


def _loc_length():
    rng = np.random.default_rng(2)
    for _ in range(200):
        n = int(rng.integers(1, 8))
        v = rng.standard_normal(n)
        v /= np.linalg.norm(v)
        eta = float(rng.uniform(0, 1))
        best = next(L for L in range(1, n + 1) for s in itertools.combinations(range(n), L)
                    if 1.0 - float(np.sum(v[list(s)] ** 2)) <= eta + 1e-12)
        if loc_length(v, eta) != best:
            return False, f"mismatch on {v}"
    return True, "200 vectors agree with subset search"


def _lemma():
    law = EntryLaw("gaussian_complex")
    pat = build_pattern("full", 8, 8)
    for seed in range(10):
        h = sample_matrix(law, pat, seed)
        spectrum = eigen_full(h, want_vectors=True)
        rhos = [rho_L_exhaustive(h, L) for L in range(1, 9)]
        if any(a > b for a, b in zip(rhos, rhos[1:])):
            return False, f"rho_L not monotone for seed {seed}"
        if any(lemma_bound_check(spectrum, h, L, rho_l=rhos[L - 1], rho=rhos[-1]).violations for L in range(1, 9)):
            return False, f"bound violated for seed {seed}"
    return True, "10 matrices, L = 1..8"


def _walks():
    frozen = {1: {1: 1, 2: 1}, 2: {1: 1, 2: 5, 3: 2}, 3: {1: 1, 2: 19, 3: 25, 4: 5}}
    for k, counts in frozen.items():
        got = {t: len(c) for t, c in classes_by_t(enumerate_classes(k)).items()}
        if got != counts or not verify_fk_inequalities(k).ok:
            return False, f"k={k}: {got}"
    return True, "k <= 3 census"


def _wilson():
    lo, hi = wilson_interval(0, 2000)
    return lo == 0.0 and abs(hi - 1.917e-3) < 1e-5, f"0/2000 -> [{lo}, {hi:.4g}]"


def _net():
    net = build_epsilon_net(1, 0.2, np.random.default_rng(0), 20_000)
    rng = np.random.default_rng(1)
    ok = all(net_lambda_bound_check(net, np.array([[x]])).ok for x in rng.uniform(0, 3, 50))
    return net.coverage_ok and net.size <= net.bound and ok, f"size {net.size}"


def _mgf():
    rows = mgf_bound_check(EntryLaw("rademacher"), 1.0, range(-3, 4))
    rows += mgf_bound_check(EntryLaw("gaussian_real"), 0.25, range(-3, 4))
    return all(r.ok for r in rows), f"{len(rows)} grid points"


def _config():
    cfg = parse_config("experiment=edge\npattern=cyclic_band\nn=50,60\nw=11\ntrials=2\nmaster_seed=7")
    return parse_config(render_config(cfg)) == cfg, "render/parse round trip"


def _threads():
    law = EntryLaw("rademacher")
    a = edge_experiment(law, "cyclic_band", [(60, 11), (40, 7)], 3, 9, threads=1)
    b = edge_experiment(law, "cyclic_band", [(60, 11), (40, 7)], 3, 9, threads=3)
    return [r.csv() for r in a] == [r.csv() for r in b], "1 vs 3 threads"


CHECKS: List[Check] = [
    ("toeplitz eigenvalues", _toeplitz),
    ("eigenvector reconstruction", _reconstruction),
    ("lanczos vs full spectrum", _lanczos),
    ("sampling row blocks", _row_blocks),
    ("semicircle cdf", _semicircle),
    ("loc_length optimality", _loc_length),
    ("localized eigenvalue bound", _lemma),
    ("walk census", _walks),
    ("wilson interval", _wilson),
    ("epsilon net", _net),
    ("mgf chain", _mgf),
    ("config round trip", _config),
    ("thread invariance", _threads),
]


def run_selftest(verbose: bool = False) -> bool:
    all_ok = True
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # report and keep going
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= bool(ok)
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'}  {name:<28} {detail} ({time.perf_counter() - t0:.2f}s)")
    if verbose:
        print("selftest", "passed" if all_ok else "FAILED")
    return all_ok
