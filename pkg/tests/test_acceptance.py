"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines as they
happen; they are also repeated in the terminal summary.
"""
import filecmp
import math
import os
import time

import numpy as np
import pytest
from scipy import stats

from bandlab import cli
from bandlab.concentration import (build_epsilon_net, gaussian_linearization_check, linearization_constants,
                                   mgf_bound_check, net_lambda_bound_check, norm_tail_experiment,
                                   quadratic_form_tail)
from bandlab.eigensolve import eigen_full, spectral_radius
from bandlab.ensemble import EntryLaw, PatternError, build_pattern, sample_matrix
from bandlab.localization import (delocalization_experiment, lemma_experiment, loc_length, rho_L_exhaustive)
from bandlab.montecarlo import trial_seed
from bandlab.spectral import edge_experiment
from bandlab.walks import (BoundValidityError, classes_by_t, count_bound_check, enumerate_classes,
                           trace_moment_bound, trace_moment_mc, verify_fk_inequalities)

from acceptance_log import record
from oracles import WALK_CENSUS, brute_walk_census, toeplitz_eigenvalues

GAUSS = EntryLaw("gaussian_real")
RAD = EntryLaw("rademacher")
SEED = 20240601


def test_criterion_01_toeplitz_oracle():
    n = 100
    h = np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)
    eigen_full(h[:5, :5])  # compile outside the timed call
    t0 = time.perf_counter()
    vals = eigen_full(h).eigenvalues
    dt = time.perf_counter() - t0
    err = float(np.max(np.abs(vals - toeplitz_eigenvalues(n))))
    ok = err <= 1e-8 and dt < 1.0
    assert record(1, ok, f"max abs error {err:.2e} (<= 1e-8), {dt:.3f} s (< 1 s)")


@pytest.fixture(scope="module")
def semicircle_rows():
    t0 = time.perf_counter()
    rows = edge_experiment(GAUSS, "cyclic_band", [(4000, 401)], 3, SEED, with_ks=True)
    return rows, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_02_semicircle(semicircle_rows):
    rows, dt = semicircle_rows
    ks = [r.ks for r in rows]
    ok = len(ks) == 3 and max(ks) <= 0.06 and dt < 300
    assert record(2, ok, f"KS distances {', '.join(f'{k:.4f}' for k in ks)} (<= 0.06), {dt:.0f} s (< 300 s)")


@pytest.mark.slow
def test_criterion_03_edge(semicircle_rows):
    t0 = time.perf_counter()
    rows = edge_experiment(GAUSS, "cyclic_band", [(4000, 401)], 10, SEED, with_ks=False)
    dt = time.perf_counter() - t0 + semicircle_rows[1]
    mean = float(np.mean([r.ratio for r in rows]))
    # the first trials share seeds with the full-spectrum run; both routes must agree
    agree = max(abs(a.lambda_max - b.lambda_max) for a, b in zip(rows, semicircle_rows[0]))
    control = edge_experiment(RAD, "cyclic_band", [(200, 1)], 3, SEED)
    control_ok = all(r.ratio == 1.0 for r in control)
    ok = 1.85 <= mean <= 2.15 and control_ok and agree <= 1e-6 and dt < 600
    assert record(3, ok, f"mean lambda_max/sqrt(W) = {mean:.4f} in [1.85, 2.15]; w=1 ratio exactly 1: "
                         f"{control_ok}; Lanczos vs full solver {agree:.1e}; {dt:.0f} s (< 600 s)")


@pytest.fixture(scope="module")
def lemma_corpus():
    t0 = time.perf_counter()
    res = lemma_experiment(EntryLaw("gaussian_complex"), "full", 12, None, range(1, 7), 100, SEED)
    return res, time.perf_counter() - t0


def test_criterion_04_lemma(lemma_corpus):
    res, dt = lemma_corpus
    checks = sum(len(rep.lhs) for r in res for rep in r["reports"].values())
    viol = sum(rep.violations for r in res for rep in r["reports"].values())
    worst = min(float(np.min(rep.margin / rep.rho)) for r in res for rep in r["reports"].values())
    ok = viol == 0 and len(res) == 100 and dt < 120
    assert record(4, ok, f"{viol} violations over {checks} (matrix, L, eigenpair) checks; "
                         f"smallest relative margin {worst:.2e}; {dt:.1f} s (< 120 s)")


def test_criterion_05_rho_monotone(lemma_corpus):
    res, _ = lemma_corpus
    pattern = build_pattern("full", 12)
    bad = 0
    for r in res:
        h = sample_matrix(EntryLaw("gaussian_complex"), pattern, r["seed"]).data
        vals = [rho_L_exhaustive(h, L) for L in range(1, 13)]
        if any(a > b for a, b in zip(vals, vals[1:])) or vals[-1] != r["rho"] or vals[-1] != spectral_radius(h):
            bad += 1
        for L in range(1, 7):
            assert r["reports"][L].rho_L == vals[L - 1]
    assert record(5, bad == 0, f"{bad} of {len(res)} matrices break rho_1 <= ... <= rho_n = rho(X) (exact compare)")


@pytest.mark.slow
def test_criterion_06_delocalization():
    t0 = time.perf_counter()
    out = delocalization_experiment(GAUSS, "cyclic_band", 2048, 257, 16, 0.1, 0.9, 5, SEED)
    dt = time.perf_counter() - t0
    ok = out.total_localized == 0 and dt < 900
    assert record(6, ok, f"{out.total_localized} localized eigenvectors among {sum(out.in_window)} with "
                         f"|lambda| >= 1.8 sqrt(W) over 5 trials; {dt:.0f} s (< 900 s)")


def _subset_oracle(v, eta):
    # every subset of coordinates, smallest size carrying mass >= 1 - eta
    n = v.size
    masks = (np.arange(1 << n)[:, None] >> np.arange(n)) & 1
    mass = masks @ (np.abs(v) ** 2)
    good = 1.0 - mass <= eta + 1e-12
    return int(masks.sum(axis=1)[good].min())


def test_criterion_07_loc_length():
    rng = np.random.default_rng(SEED)
    mismatches = 0
    for _ in range(10_000):
        n = int(rng.integers(1, 11))
        v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        v /= np.linalg.norm(v)
        eta = float(rng.uniform(0, 1))
        mismatches += loc_length(v, eta) != _subset_oracle(v, eta)
    assert record(7, mismatches == 0, f"{mismatches} mismatches over 10^4 random unit vectors (n <= 10)")


def test_criterion_08_walk_census():
    t0 = time.perf_counter()
    fk = [verify_fk_inequalities(k) for k in (1, 2, 3)]
    rows = [r for k in (1, 2, 3) for r in count_bound_check(k)]
    counts = {t: len(c) for t, c in classes_by_t(enumerate_classes(1)).items()}
    brute = brute_walk_census(1)
    dt = time.perf_counter() - t0
    ok = all(r.ok for r in fk) and all(r["ok"] for r in rows) and counts == brute == WALK_CENSUS[1] == {1: 1, 2: 1}
    ok = ok and dt < 60
    assert record(8, ok, f"inequality failures {sum(not r.ok for r in fk)}, count-bound failures "
                         f"{sum(not r['ok'] for r in rows)}, k=1 counts {counts}; {dt:.2f} s (< 60 s)")


def test_criterion_09_bound_and_threshold():
    bound = trace_moment_bound(100, 101, 1, 1.0, 0.0).value
    try:
        trace_moment_bound(100, 50, 1, 1.0, 0.0)
        raised = False
    except BoundValidityError:
        raised = True
    # the same MC check at the nearest admissible sizes
    est = trace_moment_mc(RAD, build_pattern("cyclic_band", 100, 11), 1, 50, SEED)
    wide = trace_moment_mc(RAD, build_pattern("cyclic_band", 110, 101), 1, 50, SEED)
    exact = 100 * 101 * 4 * 101 / 37  # 100*101*4 / (1 - 64/101)
    ok = (abs(bound - exact) <= 1e-9 * exact and abs(bound / 1.1027e5 - 1) <= 1e-3 and raised and abs(est.mean - 1100) <= max(4 * est.stderr, 1e-9)
          and abs(wide.mean - 110 * 101) <= max(4 * wide.stderr, 1e-9)
          and wide.mean <= trace_moment_bound(110, 101, 1, 1.0, 0.0).value)
    assert record("9a", ok, f"bound(100,101,1,1,0) = {bound:.2f}; w=50 raises: {raised}; "
                            f"n=100 w=11 E Tr X^2 = {est.mean:.6g}; n=110 w=101 = {wide.mean:.6g} <= bound")


@pytest.mark.xfail(strict=True, raises=(PatternError, AssertionError),
                   reason="a cyclic band of width 101 does not fit in n=100; see notes")
def test_criterion_09_literal_configuration():
    try:
        pattern = build_pattern("cyclic_band", 100, 101)
    except PatternError as exc:
        # closest reading: clip the band to the full matrix, which has 100*100 entries, not 100*101
        est = trace_moment_mc(RAD, build_pattern("full", 100), 1, 50, SEED)
        record(9, False, f"cyclic band n=100 w=101 rejected ({exc}); clipped to full, E Tr X^2 = "
                         f"{est.mean:.6g} with stderr {est.stderr:.1g}, target 10100", expected_failure=True)
        raise
    est = trace_moment_mc(RAD, pattern, 1, 50, SEED)
    ok = abs(est.mean - 10100) <= 4 * est.stderr and est.mean <= trace_moment_bound(100, 101, 1, 1.0, 0.0).value
    assert record(9, ok, f"E Tr X^2 = {est.mean:.6g} +- {est.stderr:.3g}")


def test_criterion_10_norm_tail():
    t0 = time.perf_counter()
    ests = {n: norm_tail_experiment(GAUSS, n, [2.1, 3.0], 2000, SEED, grid_index=i)
            for i, n in enumerate((50, 100, 200))}
    dt = time.perf_counter() - t0
    far = {n: int(round(e.exceed_prob[1] * e.trials)) for n, e in ests.items()}
    p50, p200 = ests[50].exceed_prob[0], ests[200].exceed_prob[0]
    ok = all(v == 0 for v in far.values()) and p200 <= p50 + 0.01 and dt < 600
    assert record(10, ok, f"exceedances of 3 sqrt(N): {far}; P(t=2.1): n=200 {p200:.4f} <= n=50 {p50:.4f} + 0.01; "
                          f"Wilson upper at 0/2000 = {ests[50].hi95[1]:.2e}; {dt:.0f} s (< 600 s)")


def test_criterion_11_quadratic_tail():
    n = 100
    est = quadratic_form_tail(GAUSS, n, np.eye(n)[0], [1.5, 2.0, 3.0], 10_000, SEED)
    oracle = stats.chi2.sf(np.array([1.5, 2.0, 3.0]) * n, n)
    inside = [lo <= p <= hi for p, lo, hi in zip(oracle, est.lo95, est.hi95)]
    detail = "; ".join(f"t={t:g}: {p:.2e} in [{lo:.2e}, {hi:.2e}]"
                       for t, p, lo, hi in zip(est.thresholds, oracle, est.lo95, est.hi95))
    assert record(11, all(inside), detail)


def test_criterion_12_epsilon_net():
    eps = 0.2
    rng = np.random.default_rng(SEED)
    parts, ok = [], True
    for n in (1, 2, 3):
        net = build_epsilon_net(n, eps, rng=np.random.default_rng(trial_seed(SEED, "net", n, 0)),
                                coverage_samples=100_000)
        viol = 0
        for _ in range(1000):
            a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
            viol += not net_lambda_bound_check(net, a.conj().T @ a).ok
        ok = ok and net.size <= net.bound and net.coverage_ok and viol == 0
        parts.append(f"n={n}: size {net.size} <= {net.bound:.0f}, coverage {net.coverage_ok}, {viol} violations")
    assert record(12, ok, "; ".join(parts))


def test_criterion_13_scalar_lemmas():
    r = [-3, -2, -1, 0, 1, 2, 3]
    rows = mgf_bound_check(RAD, 1.0, r) + mgf_bound_check(GAUSS, 0.25, r)
    chain = sum(not row.ok for row in rows)
    c = linearization_constants(RAD.delta, RAD.K, False)
    z = np.array([1.0, -1.0, 2.0, 0.5])
    z *= c.tau / 2 / np.linalg.norm(z)
    lin = gaussian_linearization_check(RAD, 4, [z], 1_000_000, SEED).rows[0]
    ok = chain == 0 and lin.ok
    assert record(13, ok, f"{chain} chain violations over {len(rows)} rows; |z| = tau/2 = {c.tau / 2:.5f}: "
                          f"E exp = {lin.estimate:.6f} +- {lin.stderr:.1e} <= exp(C|z|^2) = {lin.bound:.4f}")


DETERMINISM = {
    "edge": "pattern=cyclic_band\nn=1000\nw=101\ntrials=5",
    "semicircle": "pattern=cyclic_band\nn=400\nw=41\ntrials=3",
    "localization": "n=12\nL=1,2,3,4,5,6\ntrials=10",
    "delocalization": "pattern=cyclic_band\nn=256\nw=41\nL=4\ntrials=3",
    "walks": "k=3",
    "trace_moment": "law=rademacher\npattern=cyclic_band\nn=100\nw=11\nk=2\ntrials=50\nC=1\nalpha=0",
    "norm_tail": "n=50,100\nt_grid=2,2.1,3\ntrials=100",
    "quad_tail": "n=100\nt_grid=1.2,1.5,2\ntrials=500",
    "rhoL_tail": "n=12\nL=3\nt_grid=1,2,6\ntrials=50",
    "net_check": "n=1,2\nepsilon=0.2\ncoverage_samples=20000\npsd_matrices=100",
    "mgf_check": "law=gaussian_real\ndelta=0.25",
    "linearization_check": "law=rademacher\nn=4\nz_fraction=0.25,0.5,1\ntrials=100000",
}


def test_criterion_14_determinism(tmp_path, capsys):
    differing, checked = [], 0
    for name, body in DETERMINISM.items():
        cfg = tmp_path / f"{name}.cfg"
        cfg.write_text(f"experiment={name}\n{body}\nmaster_seed=42\n")
        dirs = []
        for threads in (1, 4):
            out = tmp_path / f"{name}_{threads}"
            assert cli.main(["run", "--config", str(cfg), "--threads", str(threads), "--out", str(out)]) == 0
            dirs.append(out)
        files = sorted(f for f in os.listdir(dirs[0]) if f.endswith(".csv"))
        _, mismatch, errors = filecmp.cmpfiles(dirs[0], dirs[1], files, shallow=False)
        checked += len(files)
        if mismatch or errors or sorted(os.listdir(dirs[0])) != sorted(os.listdir(dirs[1])):
            differing.append(name)
    capsys.readouterr()
    ok = not differing
    assert record(14, ok, f"{checked} CSV files from {len(DETERMINISM)} experiments compared at 1 vs 4 threads; "
                          f"differing: {differing or 'none'}")
