import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from bandlab.concentration import (NET_HEADER, TAIL_HEADER, DivergentIntegralError, NetCoverageError,
                                   build_epsilon_net, gaussian_linearization_check, linearization_constants,
                                   mgf_bound_check, net_lambda_bound_check, norm_tail_experiment,
                                   quadratic_form_tail, rhoL_tail_experiment, sphere_grid, sphere_points)
from bandlab.ensemble import EntryLaw

from oracles import A_STAR, rademacher_linear_mgf_exact

GAUSS = EntryLaw("gaussian_real")
RAD = EntryLaw("rademacher")


def test_norm_tail_endpoints():
    est = norm_tail_experiment(GAUSS, 30, [0.0, 1.0, 3.0], 300, seed=1)
    assert est.exceed_prob[0] == 1.0 and est.exceed_prob[2] == 0.0
    assert est.lo95[2] == 0.0 and est.hi95[0] == 1.0
    assert np.all(np.diff(est.exceed_prob) <= 0)
    rows = est.csv_rows()
    assert len(rows) == 3 and rows[0].startswith("op_norm_over_sqrtN,30,,0,1,")
    assert TAIL_HEADER.count(",") == rows[0].count(",")


def test_norm_tail_is_thread_invariant():
    a = norm_tail_experiment(GAUSS, 20, [1.8, 2.0, 2.2], 60, seed=3, threads=1)
    b = norm_tail_experiment(GAUSS, 20, [1.8, 2.0, 2.2], 60, seed=3, threads=4)
    assert a.csv_rows() == b.csv_rows()


def test_norm_tail_band_scale_uses_width():
    est = norm_tail_experiment(GAUSS, 60, [1.0, 2.5], 40, seed=2, pattern="cyclic_band", w=9)
    assert np.all(est.values / math.sqrt(9) > 1.0)
    assert est.exceed_prob[0] == 1.0


def test_norm_tail_fit_on_informative_grid():
    est = norm_tail_experiment(GAUSS, 12, np.linspace(1.7, 2.3, 7), 400, seed=4)
    assert est.fit is not None and est.fit["points"] >= 3


def test_quad_tail_zero_vector():
    est = quadratic_form_tail(GAUSS, 10, np.zeros(10), [0.5, 1.0], 50, seed=0)
    assert np.all(est.values == 0) and np.all(est.exceed_prob == 0)


def test_quad_tail_matches_chi_square():
    n, trials = 100, 4000
    e1 = np.eye(n)[0]
    est = quadratic_form_tail(GAUSS, n, e1, [1.1, 1.2, 1.3, 2.0], trials, seed=5)
    for t, lo, hi in zip(est.thresholds, est.lo95, est.hi95):
        p = stats.chi2.sf(t * n, n)
        # loosen the 95% interval a little so four simultaneous checks rarely fail
        assert lo - 0.01 <= p <= hi + 0.01
    assert est.exceed_prob[-1] == 0.0


def test_quad_tail_far_threshold_is_zero():
    est = quadratic_form_tail(GAUSS, 100, np.eye(100)[0], [10.0], 10_000, seed=6)
    assert est.exceed_prob[0] == 0.0 and stats.chi2.sf(1000, 100) < 1e-100


def test_quad_tail_rejects_outside_ball():
    with pytest.raises(ValueError):
        quadratic_form_tail(GAUSS, 3, np.ones(3), [1.0], 10, 0)
    with pytest.raises(ValueError):
        quadratic_form_tail(GAUSS, 3, np.ones(2) / 2, [1.0], 10, 0)


def test_rhoL_tail_rademacher_L1():
    n = 16
    c = 1 / math.sqrt(math.log(n))
    est = rhoL_tail_experiment(RAD, "full", n, 1, [0.5 * c, c, 1.01 * c, 2.0], 50, seed=0)
    assert np.all(est.values == 1.0)
    assert est.exceed_prob.tolist() == [1.0, 1.0, 0.0, 0.0]
    assert est.exact and est.label == "rhoL_over_sqrt_LlogN"


def test_rhoL_tail_L_equal_n_is_norm_statistic():
    a = rhoL_tail_experiment(GAUSS, "full", 8, 8, [1.0], 20, seed=9, tag="same")
    b = norm_tail_experiment(GAUSS, 8, [1.0], 20, seed=9, tag="same")
    assert np.array_equal(a.values, b.values)


def test_rhoL_tail_far_threshold():
    est = rhoL_tail_experiment(GAUSS, "full", 12, 3, [6.0], 200, seed=1)
    assert est.exceed_prob[0] == 0.0 and est.exact


def test_rhoL_tail_search_mode_label():
    est = rhoL_tail_experiment(GAUSS, "full", 12, 3, [1.0], 5, seed=1, mode="search")
    assert not est.exact and est.label.endswith("_search")
    exact = rhoL_tail_experiment(GAUSS, "full", 12, 3, [1.0], 5, seed=1, mode="exact")
    assert np.all(est.values <= exact.values + 1e-12)
    with pytest.raises(ValueError):
        rhoL_tail_experiment(GAUSS, "full", 12, 3, [1.0], 5, seed=1, mode="fast")


def test_sphere_points_are_unit():
    x = sphere_points(np.random.default_rng(0), 1000, 3)
    assert x.shape == (1000, 6) and np.allclose(np.linalg.norm(x, axis=1), 1.0)


@pytest.mark.parametrize("n,bound", [(1, 100), (2, 10_000)])
def test_net_size_and_coverage(n, bound):
    net = build_epsilon_net(n, 0.2, rng=np.random.default_rng(n))
    assert net.size <= bound == net.bound
    assert net.coverage_ok and net.max_distance <= 0.2
    assert np.allclose(np.linalg.norm(net.points, axis=1), 1.0)
    assert net.csv_row().split(",")[:3] == [str(n), "0.20000000000000001", str(net.size)]
    assert NET_HEADER.count(",") == net.csv_row().count(",")


def test_circle_net_is_about_circumference_over_epsilon():
    net = build_epsilon_net(1, 0.2)
    assert 2 * math.pi / 0.4 <= net.size <= 2 * math.pi / 0.2 + 1


def test_grid_coverage_independent_check():
    pts = sphere_grid(2, 0.2)
    samples = sphere_points(np.random.default_rng(11), 20_000, 2)
    d = np.min(np.linalg.norm(samples[:, None, :] - pts[None, :, :], axis=2), axis=1)
    assert d.max() <= 0.2


def test_greedy_net_n1():
    net = build_epsilon_net(1, 0.2, rng=np.random.default_rng(0), method="greedy")
    assert net.coverage_ok and net.size <= 100
    pts = np.column_stack([net.points.real, net.points.imag])
    gaps = np.linalg.norm(pts[:, None] - pts[None], axis=2) + np.eye(net.size) * 9
    assert gaps.min() > 0.2  # packing is separated


def test_net_argument_checks():
    with pytest.raises(ValueError):
        build_epsilon_net(5, 0.2)
    with pytest.raises(ValueError):
        build_epsilon_net(2, 0.3)
    with pytest.raises(ValueError):
        build_epsilon_net(2, 0.2, method="volume")


def test_net_retry_repairs_holes(monkeypatch):
    import bandlab.concentration as conc
    sparse = sphere_grid(1, 0.2)[::2]
    monkeypatch.setattr(conc, "sphere_grid", lambda n, eps: sparse)
    net = build_epsilon_net(1, 0.2, coverage_samples=5000)
    assert net.attempts == 2 and net.coverage_ok and net.size > sparse.shape[0]


def test_net_coverage_failure_is_loud(monkeypatch):
    import bandlab.concentration as conc
    monkeypatch.setattr(conc, "sphere_grid", lambda n, eps: sphere_grid(1, 0.2)[:3])
    monkeypatch.setattr(conc, "_greedy_add", lambda pts, cand, eps: np.empty((0, pts.shape[1])))
    with pytest.raises(NetCoverageError, match="farther than"):
        build_epsilon_net(1, 0.2, coverage_samples=2000)


def test_net_bound_examples():
    net = build_epsilon_net(2, 0.1)
    rep = net_lambda_bound_check(net, np.eye(2))
    assert rep.lhs == pytest.approx(1.0) and rep.rhs == pytest.approx(1.25) and rep.ok
    zero = net_lambda_bound_check(net, np.zeros((2, 2)))
    assert zero.lhs == 0.0 and zero.rhs == 0.0 and zero.ok
    with pytest.raises(ValueError, match="semidefinite"):
        net_lambda_bound_check(net, np.diag([1.0, -1.0]))


def test_net_bound_random_psd_corpus():
    net = build_epsilon_net(2, 0.2, rng=np.random.default_rng(3))
    rng = np.random.default_rng(4)
    for _ in range(200):
        a = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        assert net_lambda_bound_check(net, a.conj().T @ a).ok


def test_mgf_examples():
    row = mgf_bound_check(RAD, 1.0, [1.0])[0]
    assert row.lhs == pytest.approx(math.cosh(1.0))
    assert row.mid == pytest.approx(1 + 3 * math.e * (math.e - 1)) and row.ok
    g = mgf_bound_check(GAUSS, 0.25, [2.0])[0]
    assert g.lhs == pytest.approx(math.exp(2.0)) and g.gaussian_integral == pytest.approx(math.sqrt(2))
    assert g.mid == pytest.approx(1 + 3 * math.sqrt(2) * (math.exp(16) - 1)) and g.ok
    for law in (RAD, GAUSS, EntryLaw("uniform")):
        z = mgf_bound_check(law, 0.25, [0.0])[0]
        assert z.lhs == z.mid == z.outer == 1.0


def test_mgf_errors():
    with pytest.raises(DivergentIntegralError):
        mgf_bound_check(GAUSS, 0.5, [1.0])
    with pytest.raises(ValueError):
        mgf_bound_check(EntryLaw("gaussian_complex"), 0.25, [1.0])


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(["rademacher", "gaussian_real", "uniform", "truncated_gaussian"]),
       st.floats(0.05, 0.45), st.floats(-20, 20))
def test_mgf_chain_holds(kind, delta, r):
    law = EntryLaw(kind, cutoff=2.0) if kind == "truncated_gaussian" else EntryLaw(kind)
    row = mgf_bound_check(law, delta, [r])[0]
    assert row.ok and row.lhs <= row.mid <= row.outer


def test_linearization_constants():
    c = linearization_constants(1.0, math.e, False)
    assert c.tau == pytest.approx(math.sqrt(A_STAR / (12 * math.e)), rel=1e-14)
    assert c.tau == pytest.approx(0.156293, abs=1e-6) and c.C == pytest.approx(32.6194, abs=1e-4)
    cc = linearization_constants(1.0, math.e, True)
    assert cc.tau == pytest.approx(c.tau / math.sqrt(8)) and cc.C == pytest.approx(4 * c.C)
    a = A_STAR
    assert abs(a + 0.5 * math.log1p(-a)) < 1e-15


def test_linearization_examples():
    tau = linearization_constants(RAD.delta, RAD.K, False).tau
    rep = gaussian_linearization_check(RAD, 4, [np.zeros(4), tau * np.eye(4)[0]], 1000, seed=0)
    zero, axis = rep.rows
    assert zero.estimate == 1.0 and zero.stderr == 0.0 and zero.ok
    assert axis.estimate == pytest.approx(math.exp(tau**2), rel=1e-12) and axis.ok
    assert axis.bound == pytest.approx(math.exp(rep.constants.C * tau**2))


def test_linearization_against_exact_enumeration():
    tau = linearization_constants(RAD.delta, RAD.K, False).tau
    z = np.array([1.0, -2.0, 0.5, 1.5])
    z = z / np.linalg.norm(z) * tau / 2
    rep = gaussian_linearization_check(RAD, 4, [z], 1_000_000, seed=1)
    row = rep.rows[0]
    assert row.ok
    assert abs(row.estimate - rademacher_linear_mgf_exact(z)) <= 4 * row.stderr


def test_linearization_complex_law():
    law = EntryLaw("gaussian_complex")
    c = linearization_constants(law.delta, law.K, True)
    z = np.full(3, (1 + 1j) / math.sqrt(6)) * c.tau
    assert gaussian_linearization_check(law, 3, [z], 200_000, seed=2).ok


def test_linearization_rejects_large_z():
    with pytest.raises(ValueError, match="tau"):
        gaussian_linearization_check(RAD, 2, [np.array([1.0, 0.0])], 100, seed=0)
