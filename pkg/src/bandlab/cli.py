"""Command-line runner: ``bandlab run --config FILE`` and ``bandlab selftest``."""
from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from . import concentration as conc
from .config import ConfigError, ExperimentConfig, load_config, render_config
from .ensemble import PatternKind, build_pattern
from .localization import DELOC_HEADER, LEMMA_HEADER, delocalization_experiment, lemma_experiment, lemma_rows
from .montecarlo import fmt_value, map_trials, mean_stderr, trial_seed
from .spectral import EDGE_HEADER, edge_trial, semicircle_cdf
from .walks import (BoundValidityError, count_bound_check, enumerate_classes, trace_moment_bound,
                    trace_moment_mc, verify_fk_inequalities)

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

WALK_HEADER = "k,t,count,bound,ok"
CLASS_HEADER = "word,t,l,m"
TRACE_HEADER = "n,w,k,trials,mean,stderr,log_mean,bound,threshold,ok"
PSD_HEADER = "n,matrices,violations,max_lhs_over_rhs"
MGF_HEADER = "r,lhs,gaussian_integral,mid,outer,ok"
LIN_HEADER = "n,tau,C,z_norm,estimate,stderr,bound,ok"
DENSITY_HEADER = "n,w,bin_lo,bin_hi,empirical,semicircle"


@dataclass
class RunResult:
    tables: Dict[str, List[str]] = field(default_factory=dict)  # suffix -> lines incl. header
    summary: List[str] = field(default_factory=list)
    failures: List[str] = field(default_factory=list)

    def table(self, suffix: str, header: str, rows: List[str]) -> None:
        self.tables[suffix] = [header] + list(rows)

    def check(self, ok: bool, what: str) -> None:
        if not ok:
            self.failures.append(what)


def _csv(*values) -> str:
    return ",".join(fmt_value(v) for v in values)


def _edge(cfg: ExperimentConfig, threads, res: RunResult, semicircle: bool) -> None:
    law = cfg.entry_law()
    kind = PatternKind(cfg.pattern)
    grid = cfg.grid()
    with_ks = cfg.with_ks or semicircle
    tasks = [(gi, n, w, t, trial_seed(cfg.master_seed, cfg.experiment, gi, t))
             for gi, (n, w) in enumerate(grid) for t in range(cfg.trials)]

    def one(x):
        spectra: list = []
        row = edge_trial(law, kind, x[1], x[2], x[3], x[4], with_ks, spectra if semicircle else None)
        return row, spectra

    out = map_trials(one, tasks, threads)
    rows = [r for r, _ in out]
    res.table("", EDGE_HEADER, [r.csv() for r in rows])
    density = []
    for gi, (n, w) in enumerate(grid):
        sel = [r for r in rows if (r.n, r.w) == (n, build_pattern(kind, n, w).w)]
        m, se = mean_stderr([r.ratio for r in sel])
        part = f"n={n} w={sel[0].w} ratio={m:.6g}+-{se:.2g}"
        if with_ks:
            part += f" ks_max={max(r.ks for r in sel):.4g}"
        res.summary.append(part)
        if semicircle:
            scaled = np.concatenate([s[0] for (r, s) in out if (r.n, r.w) == (sel[0].n, sel[0].w)])
            scaled = scaled / math.sqrt(sel[0].w)
            edges = np.linspace(-2.5, 2.5, cfg.bins + 1)
            counts, _ = np.histogram(scaled, bins=edges)
            emp = counts / (scaled.size * np.diff(edges))
            ref = (semicircle_cdf(edges[1:]) - semicircle_cdf(edges[:-1])) / np.diff(edges)
            density += [_csv(n, sel[0].w, edges[i], edges[i + 1], emp[i], ref[i]) for i in range(cfg.bins)]
    if semicircle:
        res.table("_density", DENSITY_HEADER, density)


def _localization(cfg, threads, res):
    n = cfg.n[0]
    w = cfg.w[0] if cfg.pattern != "full" else n
    Ls = sorted(set(cfg.L))
    results = lemma_experiment(cfg.entry_law(), cfg.pattern, n, w, Ls, cfg.trials, cfg.master_seed, threads)
    pw = build_pattern(cfg.pattern, n, w).w
    res.table("", LEMMA_HEADER, lemma_rows(n, pw, results))
    violations = sum(rep.violations for r in results for rep in r["reports"].values())
    monotone = True
    for r in results:
        vals = [r["reports"][L].rho_L for L in Ls]
        monotone &= all(a <= b for a, b in zip(vals, vals[1:]))
        if n in r["reports"]:
            monotone &= r["reports"][n].rho_L == r["rho"]
    res.summary.append(f"violations={violations} rho_L_monotone={'true' if monotone else 'false'}")
    res.check(violations == 0, f"{violations} localized-eigenvalue bound violations")
    res.check(monotone, "rho_L not monotone in L")


def _delocalization(cfg, threads, res):
    n = cfg.n[0]
    w = cfg.w[0] if cfg.pattern != "full" else n
    L = cfg.L[0] if cfg.L else None
    out = delocalization_experiment(cfg.entry_law(), cfg.pattern, n, w, L, cfg.eta, cfg.kappa, cfg.trials,
                                    cfg.master_seed, threads, c=cfg.c)
    res.table("", DELOC_HEADER, out.rows)
    res.summary.append(f"L={out.L} violations={out.violations} localized={out.total_localized} "
                       f"in_window={sum(out.in_window)}")
    res.check(out.violations == 0, f"{out.violations} trials with localized edge eigenvectors")


def _walks(cfg, threads, res):
    k = cfg.k
    classes = enumerate_classes(k)
    rows = count_bound_check(k, classes)
    fk = verify_fk_inequalities(k, classes)
    res.table("", WALK_HEADER, [_csv(r["k"], r["t"], r["count"], r["bound"], r["ok"]) for r in rows])
    if k <= 3:
        res.table("_classes", CLASS_HEADER, [_csv("-".join(map(str, c.word)), c.t, c.l, c.m) for c in classes])
    res.summary.append(f"k={k} classes={len(classes)} fk_ok={'true' if fk.ok else 'false'}")
    res.check(all(r["ok"] for r in rows), "class count exceeds its bound")
    res.check(fk.ok, f"counting inequality fails: {fk.counterexample}")


def _trace_moment(cfg, threads, res):
    n = cfg.n[0]
    w = cfg.w[0] if cfg.pattern != "full" else n
    pattern = build_pattern(cfg.pattern, n, w)
    est = trace_moment_mc(cfg.entry_law(), pattern, cfg.k, cfg.trials, cfg.master_seed, threads)
    try:
        b = trace_moment_bound(n, pattern.w, cfg.k, cfg.C, cfg.alpha)
        bound, threshold = b.value, b.threshold
        ok = est.mean - 4.0 * (est.stderr if math.isfinite(est.stderr) else 0.0) <= bound
    except BoundValidityError as exc:
        bound, threshold, ok = math.nan, (2 * cfg.k * (6 * cfg.C * cfg.k) ** cfg.alpha) ** 6, True
        res.summary.append(f"bound not applicable ({exc})")
    res.table("", TRACE_HEADER, [_csv(n, pattern.w, cfg.k, est.trials, est.mean, est.stderr, est.log_mean,
                                      bound, threshold, ok)])
    res.summary.append(f"mean={est.mean:.8g}+-{est.stderr:.3g} bound={bound:.8g}")
    res.check(ok, "trace moment estimate exceeds the bound")


def _tail_rows(est, res):
    res.tables.setdefault("", [conc.TAIL_HEADER]).extend(est.csv_rows())
    probs = " ".join(f"{t:g}:{p:.4g}" for t, p in zip(est.thresholds, est.exceed_prob))
    fit = "" if est.fit is None else f" slope={est.fit['slope']:.4g}"
    res.summary.append(f"{est.label} n={est.n} {probs}{fit}")


def _norm_tail(cfg, threads, res):
    for gi, (n, w) in enumerate(cfg.grid()):
        _tail_rows(conc.norm_tail_experiment(cfg.entry_law(), n, cfg.t_grid, cfg.trials, cfg.master_seed,
                                             threads, pattern=cfg.pattern, w=w, grid_index=gi), res)


def _quad_tail(cfg, threads, res):
    n = cfg.n[0]
    w = cfg.w[0] if cfg.pattern != "full" else n
    z = np.array(cfg.z) if cfg.z else np.eye(n)[0]
    _tail_rows(conc.quadratic_form_tail(cfg.entry_law(), n, z, cfg.t_grid, cfg.trials, cfg.master_seed,
                                        threads, pattern=cfg.pattern, w=w), res)


def _rhoL_tail(cfg, threads, res):
    n = cfg.n[0]
    w = cfg.w[0] if cfg.pattern != "full" else n
    _tail_rows(conc.rhoL_tail_experiment(cfg.entry_law(), cfg.pattern, n, cfg.L[0], cfg.t_grid, cfg.trials,
                                         cfg.master_seed, threads, w=w, mode=cfg.rho_mode), res)


def random_psd(n: int, seed: int) -> np.ndarray:
    """A* A with A an n x n complex Gaussian matrix."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return a.conj().T @ a


def _net_check(cfg, threads, res):
    net_rows, psd_rows = [], []
    for gi, n in enumerate(cfg.n):
        rng = np.random.default_rng(np.random.SeedSequence(trial_seed(cfg.master_seed, "net_build", gi, 0)))
        net = conc.build_epsilon_net(n, cfg.epsilon, rng, cfg.coverage_samples, method=cfg.net_method)
        seeds = [trial_seed(cfg.master_seed, cfg.experiment, gi, t) for t in range(cfg.psd_matrices)]
        reports = map_trials(lambda s: conc.net_lambda_bound_check(net, random_psd(n, s)), seeds, threads)
        viol = sum(1 for r in reports if not r.ok)
        worst = max((r.lhs / r.rhs for r in reports if r.rhs > 0), default=0.0)
        net_rows.append(net.csv_row())
        psd_rows.append(_csv(n, len(reports), viol, worst))
        res.summary.append(f"n={n} size={net.size} bound={net.bound:g} coverage_ok="
                           f"{'true' if net.coverage_ok else 'false'} psd_violations={viol}")
        res.check(net.size <= net.bound, f"n={n}: net larger than its bound")
        res.check(net.coverage_ok, f"n={n}: coverage failed")
        res.check(viol == 0, f"n={n}: {viol} PSD bound violations")
    res.table("", conc.NET_HEADER, net_rows)
    res.table("_psd", PSD_HEADER, psd_rows)


def _mgf_check(cfg, threads, res):
    law = cfg.entry_law()
    rows = conc.mgf_bound_check(law, law.delta, cfg.r_grid)
    res.table("", MGF_HEADER, [_csv(r.r, r.lhs, r.gaussian_integral, r.mid, r.outer, r.ok) for r in rows])
    bad = sum(1 for r in rows if not r.ok)
    res.summary.append(f"law={law.kind.value} delta={law.delta:g} violations={bad}")
    res.check(bad == 0, f"{bad} mgf chain violations")


def _linearization_check(cfg, threads, res):
    law = cfg.entry_law()
    n = cfg.n[0]
    const = conc.linearization_constants(law.delta, law.K, law.is_complex)
    if law.is_complex:
        direction = np.full(n, (1 + 1j) / math.sqrt(2 * n))
    else:
        direction = np.full(n, 1.0 / math.sqrt(n))
    zs = [f * const.tau * direction for f in cfg.z_fraction]
    rep = conc.gaussian_linearization_check(law, n, zs, cfg.trials, cfg.master_seed)
    res.table("", LIN_HEADER, [_csv(n, rep.constants.tau, rep.constants.C, r.z_norm, r.estimate, r.stderr,
                                    r.bound, r.ok) for r in rep.rows])
    res.summary.append(f"tau={const.tau:.6g} C={const.C:.6g} ok={'true' if rep.ok else 'false'}")
    res.check(rep.ok, "linearization estimate exceeds its bound")


RUNNERS: Dict[str, Callable] = {
    "edge": lambda c, t, r: _edge(c, t, r, False),
    "semicircle": lambda c, t, r: _edge(c, t, r, True),
    "localization": _localization,
    "delocalization": _delocalization,
    "walks": _walks,
    "trace_moment": _trace_moment,
    "norm_tail": _norm_tail,
    "quad_tail": _quad_tail,
    "rhoL_tail": _rhoL_tail,
    "net_check": _net_check,
    "mgf_check": _mgf_check,
    "linearization_check": _linearization_check,
}


def run(cfg: ExperimentConfig, threads: Optional[int] = None) -> RunResult:
    """Run one configured experiment; ``threads`` overrides the config value."""
    res = RunResult()
    RUNNERS[cfg.experiment](cfg, threads if threads is not None else cfg.threads, res)
    return res


def write_outputs(cfg: ExperimentConfig, res: RunResult, out_dir: str) -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    stem, ext = os.path.splitext(cfg.output_name)
    ext = ext or ".csv"
    paths = []
    for suffix, lines in res.tables.items():
        path = os.path.join(out_dir, f"{stem}{suffix}{ext}")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
        paths.append(path)
    path = os.path.join(out_dir, f"{stem}.resolved.cfg")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_config(cfg))
    paths.append(path)
    return paths


def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        res = run(cfg, args.threads)
    except AssertionError as exc:
        print(f"experiment={cfg.experiment} status=fail assertion: {exc}")
        return EXIT_ASSERT
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"experiment={cfg.experiment} status=error {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    write_outputs(cfg, res, args.out)
    status = "ok" if not res.failures else "fail"
    detail = "; ".join(res.summary + [f"FAILED: {f}" for f in res.failures])
    print(f"experiment={cfg.experiment} status={status} {detail}")
    return EXIT_OK if not res.failures else EXIT_ASSERT


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return EXIT_OK if run_selftest(verbose=True) else EXIT_ASSERT


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="bandlab", description="Random band-matrix spectral laboratory.")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one configured experiment")
    p_run.add_argument("--config", required=True, help="key=value experiment file")
    p_run.add_argument("--threads", type=int, default=None,
                       help="worker threads (0 = all cores; default from BANDLAB_THREADS, else 1)")
    p_run.add_argument("--out", default=".", help="output directory")
    p_run.set_defaults(func=_cmd_run)
    p_self = sub.add_parser("selftest", help="run the built-in invariant checks")
    p_self.set_defaults(func=_cmd_selftest)
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
