"""Flat ``key=value`` experiment configuration: parsing, validation and a
canonical rendering that parses back to an equal config."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Tuple

from .ensemble import EntryLaw, LawKind, PatternKind, build_pattern
from .localization import check_window_parameters
from .walks import DEFAULT_K_LIMIT

__all__ = ["EXPERIMENTS", "ConfigError", "ExperimentConfig", "parse_config", "render_config", "load_config"]

EXPERIMENTS = ("edge", "semicircle", "localization", "delocalization", "walks", "trace_moment",
               "norm_tail", "quad_tail", "rhoL_tail", "net_check", "mgf_check", "linearization_check")

# experiments that run a single (n, w) point
_SINGLE_N = {"localization", "delocalization", "trace_moment", "quad_tail", "rhoL_tail", "linearization_check"}
# experiments that sample matrices from a pattern
_MATRIX = {"edge", "semicircle", "localization", "delocalization", "trace_moment", "norm_tail", "quad_tail",
           "rhoL_tail"}


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class ExperimentConfig:
    experiment: str
    law: str = "gaussian_real"
    cutoff: Optional[float] = None
    C: float = 1.0
    alpha: float = 0.5
    delta: Optional[float] = None
    K: Optional[float] = None
    pattern: str = "full"
    n: List[int] = field(default_factory=lambda: [100])
    w: List[int] = field(default_factory=list)
    k: int = 1
    L: List[int] = field(default_factory=list)
    eta: float = 0.1
    kappa: float = 0.9
    c: float = 4.0
    t_grid: List[float] = field(default_factory=lambda: [1.0, 2.0, 3.0])
    epsilon: float = 0.2
    coverage_samples: int = 100_000
    psd_matrices: int = 1000
    net_method: str = "auto"
    z: List[float] = field(default_factory=list)
    z_fraction: List[float] = field(default_factory=lambda: [0.5])
    r_grid: List[float] = field(default_factory=lambda: [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0])
    rho_mode: str = "auto"
    with_ks: bool = True
    bins: int = 80
    trials: int = 1
    master_seed: int = 0
    out_path: str = ""
    threads: Optional[int] = None

    def entry_law(self) -> EntryLaw:
        return EntryLaw(self.law, self.cutoff, self.C, self.alpha, self.delta, self.K)

    @property
    def output_name(self) -> str:
        return self.out_path or f"{self.experiment}.csv"

    def grid(self) -> List[Tuple[int, int]]:
        """(n, w) pairs; full patterns use w = n, band patterns pair every n with every w."""
        if self.pattern == "full":
            return [(n, n) for n in self.n]
        return [(n, w) for n in self.n for w in self.w]


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_REQUIRED = ("experiment",)


def _parse_bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(f"expected true/false, got {s!r}")


def _parse_int(s: str) -> int:
    try:
        return int(s)
    except ValueError:
        v = float(s)  # accept 1e3 style, reject 2.5
        if not v.is_integer():
            raise ValueError(f"expected an integer, got {s!r}") from None
        return int(v)


def _parse_float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError(f"expected a finite number, got {s!r}")
    return v


def _parse_value(key: str, raw: str):
    typ = _TYPES[key]
    if typ == "List[int]":
        return [_parse_int(x.strip()) for x in raw.split(",")] if raw else []
    if typ == "List[float]":
        return [_parse_float(x.strip()) for x in raw.split(",")] if raw else []
    if key == "threads":
        return 0 if raw.lower() == "auto" else _parse_int(raw)
    if typ in ("Optional[float]",):
        return None if raw.lower() in ("", "none") else _parse_float(raw)
    if typ == "float":
        return _parse_float(raw)
    if typ == "int":
        return _parse_int(raw)
    if typ == "bool":
        return _parse_bool(raw)
    return raw


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate; the first problem is reported with its line number."""
    values: Dict[str, object] = {}
    lines: Dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected key=value, got {body!r}", lineno)
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        try:
            values[key] = _parse_value(key, raw)
        except ValueError as exc:
            raise ConfigError(f"malformed value for {key}: {exc}", lineno) from None
        lines[key] = lineno
    for key in _REQUIRED:
        if key not in values:
            raise ConfigError(f"missing required key {key!r}")
    cfg = ExperimentConfig(**values)
    _validate(cfg, lines)
    return cfg


def _validate(cfg: ExperimentConfig, lines: Dict[str, int]) -> None:
    def fail(key: str, msg: str):
        raise ConfigError(msg, lines.get(key))

    if cfg.experiment not in EXPERIMENTS:
        fail("experiment", f"unknown experiment {cfg.experiment!r}; expected one of {', '.join(EXPERIMENTS)}")
    try:
        LawKind(cfg.law)
    except ValueError:
        fail("law", f"unknown law {cfg.law!r}")
    try:
        cfg.entry_law()
    except ValueError as exc:
        # point at the parameter the message names, if it was given
        named = [k for k in ("delta", "cutoff", "K", "alpha") if k in lines and k in str(exc)]
        fail(named[0] if named else "law", str(exc))
    if cfg.pattern not in (PatternKind.FULL.value, PatternKind.STANDARD_BAND.value, PatternKind.CYCLIC_BAND.value):
        fail("pattern", f"pattern must be full, standard_band or cyclic_band, got {cfg.pattern!r}")
    if cfg.trials < 1:
        fail("trials", "trials must be >= 1")
    if not 0 <= cfg.master_seed < 2**64:
        fail("master_seed", "master_seed must be a 64-bit unsigned integer")
    if cfg.threads is not None and cfg.threads < 0:
        fail("threads", "threads must be a positive integer or auto")
    if "/" in cfg.output_name or cfg.output_name in (".", ".."):
        fail("out_path", "out_path is a file name; use --out for the directory")
    exp = cfg.experiment
    if not cfg.n or any(n < 1 for n in cfg.n):
        fail("n", "n must be a non-empty list of positive integers")
    if exp in _SINGLE_N and len(cfg.n) != 1:
        fail("n", f"{exp} takes a single n")
    if exp in _MATRIX:
        if cfg.pattern != "full":
            if not cfg.w:
                fail("w", f"pattern {cfg.pattern} needs w")
            if exp in _SINGLE_N and len(cfg.w) != 1:
                fail("w", f"{exp} takes a single w")
        for n, w in cfg.grid():
            try:
                build_pattern(cfg.pattern, n, w)
            except ValueError as exc:
                fail("w" if cfg.pattern != "full" else "n", str(exc))
    if exp == "semicircle" and cfg.bins < 1:
        fail("bins", "bins must be >= 1")
    if exp == "localization":
        if not cfg.L:
            fail("L", "localization needs a list of L values")
        if any(not 1 <= L <= cfg.n[0] for L in cfg.L):
            fail("L", f"every L must lie in [1, {cfg.n[0]}]")
    if exp == "delocalization":
        try:
            check_window_parameters(cfg.eta, cfg.kappa)
        except ValueError as exc:
            fail("kappa" if "kappa" in lines else "eta", str(exc))
        if len(cfg.L) > 1 or (cfg.L and not 1 <= cfg.L[0] <= cfg.n[0]):
            fail("L", f"delocalization takes at most one L in [1, {cfg.n[0]}]")
        if cfg.c <= 0:
            fail("c", "c must be positive")
    if exp == "walks" and not 1 <= cfg.k <= DEFAULT_K_LIMIT:
        fail("k", f"k must lie in [1, {DEFAULT_K_LIMIT}]")
    if exp == "trace_moment" and cfg.k < 1:
        fail("k", "k must be >= 1")
    if exp in ("norm_tail", "quad_tail", "rhoL_tail") and not cfg.t_grid:
        fail("t_grid", "t_grid must not be empty")
    if exp == "quad_tail" and cfg.z:
        if len(cfg.z) != cfg.n[0]:
            fail("z", f"z must have n = {cfg.n[0]} entries")
        if math.fsum(x * x for x in cfg.z) > 1.0 + 1e-12:
            fail("z", "z must lie in the unit ball")
    if exp == "rhoL_tail":
        if len(cfg.L) != 1 or not 1 <= cfg.L[0] <= cfg.n[0]:
            fail("L", f"rhoL_tail takes a single L in [1, {cfg.n[0]}]")
        if cfg.n[0] < 2:
            fail("n", "rhoL_tail needs n >= 2")
        if cfg.rho_mode not in ("auto", "exact", "search"):
            fail("rho_mode", "rho_mode must be auto, exact or search")
    if exp == "net_check":
        if any(not 1 <= n <= 4 for n in cfg.n):
            fail("n", "net_check needs 1 <= n <= 4")
        if not 0.0 < cfg.epsilon < 0.25:
            fail("epsilon", "epsilon must lie in (0, 1/4)")
        if cfg.coverage_samples < 1:
            fail("coverage_samples", "coverage_samples must be >= 1")
        if cfg.psd_matrices < 0:
            fail("psd_matrices", "psd_matrices must be >= 0")
        if cfg.net_method not in ("auto", "grid", "greedy"):
            fail("net_method", "net_method must be auto, grid or greedy")
    if exp == "mgf_check":
        if LawKind(cfg.law) is LawKind.GAUSSIAN_COMPLEX:
            fail("law", "mgf_check needs a real-valued law")
        if not cfg.r_grid:
            fail("r_grid", "r_grid must not be empty")
        try:
            cfg.entry_law().gaussian_integral(cfg.entry_law().delta)
        except ValueError as exc:
            fail("delta", str(exc))
    if exp == "linearization_check":
        if not cfg.z_fraction or any(not 0.0 <= f <= 1.0 for f in cfg.z_fraction):
            fail("z_fraction", "z_fraction entries must lie in [0, 1]")
        if cfg.trials < 2:
            fail("trials", "linearization_check needs trials >= 2")


def _render_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return ",".join(_render_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_config(cfg: ExperimentConfig) -> str:
    """Every key with its resolved value, one per line; parses back to ``cfg``."""
    out = []
    for f in fields(ExperimentConfig):
        v = getattr(cfg, f.name)
        if f.name == "threads":
            out.append("# threads unset" if v is None else f"threads={'auto' if v == 0 else v}")
            continue
        if f.name == "out_path" and not v:
            out.append("# out_path unset")
            continue
        out.append(f"{f.name}={_render_value(v)}")
    return "\n".join(out) + "\n"


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config(text)
