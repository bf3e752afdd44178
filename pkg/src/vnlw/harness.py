"""Experiment orchestration, configuration and persistence.

A run is a pure function of its configuration (seed included): the report
JSON carries no wall-clock data, which goes to a separate ``timing.json``.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import yaml

SCHEMA_VERSION = 1
TABLE_SCHEMA = "# vnlw-table {name} v1"


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


def fit_exponent(xs, ys):
    """Least-squares fit of ``log y = slope * log x + intercept``; returns ``(slope, intercept, r2)``."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.size < 3:
        raise ValueError("need at least 3 paired points")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("inputs must be positive")
    lx, ly = np.log(xs), np.log(ys)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    flat = ss_tot <= ly.size * (1e-12 * max(1.0, np.abs(ly).max())) ** 2  # constant up to roundoff
    r2 = 1.0 if flat else 1.0 - np.sum(resid**2) / ss_tot
    return float(slope), float(intercept), float(r2)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class GridSection:
    dim: int = 2
    N: int = 64
    L: float = float(np.pi)


@dataclass
class SolverSection:
    p: int = 5
    nu: float = 1.0
    dt: float = 1e-2
    dealias_factor: Optional[int] = None
    picard_tol: float = 1e-10
    picard_max_iter: int = 50
    ceiling: float = 1e8


@dataclass
class RandomSection:
    law: str = "rademacher"
    seed: Optional[int] = None


@dataclass
class OutputSection:
    dir: str = "out"
    dump_fields: bool = False


GAUSSIAN = {"kind": "gaussian", "width": 1.0, "amplitude": 1.0}
BORDERLINE = {"kind": "borderline", "decay": 1.0, "amplitude": 1.0}

EXPERIMENT_DEFAULTS: Dict[str, dict] = {
    "closeness": {
        "data": GAUSSIAN, "nus": [0.1, 0.05, 0.025, 0.0125], "k": 3, "T": 2.0,
        "save_every": 10, "slope_range": [0.8, 1.1],
    },
    "inflation": {
        "data": GAUSSIAN, "s": 0.25, "nus": [1e-6], "eps_targets": [0.1, 0.01],
        "T_phi": 86.0, "save_every": 10, "tail_tol": 0.1, "growth_window": 0.5,
        "ratio_target": 10.0, "norm_tol": 0.02, "slope_tol": 0.2,
    },
    "strichartz": {
        "q": 6.0, "r": 6.0, "s": 0.5, "T": 1.0, "n_data": 30, "nt": 129, "scales": [0.5, 2.0],
        "variation_tol": 0.05, "refine_tol": 0.10,
        "check_1d": {"N": 1024, "L": 32.0, "q": 4.0, "r": "inf", "n_data": 20},
    },
    "c0hs": {
        "s": 0.5, "q_tilde": 6.0, "r_tilde": 6.0, "horizons": [1.0, 0.5, 0.25], "n_sources": 6,
        "nt": 129, "slack": 1e-6,
    },
    "kernel": {
        "dims": [1, 2, 3],
        "grids": {"1": [4096, 40.0], "2": [512, 32.0], "3": [128, 8.0]},
        "t_scale": 0.5, "decay_dims": [1, 2], "decay_window": [5.0, 16.0],
        "integral_target": 1.0, "integral_tol": 1e-6, "radial_tol": 1e-6, "scaling_tol": 1e-8,
        "explicit_tol": {"1": 1e-3, "2": 1e-2, "3": 1e-2}, "decay_slack": 0.3,
        "smoothing": {"N": 512, "L": 16.0, "t_range": [0.1, 2.0], "n_times": 8, "slope_tol": 0.1},
    },
    "oscillator": {
        "powers": [1, 3, 5], "n_periods": 10, "cos_tol": 1e-9, "drift_tol": 1e-10,
        "period_tol": 1e-8, "p3_period": 7.416298709205, "p3_tol": 1e-4,
    },
    "randomize": {"data": {"kind": "gaussian", "width": 0.7, "amplitude": 1.0}, "n_samples": 500,
                  "identity_tol": 1e-12},
    "averaging": {
        "data": BORDERLINE, "T_grid": [0.03125, 0.0625, 0.125, 0.25, 0.5, 1.0], "M": 200,
        "steps_per_min": 8, "s": 0.0, "rel_tol": 0.5, "M_homogeneity": 50, "homogeneity_tol": 0.1,
    },
    "tails": {
        "data": BORDERLINE, "lambdas": [1e-6, 0.02, 0.04, 0.06, 0.08], "T_grid": [0.25, 0.5, 1.0],
        "M": 200, "steps_per_min": 16,
    },
    "picard": {
        "data": {"kind": "gaussian", "width": 0.7, "amplitude": 1.0}, "T": 1.0, "nt": 65,
        "bisection_steps": 12, "amplitude_bracket": [0.5, 4.0], "amplitude_fraction": 0.9,
        "ratio_max": 0.5, "min_iterations": 5, "refine": 8, "xt_tol": 1e-4,
    },
    "probabilistic": {
        "data": {"kind": "gaussian", "width": 0.7, "amplitude": 6.0}, "T_grid": [1.0, 0.5, 0.25, 0.125],
        "M": 100, "samples_per_unit": 64, "picard_tol": 1e-6, "picard_max_iter": 30,
        "continuity": {"T": 0.25, "s": 0.5, "eps": 0.5, "p": 0.9, "M": 50, "max_halvings": 8,
                       "bisection_steps": 4},
    },
}

RANDOM_EXPERIMENTS = {"randomize", "averaging", "tails", "probabilistic"}
TOP_KEYS = {"experiment", "grid", "solver", "random", "params", "output", "threads"}


def _merge_params(defaults: dict, given: dict, path: str) -> dict:
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        if key not in defaults:
            raise ConfigError(f"unknown key {path}{key}")
        if isinstance(defaults[key], dict) and key != "data":
            if not isinstance(val, dict):
                raise ConfigError(f"{path}{key} must be a mapping")
            out[key] = _merge_params(defaults[key], val, f"{path}{key}.")
        else:
            out[key] = copy.deepcopy(val)
    return out


def _section(cls, raw, name):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name} must be a mapping")
    names = {f.name for f in fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in {name}: {sorted(unknown)}")
    return cls(**raw)


@dataclass
class ExperimentConfig:
    """Validated experiment configuration."""

    experiment: str
    grid: GridSection = field(default_factory=GridSection)
    solver: SolverSection = field(default_factory=SolverSection)
    random: RandomSection = field(default_factory=RandomSection)
    params: dict = field(default_factory=dict)
    output: OutputSection = field(default_factory=OutputSection)
    threads: int = 1

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a mapping")
        unknown = set(raw) - TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
        name = raw.get("experiment")
        if name not in EXPERIMENT_DEFAULTS:
            raise ConfigError(f"unknown experiment {name!r}; choose one of {sorted(EXPERIMENT_DEFAULTS)}")
        try:
            cfg = cls(
                experiment=name,
                grid=_section(GridSection, raw.get("grid"), "grid"),
                solver=_section(SolverSection, raw.get("solver"), "solver"),
                random=_section(RandomSection, raw.get("random"), "random"),
                params=_merge_params(EXPERIMENT_DEFAULTS[name], raw.get("params") or {}, "params."),
                output=_section(OutputSection, raw.get("output"), "output"),
                threads=int(raw.get("threads", 1)),
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        cfg.validate()
        return cfg

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"unparseable configuration: {exc}") from exc
        return cls.from_dict(raw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_yaml(Path(path).read_text())

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "grid": asdict(self.grid),
            "solver": asdict(self.solver),
            "random": asdict(self.random),
            "params": copy.deepcopy(self.params),
            "output": asdict(self.output),
            "threads": self.threads,
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def validate(self):
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.grid.dim not in (1, 2, 3):
            raise ConfigError("grid.dim must be 1, 2 or 3")
        for key, val in self.params.items():
            if isinstance(val, list) and len(val) == 0:
                raise ConfigError(f"params.{key} is an empty range")
        if self.experiment in RANDOM_EXPERIMENTS and self.random.seed is None:
            raise ConfigError(f"experiment {self.experiment!r} needs random.seed")
        if self.experiment == "inflation":
            from .field_core import critical_exponent

            s_cr = critical_exponent(self.grid.dim, self.solver.p)
            s = float(self.params["s"])
            if not (0 < s < s_cr):
                raise ConfigError(
                    f"inflation needs 0 < s < s_cr = n/2 - 2/(p-1) = {s_cr:g}; got s = {s:g}. "
                    "Norm inflation is a supercritical phenomenon"
                )
        try:
            self.grid_spec()
            self.solver_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def grid_spec(self):
        from .field_core import make_grid

        return make_grid(self.grid.dim, self.grid.N, self.grid.L)

    def solver_config(self):
        from .nonlinear_solver import SolverConfig

        s = self.solver
        return SolverConfig(p=s.p, nu=s.nu, dt=s.dt, dealias_factor=s.dealias_factor,
                            picard_tol=s.picard_tol, picard_max_iter=s.picard_max_iter,
                            ceiling=s.ceiling)

    def echo(self) -> dict:
        """Configuration as recorded in the report (thread count excluded)."""
        d = self.to_dict()
        d.pop("threads")
        d.pop("output")
        return d


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    tables: Dict[str, tuple] = field(default_factory=dict)  # name -> (columns, rows)
    fits: Dict[str, dict] = field(default_factory=dict)
    mc: Dict[str, dict] = field(default_factory=dict)
    verdicts: Dict[str, dict] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)
    ceiling: bool = False
    mode_count: int = 0

    def table(self, name, columns, rows):
        self.tables[name] = (list(columns), [[r[c] for c in columns] for r in rows])

    def verdict(self, name, value, passed, bound=None):
        self.verdicts[name] = {"value": value, "bound": bound, "pass": bool(passed)}


def _clean(obj):
    """Recursively convert numpy scalars and arrays into JSON-ready values."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if np.isnan(v):
            return "nan"
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    result: RunResult
    schema_version: int = SCHEMA_VERSION

    @property
    def passed(self) -> bool:
        return all(v["pass"] for v in self.result.verdicts.values())

    @property
    def exit_code(self) -> int:
        if self.result.ceiling:
            return 3
        return 0 if self.passed else 2

    def to_dict(self) -> dict:
        r = self.result
        return _clean({
            "schema_version": self.schema_version,
            "experiment": self.experiment,
            "config": self.config,
            "tables": {k: {"columns": c, "rows": rows} for k, (c, rows) in sorted(r.tables.items())},
            "fits": r.fits,
            "mc": r.mc,
            "verdicts": r.verdicts,
            "passed": self.passed,
            "resource_ceiling": r.ceiling,
            "mode_count": r.mode_count,
            "notes": r.notes,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def table_csv(self, name: str) -> str:
        cols, rows = self.result.tables[name]
        buf = io.StringIO()
        buf.write(TABLE_SCHEMA.format(name=name) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        return buf.getvalue()

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json())
        for name in self.result.tables:
            (out / f"{name}.csv").write_text(self.table_csv(name))
        return out


# ---------------------------------------------------------------------------
# Data builders
# ---------------------------------------------------------------------------


def build_field(grid, spec: dict, seed: int = 0):
    """Real field from a data description (``gaussian``, ``borderline``, ``shell``, ``bandlimited``)."""
    from .field_core import SpectralField, gaussian_field, random_bandlimited_field, sobolev_norm

    kind = spec.get("kind", "gaussian")
    amp = float(spec.get("amplitude", 1.0))
    if kind == "gaussian":
        return gaussian_field(grid, float(spec.get("width", 1.0)), amp)
    if kind == "borderline":
        # |hat f| ~ <xi>^(-decay), L^2 normalized to the amplitude
        m = (1.0 + grid.xi_magnitude**2) ** (-0.5 * float(spec.get("decay", 1.0)))
        m = m * (np.abs(grid.xi_magnitude) < grid.nyquist)
        f = SpectralField(grid, m.astype(complex), True)
        return f * (amp / sobolev_norm(f, 0.0))
    if kind == "shell":
        # (|x|/r0)^(2m) exp(m (1 - |x|^2/r0^2)): smooth, peaks with value amp at |x| = r0
        r0, m = float(spec.get("radius", 2.0)), int(spec.get("order", 2))
        q = grid.radius**2 / r0**2
        return SpectralField.from_samples(grid, amp * q**m * np.exp(m * (1.0 - q)))
    if kind == "bandlimited":
        rng = np.random.default_rng(int(spec.get("seed", seed)))
        f = random_bandlimited_field(grid, float(spec.get("kmax", 3.0)), rng, float(spec.get("decay", 0.0)))
        env = float(spec.get("envelope", 0.0))
        if env > 0:
            f = SpectralField.from_samples(grid, f.samples * np.exp(-((grid.radius / env) ** 2)))
        return f * (amp / sobolev_norm(f, 0.0))
    raise ConfigError(f"unknown data kind {kind!r}")


def data_family(grid, count: int):
    """Gaussians, shells and enveloped random band-limited fields, in equal thirds."""
    from .field_core import CauchyData

    k = count // 3
    out = []
    for w in np.geomspace(0.8, 2.0, k):
        out.append(("gaussian", float(w), build_field(grid, {"kind": "gaussian", "width": w})))
    for r0 in np.linspace(1.5, 3.0, k):
        out.append(("shell", float(r0), build_field(grid, {"kind": "shell", "radius": r0})))
    for i in range(count - 2 * k):
        spec = {"kind": "bandlimited", "kmax": 2.0, "seed": 100 + i, "envelope": 2.0}
        out.append(("bandlimited", float(i), build_field(grid, spec)))
    return [(kind, tag, CauchyData.at_rest(f)) for kind, tag, f in out]


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def _run_closeness(cfg: ExperimentConfig, P: dict) -> RunResult:
    from .nonlinear_solver import closeness_error

    res = RunResult()
    grid = cfg.grid_spec()
    phi = build_field(grid, P["data"])
    scfg = cfg.solver_config()
    rows = []
    for nu in P["nus"]:
        try:
            err = closeness_error(phi, float(nu), int(P["k"]), float(P["T"]), scfg, int(P["save_every"]))
        except FloatingPointError as exc:
            res.ceiling = True
            res.notes.append(f"nu={nu}: {exc}")
            return res
        rows.append({"nu": float(nu), "error": err})
    res.table("closeness", ["nu", "error"], rows)
    slope, icpt, r2 = fit_exponent([r["nu"] for r in rows], [r["error"] for r in rows])
    res.fits["error_vs_nu"] = {"slope": slope, "intercept": icpt, "r2": r2}
    lo, hi = P["slope_range"]
    res.verdict("closeness_slope", slope, lo <= slope <= hi, [lo, hi])
    res.mode_count = grid.size
    return res


def _run_inflation(cfg: ExperimentConfig, P: dict) -> RunResult:
    from .nonlinear_solver import inflation_scan

    res = RunResult()
    grid = cfg.grid_spec()
    phi = build_field(grid, P["data"])
    scan = inflation_scan(phi, float(P["s"]), [float(e) for e in P["eps_targets"]], cfg.solver_config(),
                          [float(n) for n in P["nus"]], float(P["T_phi"]), int(P["save_every"]),
                          float(P["tail_tol"]), float(P["growth_window"]))
    cols = ["nu", "lambda", "s", "eps", "norm0", "norm_max", "t_max", "ratio"]
    res.table("inflation", cols, scan.rows)
    res.table("growth", ["nu", "slope", "r2", "t_start", "t_end"], scan.growth)
    res.notes.extend(scan.flags)
    res.fits["growth"] = scan.growth
    res.fits["data_constant"] = scan.constant
    ratio = scan.max_ratio if scan.rows else 0.0
    res.verdict("max_ratio", ratio, ratio >= P["ratio_target"], P["ratio_target"])
    dev = max((abs(r["norm0"] / r["eps"] - 1.0) for r in scan.rows), default=np.inf)
    res.verdict("norm0_on_curve", dev, dev <= P["norm_tol"], P["norm_tol"])
    sdev = max((abs(g["slope"] - P["s"]) for g in scan.growth), default=np.inf)
    res.verdict("late_growth_slope", sdev, sdev <= P["slope_tol"], P["slope_tol"])
    res.mode_count = grid.size
    return res


def _strichartz_family_ratios(grid, family, q, r, s, T, nt, scales, p):
    from .field_core import scale_data
    from .propagator import strichartz_ratio

    rows = []
    for kind, tag, d in family:
        base = strichartz_ratio(d, T, q, r, s, nt=nt)
        row = {"kind": kind, "tag": tag, "ratio": base}
        for lam in scales:
            scaled = scale_data(d, lam, p)
            row[f"ratio_scaled_{lam:g}"] = strichartz_ratio(scaled, T / lam, q, r, s, nt=nt)
        rows.append(row)
    return rows


def _parse_exponent(v):
    return np.inf if v in ("inf", np.inf) else float(v)


def _run_strichartz(cfg: ExperimentConfig, P: dict) -> RunResult:
    from .field_core import make_grid

    res = RunResult()
    grid = cfg.grid_spec()
    q, r, s, T = _parse_exponent(P["q"]), _parse_exponent(P["r"]), float(P["s"]), float(P["T"])
    scales = [float(x) for x in P["scales"]]
    rows = _strichartz_family_ratios(grid, data_family(grid, int(P["n_data"])), q, r, s, T,
                                     int(P["nt"]), scales, cfg.solver.p)
    cols = ["kind", "tag", "ratio"] + [f"ratio_scaled_{lam:g}" for lam in scales]
    res.table("strichartz", cols, rows)
    var = max(abs(row[c] / row["ratio"] - 1.0) for row in rows for c in cols[3:])
    res.verdict("scale_variation", var, var < P["variation_tol"], P["variation_tol"])
    fine = make_grid(grid.dim, 2 * grid.points_per_axis, grid.half_width)
    rows_f = _strichartz_family_ratios(fine, data_family(fine, int(P["n_data"])), q, r, s, T,
                                       int(P["nt"]), [], cfg.solver.p)
    m0 = max(row["ratio"] for row in rows)
    m1 = max(row["ratio"] for row in rows_f)
    res.fits["max_ratio"] = {"N": m0, "2N": m1}
    rel = abs(m1 / m0 - 1.0)
    res.verdict("refinement_stability", rel, np.isfinite(m0) and rel <= P["refine_tol"], P["refine_tol"])

    c1 = P["check_1d"]
    q1, r1 = _parse_exponent(c1["q"]), _parse_exponent(c1["r"])
    s1 = 0.5 - (1.0 / q1 + (0.0 if r1 == np.inf else 1.0 / r1))
    ratios_1d = {}
    for N1 in (int(c1["N"]), 2 * int(c1["N"])):
        g1 = make_grid(1, N1, float(c1["L"]))
        fam = data_family(g1, int(c1["n_data"]))
        ratios_1d[N1] = [row["ratio"] for row in _strichartz_family_ratios(g1, fam, q1, r1, s1, T,
                                                                            int(P["nt"]), [], cfg.solver.p)]
    a, b = (max(v) for v in ratios_1d.values())
    res.fits["max_ratio_1d"] = {"s": s1, "N": a, "2N": b}
    rel1 = abs(b / a - 1.0)
    res.verdict("bounded_1d", rel1, np.isfinite(a) and rel1 <= P["refine_tol"], P["refine_tol"])
    res.mode_count = grid.size
    return res


def gaussian_time_sources(grid, count: int, nt: int, T: float = 1.0):
    """Sources ``exp(-((t - t0)/sigma)^2) * G(x)`` with varied centers and widths."""
    from .field_core import gaussian_field
    from .propagator import PropagatorParams, source_history

    times = np.linspace(0.0, T, nt)
    params = PropagatorParams(1.0, grid)
    out = []
    for i in range(count):
        t0 = 0.1 + 0.8 * i / max(count - 1, 1)
        sig = 0.1 + 0.05 * (i % 3)
        w = 0.6 + 0.2 * (i % 4)
        g = gaussian_field(grid, w).modes
        env = np.exp(-(((times - t0) / sig) ** 2))
        out.append(((t0, sig, w), source_history(params, times, env[:, None, None] * g[None] if grid.dim == 2
                                                   else np.multiply.outer(env, g), True)))
    return out


def _run_c0hs(cfg: ExperimentConfig, P: dict) -> RunResult:
    from .propagator import duhamel_c0hs_ratio

    res = RunResult()
    grid = cfg.grid_spec()
    s, qt, rt = float(P["s"]), _parse_exponent(P["q_tilde"]), _parse_exponent(P["r_tilde"])
    horizons = sorted((float(h) for h in P["horizons"]), reverse=True)
    rows = []
    for (t0, sig, w), F in gaussian_time_sources(grid, int(P["n_sources"]), int(P["nt"])):
        for T in horizons:
            rows.append({"t0": t0, "sigma": sig, "width": w, "T": T,
                         "ratio": duhamel_c0hs_ratio(F, T, s, qt, rt)})
    res.table("c0hs", ["t0", "sigma", "width", "T", "ratio"], rows)
    top = max(r["ratio"] for r in rows if r["T"] == horizons[0])
    worst = max(r["ratio"] for r in rows if r["T"] < horizons[0])
    res.fits["family_max"] = {"T_max": top, "smaller_T": worst}
    bound = top * (1.0 + float(P["slack"]))
    res.verdict("T_uniform", worst, worst <= bound and np.isfinite(top), bound)
    res.mode_count = grid.size
    return res


def _run_kernel(cfg: ExperimentConfig, P: dict) -> RunResult:
    from .field_core import make_grid
    from .kernel_lab import (decay_fit, explicit_formula_check, scaled_kernel, smoothing_ratios,
                             unit_kernel)

    res = RunResult()
    rows = []
    t = float(P["t_scale"])
    for n in P["dims"]:
        N, L = P["grids"][str(n)]
        grid = make_grid(int(n), int(N), float(L))
        prof = unit_kernel(grid)
        scaled = scaled_kernel(prof, t)
        direct = unit_kernel(make_grid(int(n), int(N), float(L) * t), t)
        scale_err = float(np.abs(direct.samples - scaled.samples).max() / np.abs(scaled.samples).max())
        lq = {}
        for qv in (1.0, 2.0, np.inf):
            expect = t ** (1 - n + (0.0 if qv == np.inf else n / qv)) * prof.lebesgue_norm(qv)
            lq[qv] = abs(direct.lebesgue_norm(qv) / expect - 1.0)
        row = {
            "n": int(n), "N": int(N), "L": float(L), "integral": prof.integral(),
            "angular_variance": prof.angular_variance, "scaling_error": max(scale_err, *lq.values()),
            "explicit_error": explicit_formula_check(int(n), grid),
            "L1": prof.lebesgue_norm(1.0), "L2": prof.lebesgue_norm(2.0), "Linf": prof.lebesgue_norm(np.inf),
            "decay_slope": float("nan"),
        }
        if n in P["decay_dims"]:
            lo, hi = P["decay_window"]
            row["decay_slope"] = decay_fit(prof, float(lo), min(float(hi), prof.trusted_radius))
        rows.append(row)
        rn = f"n{n}"
        res.verdict(f"{rn}_radial", row["angular_variance"], row["angular_variance"] <= P["radial_tol"],
                    P["radial_tol"])
        ie = abs(row["integral"] - P["integral_target"])
        res.verdict(f"{rn}_integral", row["integral"], ie <= P["integral_tol"], P["integral_target"])
        res.verdict(f"{rn}_scaling", row["scaling_error"], row["scaling_error"] <= P["scaling_tol"], P["scaling_tol"])
        tol = P["explicit_tol"][str(n)]
        res.verdict(f"{rn}_explicit", row["explicit_error"], row["explicit_error"] <= tol, tol)
        if n in P["decay_dims"]:
            b = -(n + 1) + P["decay_slack"]
            res.verdict(f"{rn}_decay", row["decay_slope"], row["decay_slope"] <= b, b)
        res.mode_count += grid.size
        res.table(f"kernel_profile_n{n}", ["radius", "value"],
                  [{"radius": r_, "value": v_} for r_, v_ in zip(prof.radii, prof.values)
                   if r_ <= prof.trusted_radius])
    cols = ["n", "N", "L", "integral", "angular_variance", "scaling_error", "explicit_error",
            "L1", "L2", "Linf", "decay_slope"]
    res.table("kernel", cols, rows)

    sm = P["smoothing"]
    sgrid = make_grid(2, int(sm["N"]), float(sm["L"]))
    ts = np.geomspace(float(sm["t_range"][0]), float(sm["t_range"][1]), int(sm["n_times"]))
    ratios = smoothing_ratios(sgrid, ts)
    slope, _, r2 = fit_exponent(ts, ratios)
    res.fits["smoothing"] = {"slope": slope, "r2": r2, "target": 0.0}
    res.table("smoothing", ["t", "ratio"], [{"t": a, "ratio": b} for a, b in zip(ts, ratios)])
    res.verdict("smoothing_exponent", slope, abs(slope) <= sm["slope_tol"], sm["slope_tol"])
    return res


def _run_oscillator(cfg: ExperimentConfig, P: dict) -> RunResult:
    from .limit_ode import integrate_V, oscillator_energy, period_by_return, period_V, solve_V

    res = RunResult()
    rows = []
    for p in P["powers"]:
        p = int(p)
        T = period_V(p)
        row = {"p": p, "period_quadrature": T, "period_return": period_by_return(p)}
        sol = solve_V(p)
        t = np.linspace(0.0, P["n_periods"] * T, 2001)
        if p == 1:
            row["cos_error"] = float(np.abs(sol(t) - np.cos(t)).max())
        else:
            row["cos_error"] = float("nan")
        y = integrate_V(p, t)
        e = oscillator_energy(y[0], y[1], p)
        row["drift_per_period"] = float(np.abs(e - e[0]).max() / P["n_periods"])
        row["sample_drift"] = sol.energy_drift()
        rows.append(row)
        res.verdict(f"p{p}_period_agreement", abs(row["period_quadrature"] - row["period_return"]),
                    abs(row["period_quadrature"] - row["period_return"]) <= P["period_tol"], P["period_tol"])
        if p == 1:
            res.verdict("p1_cos", row["cos_error"], row["cos_error"] <= P["cos_tol"], P["cos_tol"])
        else:
            res.verdict(f"p{p}_drift", row["drift_per_period"], row["drift_per_period"] <= P["drift_tol"],
                        P["drift_tol"])
        if p == 3:
            d = abs(T - P["p3_period"])
            res.verdict("p3_period", T, d <= P["p3_tol"], P["p3_period"])
    res.table("oscillator", ["p", "period_quadrature", "period_return", "cos_error", "drift_per_period",
                             "sample_drift"], rows)
    return res


def _law_and_seed(cfg: ExperimentConfig):
    from .randomization import RandomLaw, SeedSpec

    return RandomLaw(cfg.random.law), SeedSpec(int(cfg.random.seed))


def expected_square_multiplier(partition, real: bool = True) -> np.ndarray:
    """``E[M(xi)^2]`` for ``M = sum_k h_k psi(xi - k)`` with unit-variance draws.

    Independent draws give ``sum_k psi_k^2``.  Paired draws ``h_{-k} = h_k``
    add ``sum_{k != 0} psi_k psi_{-k}``, and the multiplier is averaged with
    its mirror image (this only moves the Nyquist planes).  All sums factorize
    over axes.
    """
    grid, table, ks = partition.grid, partition.table, partition.ks

    def product(axis_vec):
        out = np.ones(grid.shape)
        for a in range(grid.dim):
            out = out * grid._broadcast_axis(axis_vec, a)
        return out

    if not real:
        return product((table**2).sum(axis=0))
    row = {int(k): i for i, k in enumerate(ks)}
    mirror_rows = np.array([row.get(-int(k), -1) for k in ks])
    mirrored = np.where(mirror_rows[:, None] >= 0, table[mirror_rows], 0.0)
    N = grid.points_per_axis
    flip = (-np.arange(N)) % N  # FFT index of -xi, Nyquist maps to itself

    def cov(cols):
        # E[M(xi) M(xi')] where xi' takes per-axis indices cols
        same = (table * table[:, cols]).sum(axis=0)
        paired = (table * mirrored[:, cols]).sum(axis=0)
        zero = table[row[0]] * table[row[0], cols]
        return product(same) + product(paired) - product(zero)

    ident = np.arange(N)
    return 0.25 * (2.0 * cov(ident) + 2.0 * cov(flip))


def _run_randomize(cfg: ExperimentConfig, P: dict) -> RunResult:
    from .field_core import CauchyData, sobolev_norm
    from .randomization import RandomLaw, SeedSpec, build_partition, randomize

    res = RunResult()
    grid = cfg.grid_spec()
    law, seed = _law_and_seed(cfg)
    f = build_field(grid, P["data"])
    data = CauchyData(f, f * 0.5)
    part = build_partition(grid)
    res.fits["partition_residual"] = part.sum_residual()
    same = randomize(data, RandomLaw("ones"), seed, part)
    ident = max(np.abs(same.displacement.modes - f.modes).max(), np.abs(same.velocity.modes - 0.5 * f.modes).max())
    res.verdict("ones_identity", ident, ident <= P["identity_tol"], P["identity_tol"])
    M = int(P["n_samples"])
    sq = np.array([sobolev_norm(randomize(data, law, seed, part, w).displacement, 0.0) ** 2 for w in range(M)])
    mean, se = float(sq.mean()), float(sq.std(ddof=1) / np.sqrt(M))
    weight = expected_square_multiplier(part)
    base = sobolev_norm(f, 0.0) ** 2
    lo, hi = float(weight.min()) * base, float(weight.max()) * base
    exact = float(np.sum(np.abs(f.modes) ** 2 * weight) * grid.spectral_weight)
    res.mc["l2_squared"] = {"estimate": mean, "stderr": se, "M": M, "ci95": [mean - 1.96 * se, mean + 1.96 * se],
                            "expected": exact, "bracket": [lo, hi]}
    res.verdict("l2_bracket", mean, lo - 3 * se <= mean <= hi + 3 * se, [lo, hi])
    res.verdict("l2_expectation", abs(mean - exact) / se, abs(mean - exact) <= 3 * se, 3.0)
    other = randomize(data, law, SeedSpec(seed.seed + 1), part)
    first = randomize(data, law, seed, part)
    diff = float(np.abs(other.displacement.modes - first.displacement.modes).max())
    res.verdict("seeds_differ", diff, diff > 0, 0.0)
    res.mode_count = grid.size
    return res


def _run_averaging(cfg: ExperimentConfig, P: dict) -> RunResult:
    from .field_core import CauchyData
    from .randomization import build_partition, mc_free_L6

    res = RunResult()
    grid = cfg.grid_spec()
    law, seed = _law_and_seed(cfg)
    f = build_field(grid, P["data"])
    part = build_partition(grid)
    data = CauchyData.at_rest(f)
    T_grid = sorted(float(t) for t in P["T_grid"])
    out = mc_free_L6(data, law, seed, T_grid, int(P["M"]), part, int(P["steps_per_min"]), cfg.threads)
    res.table("averaging", ["T", "estimate", "stderr", "M"],
              [{"T": T, "estimate": st.estimate, "stderr": st.stderr, "M": st.M} for T, st in zip(out.T, out.stats)])
    for T, st in zip(out.T, out.stats):
        res.mc[f"T={T:g}"] = st.to_dict()
    target = float(P["s"]) + 1.0 / 6.0
    res.fits["T_exponent"] = {"slope": out.slope, "intercept": out.intercept, "r2": out.r2, "target": target}
    ok = out.slope > 0 and abs(out.slope - target) <= P["rel_tol"] * target
    res.verdict("T_exponent", out.slope, ok, [target * (1 - P["rel_tol"]), target * (1 + P["rel_tol"])])
    Mh, Th = int(P["M_homogeneity"]), T_grid[len(T_grid) // 2]
    one = mc_free_L6(data, law, seed, Th, Mh, part, int(P["steps_per_min"]), cfg.threads)
    two = mc_free_L6(data.scaled(2.0), law, seed, Th, Mh, part, int(P["steps_per_min"]), cfg.threads)
    h = two.estimate / one.estimate / 64.0
    res.verdict("degree6_homogeneity", h, abs(h - 1.0) <= P["homogeneity_tol"], P["homogeneity_tol"])
    zero = mc_free_L6(data.scaled(0.0), law, seed, Th, 50, part, int(P["steps_per_min"]), 1)
    res.verdict("zero_data", zero.estimate, zero.estimate == 0.0, 0.0)
    res.mode_count = grid.size
    return res


def _run_tails(cfg: ExperimentConfig, P: dict) -> RunResult:
    from .field_core import CauchyData
    from .randomization import MCStats, build_partition, mc_free_l6_samples, wilson_interval

    res = RunResult()
    grid = cfg.grid_spec()
    law, seed = _law_and_seed(cfg)
    data = CauchyData.at_rest(build_field(grid, P["data"]))
    part = build_partition(grid)
    T_grid = sorted(float(t) for t in P["T_grid"])
    M = int(P["M"])
    if M < 200:
        raise ConfigError("tails needs M >= 200")
    samples = mc_free_l6_samples(data, law, seed, T_grid, M, part, int(P["steps_per_min"]), cfg.threads)
    rows, cheb_ok, mono_ok = [], True, True
    prev = None
    for j, T in enumerate(T_grid):
        m6 = MCStats.from_samples(samples[:, j])
        res.mc[f"sixth_moment_T={T:g}"] = m6.to_dict()
        norms = samples[:, j] ** (1.0 / 6.0)
        fr = []
        for lam in P["lambdas"]:
            hits = int(np.sum(norms >= lam))
            lo, hi = wilson_interval(hits, M)
            cheb = m6.estimate / lam**6
            cheb_ok &= hits / M <= cheb + 1e-15
            rows.append({"T": T, "lambda": float(lam), "fraction": hits / M, "ci_low": lo, "ci_high": hi,
                         "chebyshev": cheb})
            fr.append(hits / M)
        if prev is not None:
            mono_ok &= all(b >= a for a, b in zip(prev, fr))
        prev = fr
    res.table("tails", ["T", "lambda", "fraction", "ci_low", "ci_high", "chebyshev"], rows)
    res.verdict("chebyshev", cheb_ok, cheb_ok)
    res.verdict("monotone_in_T", mono_ok, mono_ok)
    small = min(P["lambdas"])
    f_small = min(r["fraction"] for r in rows if r["lambda"] == small)
    res.verdict("small_lambda", f_small, f_small == 1.0, 1.0)
    res.mode_count = grid.size
    return res


def _free_trajectory(data, T: float, nt: int, nu: float = 1.0):
    from .propagator import PropagatorParams, homogeneous_trajectory

    return homogeneous_trajectory(data, np.linspace(0.0, T, nt), PropagatorParams(nu, data.grid))


def _contracts(data, T, nt, scfg, ratio_max):
    from .nonlinear_solver import picard_solve

    uf = _free_trajectory(data, T, nt, scfg.nu)
    v, rec = picard_solve(uf, scfg)
    r = rec.ratios
    good = rec.converged and len(r) > 0 and bool(np.all(r <= ratio_max))
    return good, uf, v, rec


def _run_picard(cfg: ExperimentConfig, P: dict) -> RunResult:
    from .field_core import CauchyData, spacetime_norm
    from .nonlinear_solver import picard_map, solve_ivp, xt_norm
    from .propagator import PropagatorParams

    res = RunResult()
    grid = cfg.grid_spec()
    scfg = cfg.solver_config()
    base = CauchyData.at_rest(build_field(grid, P["data"]))
    T, nt = float(P["T"]), int(P["nt"])
    lo, hi = (float(x) for x in P["amplitude_bracket"])
    if not _contracts(base.scaled(lo), T, nt, scfg, P["ratio_max"])[0]:
        raise ConfigError("amplitude bracket: lower end does not contract")
    rows = []
    for _ in range(int(P["bisection_steps"])):
        mid = np.sqrt(lo * hi)
        ok = _contracts(base.scaled(mid), T, nt, scfg, P["ratio_max"])[0]
        rows.append({"amplitude": mid, "contracts": int(ok)})
        lo, hi = (mid, hi) if ok else (lo, mid)
    res.table("bisection", ["amplitude", "contracts"], rows)
    lam0 = spacetime_norm(_free_trajectory(base.scaled(lo), T, nt), 6, 6)
    amp = lo * float(P["amplitude_fraction"])
    data = base.scaled(amp)
    ok, uf, v, rec = _contracts(data, T, nt, scfg, P["ratio_max"])
    l6 = spacetime_norm(uf, 6, 6)
    res.fits["lambda0"] = {"amplitude": lo, "free_L6L6": lam0}
    res.fits["run"] = {"amplitude": amp, "free_L6L6": l6, "distances": rec.distances, "ratios": rec.ratios}
    r = rec.ratios
    n_ok = len(r) >= P["min_iterations"] and bool(np.all(r[: int(P["min_iterations"])] <= P["ratio_max"]))
    res.verdict("below_lambda0", l6, l6 < lam0, lam0)
    res.verdict("contraction_ratios", float(r.max()) if len(r) else float("nan"), ok and n_ok, P["ratio_max"])
    params = PropagatorParams(scfg.nu, grid)
    vn, _ = picard_map(uf, v.u_modes, scfg, params)
    fp = xt_norm(grid, uf.times, vn - v.u_modes)
    res.verdict("fixed_point_residual", fp, fp <= 2 * scfg.picard_tol, 2 * scfg.picard_tol)
    dt = T / (nt - 1) / int(P["refine"])
    sol = solve_ivp(data, T, replace(scfg, dt=dt), save_every=int(P["refine"]))
    if sol.outcome != "ok":
        res.ceiling = True
        res.notes.append(f"solve_ivp outcome {sol.outcome}")
        return res
    dist = xt_norm(grid, uf.times, sol.u_modes - (uf.u_modes + v.u_modes))
    res.verdict("agrees_with_solver", dist, dist <= P["xt_tol"], P["xt_tol"])
    res.mode_count = grid.size
    return res


def _picard_outcomes(data_list, T, spu, scfg, threads, s=None):
    from .field_core import sobolev_norms_batch
    from .nonlinear_solver import picard_solve
    from .randomization import _map

    nt = int(round(T * spu)) + 1

    def one(d):
        uf = _free_trajectory(d, T, nt, scfg.nu)
        v, rec = picard_solve(uf, scfg)
        norm = float("inf")
        if rec.converged and s is not None:
            norm = float(sobolev_norms_batch(d.grid, uf.u_modes + v.u_modes, s).max())
        return rec.converged, norm

    return _map(one, data_list, threads)


def _run_probabilistic(cfg: ExperimentConfig, P: dict) -> RunResult:
    from .field_core import CauchyData
    from .randomization import build_partition, randomize, wilson_interval

    res = RunResult()
    grid = cfg.grid_spec()
    law, seed = _law_and_seed(cfg)
    scfg = replace(cfg.solver_config(), picard_tol=float(P["picard_tol"]),
                   picard_max_iter=int(P["picard_max_iter"]))
    base = CauchyData.at_rest(build_field(grid, P["data"]))
    part = build_partition(grid)
    M = int(P["M"])
    rand = [randomize(base, law, seed, part, w) for w in range(M)]
    rows = []
    for T in sorted((float(t) for t in P["T_grid"]), reverse=True):
        out = _picard_outcomes(rand, T, int(P["samples_per_unit"]), scfg, cfg.threads)
        fails = sum(1 for ok, _ in out if not ok)
        lo, hi = wilson_interval(fails, M)
        rows.append({"T": T, "non_contraction": fails / M, "ci_low": lo, "ci_high": hi})
    res.table("existence", ["T", "non_contraction", "ci_low", "ci_high"], rows)
    fr = [r["non_contraction"] for r in rows]
    mono = all(b <= a for a, b in zip(fr, fr[1:]))
    res.verdict("non_increasing_as_T_decreases", fr, mono)
    expo = 1.0 / 6.0
    consts = [r["non_contraction"] / r["T"] ** expo for r in rows]
    res.fits["shape_constant"] = {"exponent": expo, "C_hat": max(consts),
                                  "bound": [max(consts) * r["T"] ** expo for r in rows]}

    c = P["continuity"]
    Mc, Tc, sc, eps, ptar = int(c["M"]), float(c["T"]), float(c["s"]), float(c["eps"]), float(c["p"])

    def frequencies(scale):
        data = [randomize(base.scaled(scale), law, seed, part, w) for w in range(Mc)]
        out = _picard_outcomes(data, Tc, int(P["samples_per_unit"]), scfg, cfg.threads, sc)
        a = sum(1 for ok, _ in out if ok)
        b = sum(1 for ok, nrm in out if nrm <= eps)
        return {"scale": scale, "contraction": a / Mc, "small_norm": b / Mc, "both": b / Mc}

    crows = []
    scale, passing = 1.0, None
    for _ in range(int(c["max_halvings"]) + 1):
        row = frequencies(scale)
        crows.append(row)
        if row["both"] > ptar:
            passing = scale
            break
        scale *= 0.5
    if passing is not None and passing < 1.0:
        lo_s, hi_s = passing, 2.0 * passing
        for _ in range(int(c["bisection_steps"])):
            mid = np.sqrt(lo_s * hi_s)
            row = frequencies(mid)
            crows.append(row)
            if row["both"] > ptar:
                lo_s = mid
            else:
                hi_s = mid
        passing = lo_s
    res.table("continuity", ["scale", "contraction", "small_norm", "both"], crows)
    best = max((r["both"] for r in crows), default=0.0)
    res.fits["continuity"] = {"scale": passing, "eps": eps, "p": ptar, "T": Tc, "s": sc}
    res.verdict("continuity_event", best, passing is not None and best > ptar, ptar)
    res.mode_count = grid.size
    return res


RUNNERS: Dict[str, Callable[[ExperimentConfig, dict], RunResult]] = {
    "closeness": _run_closeness,
    "inflation": _run_inflation,
    "strichartz": _run_strichartz,
    "c0hs": _run_c0hs,
    "kernel": _run_kernel,
    "oscillator": _run_oscillator,
    "randomize": _run_randomize,
    "averaging": _run_averaging,
    "tails": _run_tails,
    "picard": _run_picard,
    "probabilistic": _run_probabilistic,
}


def run(config: ExperimentConfig, out_dir=None) -> ExperimentReport:
    """Execute one experiment; write ``report.json``, CSV tables and ``timing.json`` when ``out_dir`` is set."""
    t0 = time.perf_counter()
    result = RUNNERS[config.experiment](config, config.params)
    report = ExperimentReport(config.experiment, config.echo(), result)
    if out_dir is not None:
        out = report.write(out_dir)
        timing = {"wall_clock_s": time.perf_counter() - t0, "threads": config.threads}
        (out / "timing.json").write_text(json.dumps(timing, indent=2) + "\n")
    return report
