"""Three-lake reservoir case: configuration, model assembly, runs and Monte-Carlo checks.

State ``x = [h1, h2, h3, r12, r23]`` (levels in m, underground flows in m^3/s),
input ``u`` = controlled outflows (m^3/s), disturbance ``w`` = rainfall (mm).
Rainfall reaches the levels through ``kappa`` (m per mm).  Flows are in
m^3/s while the step length is configured in hours.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from .distributions import Distribution
from .errors import ConfigError, DistributionSpecError
from .grammar import format_distribution, parse_distribution
from .inversion import Tolerances
from .smpc import LinearSystem, SimulationTrace, SmpcProblem, closed_loop_simulate
from .solver import SolverOptions

__all__ = [
    "CaseConfig",
    "LakeConfig",
    "load_config",
    "default_config",
    "build_system",
    "build_problem",
    "steady_state",
    "run_case",
    "read_data_file",
    "validate_monte_carlo",
    "MonteCarloReport",
    "DATA_COLUMNS",
]

log = logging.getLogger(__name__)

DATA_COLUMNS = ("tL", "h1", "h2", "h3", "tU", "u1", "u2", "u3", "q12", "q23", "w1", "w2", "w3")
DATA_FILE = "lakes.dat"
SUMMARY_FILE = "summary.json"
SECONDS_PER_HOUR = 3600.0
WIDE_INTERVAL = 0.1


@dataclass
class LakeConfig:
    area: float
    rain: str
    y_ref: float
    y_max: float
    y_min: float
    h0: float
    eta: float | None = None
    base_outflow: float | None = None


@dataclass
class CaseConfig:
    """Validated case description; see ``three_lakes.ini`` for the file layout."""

    lakes: list[LakeConfig]
    inflow: float = 200.0
    u_max: float = 400.0
    kappa: float = 0.01
    horizon: int = 10
    gamma_flood: float = 0.95
    gamma_drought: float = 0.95
    gamma_release: float = 0.95
    dt_hours: float = 1.0
    duration_hours: float = 24.0
    feedback: str = "affine"
    seed: int = 0
    r12_0: float | None = None
    r23_0: float | None = None
    solver: dict = field(default_factory=lambda: {"max_iter": 200, "kkt_tol": 1e-5, "feas_tol": 1e-7})
    quadrature: dict = field(default_factory=lambda: {"tol_abs": 1e-10, "tol_rel": 1e-8, "max_subdiv": 50})

    def __post_init__(self):
        _validate(self)

    @property
    def steps(self) -> int:
        return int(round(self.duration_hours / self.dt_hours))

    @property
    def disturbances(self) -> list[Distribution]:
        return [parse_distribution(l.rain) for l in self.lakes]

    def canonical(self) -> str:
        """Stable text form (seed excluded) used for the config hash."""
        d = asdict(self)
        d.pop("seed")
        d["lakes"] = [{**l, "rain": format_distribution(parse_distribution(l["rain"]))} for l in d["lakes"]]
        return json.dumps(d, sort_keys=True)

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _validate(cfg: CaseConfig):
    if len(cfg.lakes) != 3:
        raise ConfigError(f"exactly three lakes are required, got {len(cfg.lakes)}")
    for name in ("inflow", "u_max", "kappa", "dt_hours", "duration_hours"):
        v = getattr(cfg, name)
        if not (math.isfinite(v) and v > 0):
            raise ConfigError(f"{name} must be positive and finite, got {v}")
    for name in ("gamma_flood", "gamma_drought", "gamma_release"):
        v = getattr(cfg, name)
        if not 0.0 < v < 1.0:
            raise ConfigError(f"{name} must lie in (0, 1), got {v}")
    if cfg.horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {cfg.horizon}")
    if abs(cfg.steps * cfg.dt_hours - cfg.duration_hours) > 1e-9 * cfg.duration_hours:
        raise ConfigError("duration_hours must be a multiple of dt_hours")
    if cfg.feedback not in ("affine", "none"):
        raise ConfigError(f"feedback must be 'affine' or 'none', got {cfg.feedback!r}")
    if cfg.seed < 0:
        raise ConfigError("seed must be nonnegative")
    for j, lake in enumerate(cfg.lakes, 1):
        sec = f"lake{j}"
        if not (lake.area > 0 and math.isfinite(lake.area)):
            raise ConfigError(f"[{sec}] area must be positive")
        if not lake.y_min < lake.y_ref < lake.y_max:
            raise ConfigError(f"[{sec}] requires y_min < y_ref < y_max")
        if not math.isfinite(lake.h0):
            raise ConfigError(f"[{sec}] h0 must be finite")
        if j < 3:
            if lake.eta is None or not 0.0 < lake.eta <= 1.0:
                raise ConfigError(f"[{sec}] eta must lie in (0, 1]")
            if lake.base_outflow is None or not lake.base_outflow > 0:
                raise ConfigError(f"[{sec}] base_outflow must be positive")
        try:
            parse_distribution(lake.rain)
        except DistributionSpecError as exc:
            raise ConfigError(f"[{sec}] rain: {exc}") from exc
    for key, v in cfg.solver.items():
        if not v > 0:
            raise ConfigError(f"[solver] {key} must be positive")
    for key, v in cfg.quadrature.items():
        if not v > 0:
            raise ConfigError(f"[quadrature] {key} must be positive")


_CASE_KEYS = {
    "inflow": float,
    "u_max": float,
    "kappa": float,
    "horizon": int,
    "gamma_flood": float,
    "gamma_drought": float,
    "gamma_release": float,
    "dt_hours": float,
    "duration_hours": float,
    "feedback": str,
    "seed": int,
    "r12_0": float,
    "r23_0": float,
}
_LAKE_KEYS = {
    "area": float,
    "rain": str,
    "y_ref": float,
    "y_max": float,
    "y_min": float,
    "h0": float,
    "eta": float,
    "base_outflow": float,
}
_SOLVER_KEYS = {"max_iter": int, "kkt_tol": float, "feas_tol": float}
_QUAD_KEYS = {"tol_abs": float, "tol_rel": float, "max_subdiv": int}


def _read_section(parser, section, spec, required=()):
    out = {}
    if not parser.has_section(section):
        if required:
            raise ConfigError(f"missing section [{section}]")
        return out
    for key, raw in parser.items(section):
        if key not in spec:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        try:
            out[key] = spec[key](raw.strip())
        except ValueError:
            raise ConfigError(f"[{section}] {key}: cannot read {raw!r} as {spec[key].__name__}") from None
    for key in required:
        if key not in out:
            raise ConfigError(f"[{section}] missing required key {key!r}")
    return out


def parse_config(text: str, source: str = "<string>") -> CaseConfig:
    """Build a :class:`CaseConfig` from INI text; absent keys take the bundled defaults."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        parser.read_string(default_config_text(), source="<defaults>")
        user = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
        user.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    allowed = {"case", "lake1", "lake2", "lake3", "solver", "quadrature"}
    for sec in user.sections():
        if sec not in allowed:
            raise ConfigError(f"{source}: unknown section [{sec}]")
        spec = _CASE_KEYS if sec == "case" else _SOLVER_KEYS if sec == "solver" else _QUAD_KEYS if sec == "quadrature" else _LAKE_KEYS
        for key, raw in user.items(sec):
            if key not in spec:
                raise ConfigError(f"{source}: [{sec}] unknown key {key!r}")
            parser.set(sec, key, raw)
    case = _read_section(parser, "case", _CASE_KEYS)
    lakes = []
    for j in (1, 2, 3):
        vals = _read_section(parser, f"lake{j}", _LAKE_KEYS, required=("area", "rain", "y_ref", "y_max", "y_min", "h0"))
        if j == 3 and ("eta" in vals or "base_outflow" in vals):
            raise ConfigError("[lake3] has no underground outlet; eta/base_outflow are not allowed")
        lakes.append(LakeConfig(**vals))
    solver = _read_section(parser, "solver", _SOLVER_KEYS)
    quad = _read_section(parser, "quadrature", _QUAD_KEYS)
    try:
        return CaseConfig(lakes=lakes, solver=solver, quadrature=quad, **case)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def default_config_text() -> str:
    return resources.files("cfcc").joinpath("three_lakes.ini").read_text()


def default_config() -> CaseConfig:
    return parse_config("", "<defaults>")


def load_config(path) -> CaseConfig:
    """Read and validate a case file; raises :class:`ConfigError` with file/field context."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_config(text, str(p))


def build_system(cfg: CaseConfig) -> LinearSystem:
    dts = cfg.dt_hours * SECONDS_PER_HOUR
    S = [l.area for l in cfg.lakes]
    eta = [cfg.lakes[0].eta, cfg.lakes[1].eta]
    vs = [cfg.lakes[0].base_outflow, cfg.lakes[1].base_outflow]
    A = np.eye(5)
    A[1, 3] = dts / S[1]
    A[2, 4] = dts / S[2]
    A[3, 3] = A[4, 4] = 0.0
    B = np.zeros((5, 3))
    for j in range(3):
        B[j, j] = -dts / S[j]
    B[3, 0], B[4, 1] = eta
    G = np.vstack([cfg.kappa * np.eye(3), np.zeros((2, 3))])
    c = np.array([dts / S[0] * (cfg.inflow - vs[0]), -dts / S[1] * vs[1], 0.0, vs[0], vs[1]])
    C = np.hstack([np.eye(3), np.zeros((3, 2))])
    return LinearSystem(A, B, G, c, C, cfg.disturbances)


def steady_state(cfg: CaseConfig) -> tuple[np.ndarray, np.ndarray]:
    """Inputs and state that hold the references under mean rainfall."""
    dts = cfg.dt_hours * SECONDS_PER_HOUR
    L1, L2, L3 = cfg.lakes
    m = [d.mean() for d in cfg.disturbances]
    u1 = cfg.inflow - L1.base_outflow + cfg.kappa * m[0] * L1.area / dts
    r12 = L1.eta * u1 + L1.base_outflow
    u2 = r12 - L2.base_outflow + cfg.kappa * m[1] * L2.area / dts
    r23 = L2.eta * u2 + L2.base_outflow
    u3 = r23 + cfg.kappa * m[2] * L3.area / dts
    x = np.array([L1.y_ref, L2.y_ref, L3.y_ref, r12, r23])
    return np.array([u1, u2, u3]), x


def initial_state(cfg: CaseConfig) -> np.ndarray:
    _, xs = steady_state(cfg)
    r12 = xs[3] if cfg.r12_0 is None else cfg.r12_0
    r23 = xs[4] if cfg.r23_0 is None else cfg.r23_0
    return np.array([l.h0 for l in cfg.lakes] + [r12, r23])


def build_problem(cfg: CaseConfig) -> SmpcProblem:
    tol = Tolerances(**cfg.quadrature)
    return SmpcProblem(
        system=build_system(cfg),
        N=cfg.horizon,
        y_ref=[l.y_ref for l in cfg.lakes],
        y_max=[l.y_max for l in cfg.lakes],
        y_min=[l.y_min for l in cfg.lakes],
        u_max=cfg.u_max,
        gamma=(cfg.gamma_flood, cfg.gamma_drought, cfg.gamma_release),
        feedback=cfg.feedback,
        tolerances=tol,
        solver=SolverOptions(tolerances=tol, **cfg.solver),
    )


def simulate(cfg: CaseConfig, seed: int | None = None, record_beta: bool = True) -> SimulationTrace:
    seed = cfg.seed if seed is None else seed
    prob = build_problem(cfg)
    return closed_loop_simulate(prob, initial_state(cfg), cfg.steps, seed=seed, record_beta=record_beta, dt=cfg.dt_hours)


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def trace_table(trace: SimulationTrace) -> np.ndarray:
    """Rows in :data:`DATA_COLUMNS` order."""
    s = trace.states
    return np.column_stack(
        [trace.outputs_time, s[:, 0:3], trace.inputs_time, trace.inputs, s[:, 3:5], trace.disturbances]
    )


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def run_case(cfg: CaseConfig, out_dir, seed: int | None = None) -> tuple[SimulationTrace, dict[str, Path]]:
    """Simulate the case and write ``lakes.dat`` and ``summary.json`` into ``out_dir``.

    The data file starts with ``#`` comment lines carrying the config hash and
    seed, then the column header and one row per step (9 significant digits).
    """
    seed = cfg.seed if seed is None else int(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace = simulate(cfg, seed)
    digest = cfg.sha256()
    lines = [f"# config_sha256 {digest}", f"# seed {seed}", " ".join(DATA_COLUMNS)]
    for row in trace_table(trace):
        lines.append(" ".join(_fmt(v) for v in row))
    data_path = out / DATA_FILE
    data_path.write_text("\n".join(lines) + "\n")

    steps = []
    for k in range(trace.steps):
        d = trace.diagnostics[k]
        steps.append(
            {
                "k": k,
                "cost": _jsonable(float(trace.costs[k])),
                "status": trace.statuses[k],
                "beta": {n: float(b) for n, b in zip(trace.beta_names, trace.beta[k])},
                "solver": {key: _jsonable(val) for key, val in d.items() if key != "status"},
            }
        )
    summary = {
        "config_sha256": digest,
        "seed": seed,
        "steps": trace.steps,
        "dt_hours": cfg.dt_hours,
        "inflow": cfg.inflow,
        "x0": [float(v) for v in trace.x0],
        "records": steps,
        "totals": {
            "cost": _jsonable(float(np.nansum(trace.costs))),
            "chance_evaluations": int(sum(d.get("chance_evaluations", 0) for d in trace.diagnostics)),
            "cf_batch_calls": int(sum(d.get("cf_batch_calls", 0) for d in trace.diagnostics)),
            "non_converged_steps": int(sum(s != "converged" for s in trace.statuses)),
        },
    }
    summary_path = out / SUMMARY_FILE
    summary_path.write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return trace, {"data": data_path, "summary": summary_path}


def read_data_file(path) -> tuple[dict[str, str], np.ndarray]:
    """Parse a ``lakes.dat`` file into ``(metadata, table)``."""
    meta = {}
    rows = []
    header = None
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition(" ")
            meta[key] = val
        elif header is None:
            header = tuple(line.split())
            if header != DATA_COLUMNS:
                raise ValueError(f"unexpected data header {header}")
        elif line.strip():
            rows.append([float(v) for v in line.split()])
    return meta, np.array(rows).reshape(-1, len(DATA_COLUMNS))


@dataclass
class RateEstimate:
    violations: int
    samples: int
    frequency: float
    ci_low: float
    ci_high: float
    limit: float
    flagged: bool


@dataclass
class MonteCarloReport:
    runs: int
    steps: int
    seeds: list[int]
    flood: list[RateEstimate]
    drought: list[RateEstimate]
    release: list[RateEstimate]
    flood_per_step: np.ndarray
    in_band_fraction: float
    warnings: list[str]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flood_per_step"] = self.flood_per_step.tolist()
        return d


def _rate(k: int, n: int, gamma: float) -> RateEstimate:
    ci = binomtest(k, n).proportion_ci(confidence_level=0.95, method="wilson")
    return RateEstimate(k, n, k / n, float(ci.low), float(ci.high), 1.0 - gamma, bool(ci.low > 1.0 - gamma))


def _one_run(args):
    cfg, seed = args
    tr = simulate(cfg, seed, record_beta=False)
    return tr.states[:, :3], tr.inputs


def validate_monte_carlo(cfg: CaseConfig, runs: int, workers: int = 1, first_seed: int | None = None) -> MonteCarloReport:
    """Closed-loop runs with seeds ``first_seed .. first_seed+runs-1`` and empirical violation rates.

    Rates are pooled over runs and steps per lake, with 95% Wilson intervals.
    A rate is flagged when its lower bound exceeds ``1 - gamma``.
    """
    if int(runs) < 1:
        raise ConfigError("runs must be >= 1")
    runs = int(runs)
    base = cfg.seed if first_seed is None else int(first_seed)
    seeds = [base + r for r in range(runs)]
    jobs = [(cfg, s) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_one_run, jobs))
    else:
        results = [_one_run(j) for j in jobs]
    levels = np.stack([r[0] for r in results])  # (runs, T, 3)
    inputs = np.stack([r[1] for r in results])
    ymax = np.array([l.y_max for l in cfg.lakes])
    ymin = np.array([l.y_min for l in cfg.lakes])
    over = levels > ymax
    under = levels < ymin
    bad_u = (inputs < 0.0) | (inputs > cfg.u_max)
    n = runs * cfg.steps
    flood = [_rate(int(over[..., j].sum()), n, cfg.gamma_flood) for j in range(3)]
    drought = [_rate(int(under[..., j].sum()), n, cfg.gamma_drought) for j in range(3)]
    release = [_rate(int(bad_u[..., j].sum()), n, cfg.gamma_release) for j in range(3)]
    in_band = float(np.mean(~over & ~under))
    notes = []
    widest = max(r.ci_high - r.ci_low for r in flood + drought + release)
    if widest > WIDE_INTERVAL:
        notes.append(f"wide confidence intervals (width up to {widest:.3f}); {runs} run(s) are too few for a firm verdict")
    for kind, rates in (("flood", flood), ("drought", drought), ("release", release)):
        for j, r in enumerate(rates, 1):
            if r.flagged:
                notes.append(f"{kind} rate of lake {j} ({r.frequency:.3f}) exceeds its nominal level {r.limit:.3f}")
    return MonteCarloReport(
        runs=runs,
        steps=cfg.steps,
        seeds=seeds,
        flood=flood,
        drought=drought,
        release=release,
        flood_per_step=over.mean(axis=0),
        in_band_fraction=in_band,
        warnings=notes,
    )
