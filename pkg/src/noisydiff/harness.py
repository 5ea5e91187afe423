"""Monte Carlo study runner, observation ingestion and report files.

Config files are TOML::

    [model]
    x0 = [1.0, 1.0]
    alpha = [1.0, 0.1, 1.0]                 # true vech(A)
    beta = [-1.0, -0.1, -0.1, -1.0, 1.0, 1.0]
    box_alpha = [[0.1, 500], [-0.5, 0.5], [0.1, 500]]
    box_beta = [[-100, 100], ...]           # optional, defaults per model

    [scheme]
    n = 100000
    h = "n^-0.7"                            # number or "n^-gamma"
    tau = 2.0
    # p_override = 56

    [noise]
    distribution = "gaussian"

    [[scenario]]
    name = "zero"
    lambda_scale = 0.0                      # Lambda = scale * I, or give Lambda = [[..]]

    [run]
    replications = 200
    seed = 20190321
    methods = ["lmm", "lga"]
    noise_test = true
    n_starts = 5
"""

from __future__ import annotations

import csv
import json
import logging
import math
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .estimate import adaptive_estimate, lga_estimate
from .model import (OUSpec, ParameterBox, c_matrix, default_ou_boxes, ou_model, vech_indices,
                    BENCH_OU_ALPHA, BENCH_OU_BETA, BENCH_OU_X0)
from .noisetest import critical_value, noise_test
from .optimize import OptimizerOptions
from .sampling import derive_scheme
from .simulate import NoiseSpec, PathConfig, add_noise, simulate_latent

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

LEVELS = (0.05, 0.01, 0.001)
METHOD_ORDER = ("lmm", "lga")
REPORT_COLUMNS = ("scenario", "method", "parameter", "true_value", "mean", "sd", "failures", "n_ok")
REJECTION_COLUMNS = ("scenario", "level", "rate", "n_ok", "failures")


@dataclass(frozen=True)
class Scenario:
    name: str
    Lambda: np.ndarray


@dataclass(frozen=True)
class ExperimentConfig:
    alpha: np.ndarray
    beta: np.ndarray
    x0: np.ndarray
    box_alpha: ParameterBox
    box_beta: ParameterBox
    scenarios: tuple
    n: int
    h: float
    tau: float = 2.0
    p_override: Optional[int] = None
    noise_distribution: str = "gaussian"
    replications: int = 200
    seed: int = 0
    methods: tuple = ("lmm",)
    run_noise_test: bool = True
    n_starts: int = 5
    output: Optional[str] = None

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        for m in self.methods:
            if m not in METHOD_ORDER:
                raise ValueError(f"unknown method {m!r}")
        for sc in self.scenarios:
            if np.linalg.eigvalsh(sc.Lambda).min() < -1e-12:
                raise ValueError(f"scenario {sc.name!r}: Lambda is not positive semi-definite")

    @property
    def spec(self) -> OUSpec:
        return OUSpec.from_params(self.alpha, self.beta, self.x0)

    @property
    def scheme(self):
        return derive_scheme(self.n, self.h, self.tau, self.p_override)


def parse_step(h, n: int) -> float:
    """A numeric step or the rule ``"n^-gamma"``."""
    if isinstance(h, (int, float)):
        return float(h)
    m = re.fullmatch(r"\s*n\s*\^\s*(-?\s*[0-9.eE+-]+)\s*", str(h))
    if m is None:
        return float(h)
    return float(n) ** float(m.group(1).replace(" ", ""))


def _scenario_from_table(t: dict, d: int) -> Scenario:
    if "Lambda" in t:
        L = np.asarray(t["Lambda"], dtype=float)
    else:
        L = float(t.get("lambda_scale", 0.0)) * np.eye(d)
    name = t.get("name") or f"lambda_{L[0, 0]:g}"
    return Scenario(name=str(name), Lambda=L)


def config_from_dict(raw: dict) -> ExperimentConfig:
    model = raw.get("model", {})
    x0 = np.asarray(model.get("x0", BENCH_OU_X0), dtype=float)
    d = x0.size
    alpha = np.asarray(model.get("alpha", BENCH_OU_ALPHA), dtype=float)
    beta = np.asarray(model.get("beta", BENCH_OU_BETA), dtype=float)
    ba, bb = default_ou_boxes(d)
    if "box_alpha" in model:
        ba = ParameterBox.from_pairs(model["box_alpha"])
    if "box_beta" in model:
        bb = ParameterBox.from_pairs(model["box_beta"])
    scheme = raw.get("scheme", {})
    n = int(scheme.get("n", 100_000))
    run = raw.get("run", {})
    scenarios = tuple(_scenario_from_table(t, d) for t in raw.get("scenario", []))
    return ExperimentConfig(
        alpha=alpha, beta=beta, x0=x0, box_alpha=ba, box_beta=bb, scenarios=scenarios,
        n=n, h=parse_step(scheme.get("h", "n^-0.7"), n), tau=float(scheme.get("tau", 2.0)),
        p_override=scheme.get("p_override"),
        noise_distribution=raw.get("noise", {}).get("distribution", "gaussian"),
        replications=int(run.get("replications", 200)), seed=int(run.get("seed", 0)),
        methods=tuple(run.get("methods", ["lmm"])), run_noise_test=bool(run.get("noise_test", True)),
        n_starts=int(run.get("n_starts", 5)), output=run.get("output"),
    )


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        return config_from_dict(tomllib.load(fh))


def full_scale(cfg: ExperimentConfig) -> ExperimentConfig:
    """The n = 10^6, 1000-replication design of the original study."""
    n = 1_000_000
    return replace(cfg, n=n, h=n ** -0.7, replications=1000, p_override=None)


# ---------------------------------------------------------------------------
# replications

def parameter_names(method: str, d: int, m1: int, m2: int) -> list[str]:
    names = []
    if method == "lmm":
        rows, cols = vech_indices(d)
        names += [f"Lambda{i + 1}{j + 1}" for i, j in zip(rows, cols)]
    names += [f"alpha{i + 1}" for i in range(m1)]
    names += [f"beta{i + 1}" for i in range(m2)]
    return names


def true_values(cfg: ExperimentConfig, scenario: Scenario, method: str) -> np.ndarray:
    parts = []
    if method == "lmm":
        rows, cols = vech_indices(scenario.Lambda.shape[0])
        parts.append(scenario.Lambda[rows, cols])
    parts += [cfg.alpha, cfg.beta]
    return np.concatenate(parts)


def replication_seeds(base: int, r: int) -> tuple[np.random.SeedSequence, np.random.SeedSequence]:
    """Independent Wiener and noise streams for replication ``r``."""
    wiener, noise = np.random.SeedSequence(base, spawn_key=(r,)).spawn(2)
    return wiener, noise


def run_replication(cfg: ExperimentConfig, r: int) -> dict:
    """All scenarios for one replication; each scenario shares the latent path."""
    spec = cfg.spec
    model = ou_model(spec=spec)
    scheme = cfg.scheme
    opts = OptimizerOptions(n_starts=cfg.n_starts, seed=r)
    s_wiener, s_noise = replication_seeds(cfg.seed, r)
    X = simulate_latent(model, cfg.beta, cfg.alpha, PathConfig(cfg.n, cfg.h, seed=0),
                        x0=cfg.x0, rng=np.random.default_rng(s_wiener))
    mean_c = c_matrix(model, X, cfg.alpha).mean(axis=0)
    out = {"r": r, "scenarios": {}}
    for sc in cfg.scenarios:
        Y = add_noise(X, NoiseSpec(sc.Lambda, cfg.noise_distribution), seed=np.random.default_rng(s_noise))
        entry = {"estimates": {}, "errors": {}, "z": None, "mean_c": mean_c.tolist()}
        for method in METHOD_ORDER:
            if method not in cfg.methods:
                continue
            try:
                if method == "lmm":
                    res = adaptive_estimate(Y, scheme, model, cfg.box_alpha, cfg.box_beta, opts)
                    vec = np.concatenate([res.theta_eps_hat, res.alpha_hat, res.beta_hat])
                else:
                    res = lga_estimate(Y, cfg.h, model, cfg.box_alpha, cfg.box_beta, opts)
                    vec = np.concatenate([res.alpha_hat, res.beta_hat])
                if not np.all(np.isfinite(vec)):
                    raise FloatingPointError("non-finite estimate")
                entry["estimates"][method] = vec
            except Exception as exc:  # one failed replication must not end the study
                log.warning("replication %d, scenario %s, %s failed: %s", r, sc.name, method, exc)
                entry["errors"][method] = f"{type(exc).__name__}: {exc}"
        if cfg.run_noise_test:
            try:
                entry["z"] = noise_test(Y, scheme).z
            except Exception as exc:
                log.warning("replication %d, scenario %s, noise test failed: %s", r, sc.name, exc)
                entry["errors"]["test"] = f"{type(exc).__name__}: {exc}"
        out["scenarios"][sc.name] = entry
    return out


# ---------------------------------------------------------------------------
# aggregation

@dataclass
class ExperimentReport:
    rows: list = field(default_factory=list)
    rejection: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    estimates: dict = field(default_factory=dict)
    z_values: dict = field(default_factory=dict)
    mean_c: dict = field(default_factory=dict)

    @property
    def total_failures(self) -> int:
        return int(self.metadata.get("failed_replications", 0))

    def row(self, scenario: str, method: str, parameter: str) -> dict:
        for r in self.rows:
            if (r["scenario"], r["method"], r["parameter"]) == (scenario, method, parameter):
                return r
        raise KeyError((scenario, method, parameter))

    def rejection_rate(self, scenario: str, level: float) -> float:
        for r in self.rejection:
            if r["scenario"] == scenario and math.isclose(r["level"], level):
                return r["rate"]
        raise KeyError((scenario, level))


def mean_sd(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column means and sample SDs (divisor R-1; zero for a single replication)."""
    values = np.asarray(values, dtype=float)
    mean = values.mean(axis=0)
    if values.shape[0] < 2:
        return mean, np.zeros_like(mean)
    return mean, values.std(axis=0, ddof=1)


def aggregate(cfg: ExperimentConfig, outcomes: list[dict]) -> ExperimentReport:
    outcomes = sorted(outcomes, key=lambda o: o["r"])
    rep = ExperimentReport()
    d = cfg.x0.size
    failed_reps = set()
    for sc in cfg.scenarios:
        for method in METHOD_ORDER:
            if method not in cfg.methods:
                continue
            ok = [o["scenarios"][sc.name]["estimates"].get(method) for o in outcomes]
            failures = sum(v is None for v in ok)
            failed_reps.update(o["r"] for o, v in zip(outcomes, ok) if v is None)
            good = np.array([v for v in ok if v is not None])
            names = parameter_names(method, d, cfg.alpha.size, cfg.beta.size)
            truth = true_values(cfg, sc, method)
            rep.estimates[(sc.name, method)] = good.reshape(-1, len(names))
            if good.size:
                mean, sd = mean_sd(good)
            else:
                mean = sd = np.full(len(names), np.nan)
            for i, name in enumerate(names):
                rep.rows.append({"scenario": sc.name, "method": method, "parameter": name,
                                 "true_value": float(truth[i]), "mean": float(mean[i]), "sd": float(sd[i]),
                                 "failures": failures, "n_ok": int(good.shape[0])})
        rep.mean_c[sc.name] = np.array([o["scenarios"][sc.name]["mean_c"] for o in outcomes])
        if cfg.run_noise_test:
            zs = [o["scenarios"][sc.name]["z"] for o in outcomes]
            failed_reps.update(o["r"] for o, z in zip(outcomes, zs) if z is None)
            z = np.array([v for v in zs if v is not None], dtype=float)
            rep.z_values[sc.name] = z
            for level in LEVELS:
                rate = float(np.mean(z >= critical_value(level))) if z.size else float("nan")
                rep.rejection.append({"scenario": sc.name, "level": level, "rate": rate,
                                      "n_ok": int(z.size), "failures": len(zs) - int(z.size)})
    rep.metadata = {"replications": cfg.replications, "seed": cfg.seed, "n": cfg.n, "h": cfg.h,
                    "tau": cfg.tau, "failed_replications": len(failed_reps)}
    return rep


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    """Run every replication (optionally in worker processes) and aggregate."""
    t0 = time.perf_counter()
    reps = range(cfg.replications)
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run_replication, [cfg] * cfg.replications, reps, chunksize=4))
    else:
        outcomes = [run_replication(cfg, r) for r in reps]
    report = aggregate(cfg, outcomes)
    s = cfg.scheme
    report.metadata.update({"p": s.p, "k": s.k, "delta": s.delta, "threads": threads,
                            "wall_time_s": time.perf_counter() - t0})
    return report


# ---------------------------------------------------------------------------
# files

def write_report(report: ExperimentReport, path, fmt: str = "csv") -> list[Path]:
    """Write the estimate table; CSV puts rejection rates in ``<stem>_rejection.csv``."""
    path = Path(path)
    if fmt == "json":
        payload = {"rows": report.rows, "rejection": report.rejection, "metadata": report.metadata}
        path.write_text(json.dumps(payload, indent=2, default=float))
        return [path]
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}")
    _write_csv(path, REPORT_COLUMNS, report.rows)
    rej = path.with_name(path.stem + "_rejection.csv")
    _write_csv(rej, REJECTION_COLUMNS, report.rejection)
    return [path, rej]


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def _write_csv(path: Path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


_INT_COLUMNS = {"failures", "n_ok"}
_STR_COLUMNS = {"scenario", "method", "parameter"}


def _coerce(col, v):
    if col in _STR_COLUMNS:
        return v
    if col in _INT_COLUMNS:
        return int(v)
    return float(v)


def read_report(path) -> ExperimentReport:
    path = Path(path)
    if path.suffix == ".json":
        payload = json.loads(path.read_text())
        return ExperimentReport(rows=payload["rows"], rejection=payload["rejection"],
                                metadata=payload.get("metadata", {}))
    rep = ExperimentReport()
    with open(path, newline="") as fh:
        rep.rows = [{k: _coerce(k, v) for k, v in r.items()} for r in csv.DictReader(fh)]
    rej = path.with_name(path.stem + "_rejection.csv")
    if rej.exists():
        with open(rej, newline="") as fh:
            rep.rejection = [{k: _coerce(k, v) for k, v in r.items()} for r in csv.DictReader(fh)]
    return rep


class ObservationFormatError(ValueError):
    pass


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_observations(path, h: Optional[float] = None) -> tuple[np.ndarray, Optional[float]]:
    """Observations from CSV with header ``t,y1,...,yd`` or bare numeric columns.

    With a ``t`` column the step is the median spacing, and the rows must be
    equidistant to 1e-6 relative. Otherwise ``h`` is passed through.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ObservationFormatError(f"{path}: no data")
    header = None
    if not all(_is_number(c) for c in rows[0]):
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
    width = len(header) if header else len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise ObservationFormatError(f"{path}: row {i + 1} has {len(r)} fields, expected {width}")
    try:
        data = np.array([[float(c) for c in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise ObservationFormatError(f"{path}: non-numeric cell ({exc})") from None
    if data.shape[0] < 2:
        raise ObservationFormatError(f"{path}: need at least two observations")
    if header and header[0].lower() == "t":
        t, data = data[:, 0], data[:, 1:]
        dt = np.diff(t)
        step = float(np.median(dt))
        if not step > 0:
            raise ObservationFormatError(f"{path}: timestamps are not increasing")
        if np.max(np.abs(dt - step)) > 1e-6 * step:
            raise ObservationFormatError(f"{path}: timestamps are not equally spaced")
        if h is not None and not math.isclose(h, step, rel_tol=1e-6):
            log.warning("--h %g overrides step %g inferred from timestamps", h, step)
            step = h
        h = step
    if data.shape[1] < 1:
        raise ObservationFormatError(f"{path}: no observation columns")
    return data, h


def write_observations(path_or_fh, Y: np.ndarray, h: float) -> None:
    """CSV with header ``t,y1,...,yd`` and 17 significant digits."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    t = np.arange(Y.shape[0]) * h
    header = ",".join(["t"] + [f"y{i + 1}" for i in range(Y.shape[1])])
    np.savetxt(path_or_fh, np.column_stack([t, Y]), delimiter=",", header=header,
               comments="", fmt="%.17g")
