"""Command-line front end.

Usage::

    cudvine {simulate,select,fit,forecast,backtest,experiment}
            [--config PATH] [--data PATH] [--out DIR] [--seed N] [--threads N]

Every output embeds the config hash and the seed; the wall-clock timestamp is
kept apart in ``metadata.json`` so that repeated runs give identical files.
Exit codes: 0 success, 1 user error (config or data), 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from . import _backend, bench
from . import crosscopula as cc
from .copulae import DEFAULT_POOL, BivariateCopulaSpec, Family
from .errors import ConfigError, ConvergenceError, DataError, DomainError
from .estimation import FitConfig, _jsonable, bootstrap_se, fit_cudvine, select_udvine_pits
from .forecast_scoring import (BACKTEST_COLUMNS, backtest, forecast_one_step, head_to_head,
                               summarize)
from .marginals import EmpiricalMarginal
from .model import CuDvineModel, TimeSeriesPanel, standard_normal_marginal
from .udvine import MAX_ORDER, UDvineSpec

COMMANDS = ("simulate", "select", "fit", "forecast", "backtest", "experiment")
EXIT_OK, EXIT_USER, EXIT_NUMERIC = 0, 1, 2


# ---------------------------------------------------------------------------
# Config schema
# ---------------------------------------------------------------------------

class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TreeConfig(_Strict):
    family: str
    params: list[float] = []

    @field_validator("family")
    @classmethod
    def _family(cls, v):
        return Family.parse(v).value


class FixedSeries(_Strict):
    trees: list[TreeConfig]


class CrossConfig(_Strict):
    kind: str = "GaussianFull"
    distances: Optional[str] = None
    range_bounds: Optional[tuple[float, float]] = None
    smoothness_bounds: Optional[tuple[float, float]] = None
    correlation: Optional[list[list[float]]] = None
    nu: Optional[float] = None
    range: Optional[float] = None
    smoothness: Optional[float] = None
    a: Optional[float] = None
    b: Optional[float] = None
    qbar: Optional[list[list[float]]] = None

    @field_validator("kind")
    @classmethod
    def _kind(cls, v):
        return cc.CrossKind.parse(v).value


class ModelConfig(_Strict):
    series: Union[Literal["auto"], list[Union[Literal["auto"], list[str], FixedSeries]]] = "auto"
    cross: CrossConfig = CrossConfig()
    report: Optional[str] = None

    @field_validator("series")
    @classmethod
    def _series(cls, v):
        if isinstance(v, list):
            for entry in v:
                if isinstance(entry, list):
                    for f in entry:
                        Family.parse(f)
        return v


class EstimationConfig(_Strict):
    pool: list[str] = [f.value for f in DEFAULT_POOL]
    max_order: int = Field(3, ge=1, le=MAX_ORDER)
    tol: float = Field(1e-8, gt=0.0, lt=1.0)
    bootstrap_replicates: int = Field(0, ge=0)
    bootstrap_length: Optional[int] = Field(None, ge=2)

    @field_validator("pool")
    @classmethod
    def _pool(cls, v):
        if not v:
            raise ValueError("the candidate pool is empty")
        return [Family.parse(f).value for f in v]


class ForecastConfig(_Strict):
    name: str = "CuDvine"
    m: int = Field(1000, ge=100)
    var_level: float = Field(0.95, gt=0.0, lt=1.0)
    quantiles: list[float] = [0.025, 0.05, 0.5, 0.95, 0.975]
    weights: Optional[dict[str, float]] = None
    observed: list[str] = []
    observed_values: dict[str, float] = {}
    test_start: Optional[int] = Field(None, ge=1)
    baseline: Optional[str] = None

    @field_validator("quantiles")
    @classmethod
    def _quantiles(cls, v):
        for q in v:
            if not 0.0 < q < 1.0:
                raise ValueError(f"quantile level {q} is outside (0, 1)")
        return v


class SimulateConfig(_Strict):
    n: int = Field(1000, ge=2)
    burn_in: int = Field(500, ge=0)
    design: Optional[Literal["mle", "gaussian_gumbel", "t_clayton", "gaussian_gaussian"]] = None


class ExperimentConfig(_Strict):
    name: Literal["selection", "mle", "var", "calibration"] = "selection"
    designs: list[Literal["gaussian_gumbel", "t_clayton", "gaussian_gaussian"]] = [
        "gaussian_gumbel", "t_clayton", "gaussian_gaussian"]
    processes: list[Literal["garch", "gjr"]] = ["garch", "gjr"]
    T: int = Field(2000, ge=50)
    T_test: int = Field(100, ge=1)
    replications: int = Field(100, ge=1)
    levels: list[float] = [0.1, 0.05]
    m: int = Field(1000, ge=100)


class RunConfig(_Strict):
    seed: int = Field(0, ge=0)
    model: ModelConfig = ModelConfig()
    estimation: EstimationConfig = EstimationConfig()
    forecast: ForecastConfig = ForecastConfig()
    simulate: SimulateConfig = SimulateConfig()
    experiment: ExperimentConfig = ExperimentConfig()


def _validation_message(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"config field {loc}: {e['msg']}")
    return "; ".join(lines)


def load_config(path, seed=None) -> tuple:
    """Validate a YAML config; returns ``(RunConfig, base directory)``.  ``seed`` overrides the file."""
    raw, base = {}, Path.cwd()
    if path is not None:
        p = Path(path)
        try:
            raw = yaml.safe_load(p.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: not valid YAML ({exc})") from None
        raw = {} if raw is None else raw
        if not isinstance(raw, dict):
            raise ConfigError(f"{p}: the top level must be a mapping")
        base = p.resolve().parent
    if seed is not None:
        raw = {**raw, "seed": seed}
    try:
        cfg = RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_validation_message(exc)) from None
    return cfg, base


def config_hash(cfg: RunConfig) -> str:
    text = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

def _data_lines(path):
    # yields (line number, fields) skipping blank and '#' comment lines
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, next(csv.reader([line]))


def _number(cell, where):
    if not cell.strip():
        raise DataError(f"{where}: missing value")
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"{where}: cannot parse {cell.strip()!r} as a number") from None
    if not math.isfinite(v):
        raise DataError(f"{where}: missing or non-finite value {cell.strip()!r}")
    return v


def ingest(path) -> TimeSeriesPanel:
    """Read a panel CSV: header row, first column the time label, one real column per series."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"data file {path} not found")
    rows = list(_data_lines(path))
    if not rows:
        raise DataError(f"{path}: empty file")
    head_line, header = rows[0]
    header = [h.strip() for h in header]
    if len(header) < 2:
        raise DataError(f"{path} line {head_line}: need a time column and at least one series column")
    if len(set(header[1:])) != len(header) - 1:
        raise DataError(f"{path} line {head_line}: duplicate series names in the header")
    index, values = [], []
    for lineno, fields in rows[1:]:
        if len(fields) != len(header):
            raise DataError(f"{path} line {lineno}: expected {len(header)} fields, got {len(fields)}")
        index.append(fields[0].strip())
        values.append([_number(c, f"{path} line {lineno}, column {header[j + 1]!r} "
                                  f"(row {len(index)}, col {j + 2})")
                       for j, c in enumerate(fields[1:])])
    if len(values) < 2:
        raise DataError(f"{path}: need at least 2 data rows, got {len(values)}")
    return TimeSeriesPanel(np.array(values), tuple(header[1:]), tuple(index))


def read_distances(path, labels) -> np.ndarray:
    """Square distance CSV, optionally with a header row naming the series."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"distance file {path} not found")
    rows = list(_data_lines(path))
    if rows:
        try:
            [float(c) for c in rows[0][1]]
        except ValueError:
            names = [c.strip() for c in rows[0][1]]
            if list(names) != list(labels):
                raise DataError(f"{path}: header {names} does not match the series {list(labels)}") from None
            rows = rows[1:]
    D = [[_number(c, f"{path} line {lineno}, col {j + 1}") for j, c in enumerate(fields)]
         for lineno, fields in rows]
    d = len(labels)
    if len(D) != d or any(len(r) != d for r in D):
        raise DataError(f"{path}: expected a {d} x {d} distance matrix")
    return np.array(D)


def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# Outputs
# ---------------------------------------------------------------------------

class _Run:
    """Per-invocation context: validated config, hashes and the output directory."""

    def __init__(self, args):
        self.args = args
        self.cfg, self.base = load_config(args.config, args.seed)
        self.seed = self.cfg.seed
        self.hash = config_hash(self.cfg)
        self.out = Path(args.out)
        self.threads = args.threads
        self.data_hash = None
        self.outputs = []

    def path(self, p):
        p = Path(p)
        return p if p.is_absolute() else self.base / p

    def stamp(self) -> dict:
        out = {"config_hash": self.hash, "seed": self.seed}
        if self.data_hash is not None:
            out["data_sha256"] = self.data_hash
        return out

    def write_json(self, name, obj):
        self.out.mkdir(parents=True, exist_ok=True)
        text = json.dumps(_jsonable({**self.stamp(), **obj}), sort_keys=True, indent=2)
        (self.out / name).write_text(text + "\n")
        self.outputs.append(name)

    def write_csv(self, name, rows, columns):
        self.out.mkdir(parents=True, exist_ok=True)
        with open(self.out / name, "w", newline="") as fh:
            for k, v in self.stamp().items():
                fh.write(f"# {k}: {v}\n")
            w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n",
                               extrasaction="ignore")
            w.writeheader()
            for r in rows:
                w.writerow({k: _cell(r.get(k)) for k in columns})
        self.outputs.append(name)

    def write_metadata(self, command):
        self.out.mkdir(parents=True, exist_ok=True)
        meta = {**self.stamp(), "command": command,
                "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
                "threads": self.threads, "backend": _backend.current(),
                "python": platform.python_version(), "numpy": np.__version__,
                "outputs": self.outputs}
        (self.out / "metadata.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")

    def panel(self) -> TimeSeriesPanel:
        if self.args.data is None:
            raise DataError(f"`{self.args.command}` needs --data")
        panel = ingest(self.args.data)
        self.data_hash = _file_hash(self.args.data)
        return panel


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v


def _column_index(panel, names, field):
    idx = []
    for name in names:
        if name not in panel.labels:
            raise ConfigError(f"config field {field} references unknown column {name!r}")
        idx.append(panel.labels.index(name))
    return idx


def _weights(run, panel):
    w = run.cfg.forecast.weights
    if w is None:
        return None
    _column_index(panel, list(w), "forecast.weights")
    return np.array([w.get(lab, 0.0) for lab in panel.labels])


# ---------------------------------------------------------------------------
# Model construction
# ---------------------------------------------------------------------------

def _templates(cfg, d):
    series = cfg.model.series
    if series == "auto":
        return None
    if len(series) != d:
        raise ConfigError(f"config field model.series has {len(series)} entries for {d} series")
    out = []
    for entry in series:
        if entry == "auto":
            out.append(None)
        elif isinstance(entry, FixedSeries):
            out.append([t.family for t in entry.trees])
        else:
            out.append(list(entry))
    return out


def _fit_config(run, panel) -> FitConfig:
    cfg = run.cfg
    cross = cfg.model.cross
    distances = None
    if cross.distances is not None:
        distances = read_distances(run.path(cross.distances), panel.labels)
    bounds = None
    if cross.range_bounds is not None or cross.smoothness_bounds is not None:
        if cross.range_bounds is None or cross.smoothness_bounds is None:
            raise ConfigError("config fields model.cross.range_bounds and smoothness_bounds go together")
        bounds = {"range": cross.range_bounds, "smoothness": cross.smoothness_bounds}
    return FitConfig(templates=_templates(cfg, panel.d), pool=tuple(cfg.estimation.pool),
                     max_order=cfg.estimation.max_order, cross_kind=cross.kind,
                     distances=distances, matern_bounds=bounds, threads=run.threads,
                     seed=run.seed, tol=cfg.estimation.tol)


def _fixed_model(run, d_hint=None) -> CuDvineModel:
    cfg = run.cfg
    series = cfg.model.series
    if series == "auto" or not all(isinstance(s, FixedSeries) for s in series):
        raise ConfigError("config field model.series must list fixed trees (family and params) "
                          "for every series to simulate without a design or report")
    specs = [UDvineSpec(tuple(BivariateCopulaSpec(t.family, tuple(t.params)) for t in s.trees))
             for s in series]
    d = len(specs)
    cross = None
    if d > 1:
        c = cfg.model.cross
        kind = cc.CrossKind.parse(c.kind)
        kw = {"nu": c.nu}
        if kind is cc.CrossKind.GAUSSIAN_MATERN:
            if c.distances is None:
                raise ConfigError("config field model.cross.distances is required for GaussianMatern")
            labels = tuple(f"y{i + 1}" for i in range(d))
            kw.update(distances=read_distances(run.path(c.distances), labels),
                      matern_range=c.range, matern_smoothness=c.smoothness)
        elif kind is cc.CrossKind.TIME_VARYING_T:
            kw.update(dcc_a=c.a, dcc_b=c.b, qbar=None if c.qbar is None else np.array(c.qbar))
        else:
            if c.correlation is None:
                raise ConfigError("config field model.cross.correlation is required to simulate")
            kw["correlation"] = np.array(c.correlation)
        cross = cc.CrossCopulaSpec(kind, **kw)
    return CuDvineModel.from_specs(specs, cross)


def _report_model(run, marginals=None) -> CuDvineModel:
    path = run.path(run.cfg.model.report)
    try:
        report = json.loads(path.read_text())
    except FileNotFoundError:
        raise DataError(f"report file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"report file {path} is not valid JSON ({exc})") from None
    try:
        return CuDvineModel.from_dict(report, marginals)
    except (KeyError, TypeError) as exc:
        raise DataError(f"report file {path} lacks the model entry {exc}") from None


def _model_for(run, panel) -> CuDvineModel:
    """The configured model with marginals fitted on ``panel`` (loaded report or fresh fit)."""
    if run.cfg.model.report is not None:
        margins = [EmpiricalMarginal.fit(panel.values[:, i]) for i in range(panel.d)]
        model = _report_model(run, margins)
        if model.d != panel.d:
            raise DataError(f"report has {model.d} series, data has {panel.d}")
        return CuDvineModel(model.margins, model.cross, panel.labels)
    return fit_cudvine(panel, _fit_config(run, panel)).model


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_simulate(run):
    sim = run.cfg.simulate
    if sim.design == "mle":
        model = bench.mle_design()
    elif sim.design is not None:
        model = CuDvineModel.from_specs([bench.selection_designs()[sim.design]])
    elif run.cfg.model.report is not None:
        margins = None
        if run.args.data is not None:
            panel = run.panel()
            margins = [EmpiricalMarginal.fit(panel.values[:, i]) for i in range(panel.d)]
        else:
            d = len(json.loads(run.path(run.cfg.model.report).read_text())["series"])
            margins = [standard_normal_marginal()] * d
        model = _report_model(run, margins)
    else:
        model = _fixed_model(run)
    panel = model.simulate(sim.n, seed=run.seed, burn_in=sim.burn_in)
    rows = [{"time": t, **dict(zip(panel.labels, row.tolist()))}
            for t, row in zip(panel.index, panel.values)]
    run.write_csv("simulated.csv", rows, ("time",) + panel.labels)
    run.write_json("model.json", {"model": model.to_dict()})


def cmd_select(run):
    panel = run.panel()
    est = run.cfg.estimation
    out = []
    for i, lab in enumerate(panel.labels):
        u = EmpiricalMarginal.fit(panel.values[:, i]).pit(panel.values[:, i])
        spec, trail = select_udvine_pits(u, est.pool, est.max_order)
        out.append({"label": lab, **spec.to_dict(), "selection": [s.to_dict() for s in trail]})
    run.write_json("selection.json", {"series": out})


def cmd_fit(run):
    panel = run.panel()
    report = fit_cudvine(panel, _fit_config(run, panel))
    report.seed, report.config_hash = run.seed, run.hash
    report.verify(panel)
    est = run.cfg.estimation
    if est.bootstrap_replicates:
        T = est.bootstrap_length or panel.T
        report.bootstrap_se = bootstrap_se(report.model, est.bootstrap_replicates, T, seed=run.seed,
                                           threads=run.threads)
    run.write_json("report.json", report.to_dict())


def cmd_forecast(run):
    panel = run.panel()
    fc = run.cfg.forecast
    model = _model_for(run, panel)
    weights = _weights(run, panel)
    idx = _column_index(panel, list(fc.observed_values), "forecast.observed_values")
    observed = {i: fc.observed_values[panel.labels[i]] for i in idx}
    ens = forecast_one_step(model, panel.values, fc.m, seed=run.seed, observed=observed)
    cols = [(lab, ens.draws[:, i]) for i, lab in enumerate(panel.labels)]
    if weights is not None:
        cols.append(("weighted", ens.draws @ weights / weights.sum()))
    qnames = [f"q{q:g}" for q in fc.quantiles]
    rows = []
    for lab, x in cols:
        r = {"series": lab, "mean": float(np.mean(x)), "sd": float(np.std(x, ddof=1)),
             f"var_{fc.var_level:g}": float(np.quantile(x, fc.var_level))}
        r.update({n: float(np.quantile(x, q)) for n, q in zip(qnames, fc.quantiles)})
        rows.append(r)
    run.write_csv("forecast.csv", rows, ["series", "mean", "sd", f"var_{fc.var_level:g}"] + qnames)


def _read_backtest(path):
    rows = []
    lines = list(_data_lines(path))
    if not lines:
        raise DataError(f"{path}: empty file")
    header = lines[0][1]
    for lineno, fields in lines[1:]:
        if len(fields) != len(header):
            raise DataError(f"{path} line {lineno}: expected {len(header)} fields, got {len(fields)}")
        r = dict(zip(header, fields))
        if "crps" not in r:
            raise DataError(f"{path}: no crps column")
        r["crps"] = _number(r["crps"], f"{path} line {lineno}, column 'crps'")
        rows.append(r)
    return rows


def cmd_backtest(run):
    panel = run.panel()
    fc = run.cfg.forecast
    start = fc.test_start if fc.test_start is not None else int(0.8 * panel.T)
    if not 1 < start < panel.T:
        raise ConfigError(f"config field forecast.test_start={start} must lie in (1, {panel.T})")
    weights = _weights(run, panel)
    obs_idx = _column_index(panel, fc.observed, "forecast.observed")
    model = _model_for(run, panel.slice(0, start))
    rows = backtest(model, panel, (start, panel.T), m=fc.m, seed=run.seed, name=fc.name,
                    weights=weights, observed_idx=obs_idx, var_level=fc.var_level)
    run.write_csv("backtest.csv", rows, BACKTEST_COLUMNS)
    summary = summarize(rows, var_target=1.0 - fc.var_level)
    run.write_csv("backtest_summary.csv", summary, list(summary[0]))
    if fc.baseline is not None:
        base = _read_backtest(run.path(fc.baseline))
        pct = head_to_head(rows, base)
        run.write_csv("head_to_head.csv", [{"series": s, "percent_better": v} for s, v in pct.items()],
                      ("series", "percent_better"))


def cmd_experiment(run):
    ex, est = run.cfg.experiment, run.cfg.estimation
    if ex.name == "selection":
        designs = bench.selection_designs()
        rows = []
        for name in ex.designs:
            res = bench.experiment_selection(designs[name], ex.T, ex.replications, est.pool,
                                             run.seed, est.max_order, run.threads)
            rows.append({"design": name, **{k: v for k, v in res.items() if k != "runs"}})
        cols = ["design", "T", "replications", "seed", "order_rate"]
        cols += sorted({k for r in rows for k in r if k.startswith("tree")})
        run.write_csv("experiment_selection.csv", rows, cols)
    elif ex.name == "mle":
        res = bench.experiment_mle(bench.mle_design(), ex.T, ex.replications, run.seed, run.threads)
        run.write_csv("experiment_mle.csv", res["table"], ("parameter", "truth", "mean", "sd"))
    elif ex.name == "var":
        procs = {"garch": bench.GARCH, "gjr": bench.GJR}
        rows = []
        for name in ex.processes:
            res = bench.experiment_var(procs[name], ex.T, ex.T_test, tuple(ex.levels), ex.replications,
                                       run.seed, ex.m, est.pool, est.max_order, run.threads)
            for q, s in res["levels"].items():
                rows.append({"process": name, "T1": ex.T, "T2": ex.T_test, **s})
        run.write_csv("experiment_var.csv", rows,
                      ("process", "T1", "T2", "q0", "replications", "mean_rate", "z_p"))
    else:
        res = bench.experiment_calibration(bench.mle_design(), ex.T, ex.T_test, run.seed, ex.m)
        run.write_csv("experiment_calibration.csv", res["summary"], list(res["summary"][0]))


_HANDLERS = {"simulate": cmd_simulate, "select": cmd_select, "fit": cmd_fit,
             "forecast": cmd_forecast, "backtest": cmd_backtest, "experiment": cmd_experiment}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cudvine", description="CuDvine time-series copula models.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="YAML run configuration")
    parser.add_argument("--data", help="panel CSV (time label column, then one column per series)")
    parser.add_argument("--out", default=".", help="output directory (default: current directory)")
    parser.add_argument("--seed", type=int, help="random seed; overrides the config")
    parser.add_argument("--threads", type=int, default=1, help="worker processes, 0 = all cores")
    return parser


def run(argv=None) -> int:
    """Run one command; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USER
    if args.threads < 0:
        print("error: --threads must be nonnegative", file=sys.stderr)
        return EXIT_USER
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be nonnegative", file=sys.stderr)
        return EXIT_USER
    try:
        ctx = _Run(args)
        with np.errstate(all="ignore"):
            _HANDLERS[args.command](ctx)
        ctx.write_metadata(args.command)
    except (ConvergenceError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DataError, DomainError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
