"""Scenario-suite evaluation harness and report files.

Runs the selected strategies over a mismatched-scenario suite, scores every
returned solution against the exact circuit oracle and the hidden true load
reflection, and writes machine-readable reports: headline aggregates
(report.json), per-scenario rows, and ECDF tables.  Wall-clock times are
measured but kept in a separate timings file, which is the only
non-deterministic output of a seeded run.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .circuit import CircuitTopology, simulate_states
from .data import Scenario
from .errors import (
    ModelPairingError,
    RfMatchError,
    SingularNetworkError,
    SingularTopologyError,
    UnrecoverableLoadError,
)
from .matchers import (
    STRATEGY_ADAM,
    STRATEGY_GRID,
    STRATEGY_IDEAL,
    STRATEGY_IMS,
    STRATEGY_SAPSO,
    AdamMatchConfig,
    Bounds,
    MatchResult,
    ModelSurrogate,
    OracleSurrogate,
    SapsoConfig,
    adadam_match,
    grid_search_match,
    ideal_analytic_match,
    ims_match,
    psi_values,
    recover_load_reflection,
    sapso_match,
)
from .nn import MlpModel

REPORT_SCHEMA_VERSION = 1
DEFAULT_COMPLIANCE_THRESHOLD = 0.2
ALL_STRATEGIES = (STRATEGY_SAPSO, STRATEGY_ADAM, STRATEGY_IMS, STRATEGY_GRID, STRATEGY_IDEAL)
PER_SCENARIO_COLUMNS = (
    "scenario_id", "strategy", "status", "cp_f", "cs_f", "predicted_gamma",
    "true_gamma", "true_mean", "true_median", "true_sd", "iterations",
    "evaluations", "infeasible",
)


@dataclass
class RunSettings:
    strategies: tuple[str, ...] = (STRATEGY_SAPSO, STRATEGY_ADAM, STRATEGY_IMS)
    repeats: int = 1  # independent seeded repeats for the stochastic strategy
    base_seed: int = 42
    threshold: float = DEFAULT_COMPLIANCE_THRESHOLD
    grid_step: float = 0.05e-12
    sapso: SapsoConfig = field(default_factory=SapsoConfig)
    adam: AdamMatchConfig = field(default_factory=AdamMatchConfig)
    workers: int = 1

    def __post_init__(self):
        unknown = set(self.strategies) - set(ALL_STRATEGIES)
        if unknown:
            raise ValueError(f"unknown strategies: {sorted(unknown)}")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")


def true_reflection(topology: CircuitTopology, f: float, cp: float, cs: float, gl: complex) -> float:
    """|gamma_in| of the exact circuit at a solution, against the true load."""
    s, valid = simulate_states(topology, f, cp, cs)
    if not np.all(valid):
        raise SingularTopologyError("oracle singular at the returned solution")
    val = float(psi_values(np.asarray(s).reshape(4), gl))
    if not math.isfinite(val):
        raise SingularTopologyError("true reflection undefined at the returned solution")
    return val


def _row(scenario_id: int, strategy: str, status: str = "ok", **kw) -> dict:
    row = {
        "scenario_id": scenario_id,
        "strategy": strategy,
        "status": status,
        "cp_f": math.nan,
        "cs_f": math.nan,
        "predicted_gamma": math.nan,
        "true_gamma": math.nan,
        "true_mean": math.nan,
        "true_median": math.nan,
        "true_sd": math.nan,
        "iterations": 0,
        "evaluations": 0.0,
        "infeasible": False,
        "wall_time": 0.0,
    }
    row.update(kw)
    return row


def _scored_row(scenario: Scenario, topology: CircuitTopology, res: MatchResult,
                evaluations: float) -> dict:
    try:
        true_val = true_reflection(topology, scenario.f, res.cp, res.cs, scenario.gl)
    except SingularTopologyError:
        return _row(scenario.id, res.strategy, status="scoring-failed",
                    cp_f=res.cp, cs_f=res.cs, predicted_gamma=res.predicted_gamma,
                    iterations=res.iterations, evaluations=evaluations,
                    infeasible=res.infeasible, wall_time=res.wall_time)
    return _row(
        scenario.id, res.strategy,
        cp_f=res.cp, cs_f=res.cs,
        predicted_gamma=res.predicted_gamma,
        true_gamma=true_val, true_mean=true_val, true_median=true_val, true_sd=0.0,
        iterations=res.iterations, evaluations=evaluations,
        infeasible=res.infeasible, wall_time=res.wall_time,
    )


def evaluate_scenario(
    scenario: Scenario,
    topology: CircuitTopology,
    surrogate,
    ims_model: MlpModel | None,
    settings: RunSettings,
) -> list[dict]:
    """All requested strategy rows for one scenario.

    The load reflection is recovered once through the surrogate; that single
    counted inference is included in every strategy's reported evaluation
    total.  Partial failures become status rows; the run continues.
    """
    bounds = Bounds.from_topology(topology)
    try:
        gl_hat = recover_load_reflection(
            surrogate, scenario.f, scenario.cp_now, scenario.cs_now, scenario.gin
        )
    except (UnrecoverableLoadError, SingularNetworkError, SingularTopologyError):
        return [_row(scenario.id, s, status="recovery-failed") for s in settings.strategies]

    rows = []
    for strategy in settings.strategies:
        try:
            if strategy == STRATEGY_SAPSO:
                rows.append(_sapso_rows(scenario, topology, surrogate, gl_hat, bounds, settings))
            elif strategy == STRATEGY_ADAM:
                res = adadam_match(surrogate, scenario.f, gl_hat, bounds, settings.adam)
                rows.append(_scored_row(scenario, topology, res, res.evaluations + 1))
            elif strategy == STRATEGY_GRID:
                res = grid_search_match(surrogate, scenario.f, gl_hat, settings.grid_step, bounds)
                rows.append(_scored_row(scenario, topology, res, res.evaluations + 1))
            elif strategy == STRATEGY_IMS:
                if ims_model is None:
                    raise ModelPairingError("no inverse solver model supplied")
                res = ims_match(surrogate, ims_model, scenario.f, gl_hat, bounds)
                rows.append(_scored_row(scenario, topology, res, res.evaluations))
            elif strategy == STRATEGY_IDEAL:
                res = ideal_analytic_match(
                    gl_hat, scenario.f, bounds, current=(scenario.cp_now, scenario.cs_now)
                )
                rows.append(_scored_row(scenario, topology, res, res.evaluations + 1))
        except ModelPairingError:
            rows.append(_row(scenario.id, strategy, status="pairing-failed"))
        except (RfMatchError, RuntimeError):
            rows.append(_row(scenario.id, strategy, status="strategy-failed"))
    return rows


def _sapso_rows(scenario, topology, surrogate, gl_hat, bounds, settings: RunSettings) -> dict:
    """Repeat-aggregated row for the stochastic strategy; the headline value
    is the mean tuned magnitude over repeats, first repeat shown as the
    representative solution."""
    trues, evals, results = [], [], []
    for rep in range(settings.repeats):
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([settings.base_seed, scenario.id, rep]))
        )
        res = sapso_match(surrogate, scenario.f, gl_hat, bounds, settings.sapso, rng)
        results.append(res)
        evals.append(res.evaluations + 1)
        trues.append(true_reflection(topology, scenario.f, res.cp, res.cs, scenario.gl))
    first = results[0]
    trues_arr = np.array(trues)
    return _row(
        scenario.id, STRATEGY_SAPSO,
        cp_f=first.cp, cs_f=first.cs,
        predicted_gamma=first.predicted_gamma,
        true_gamma=float(trues_arr[0]),
        true_mean=float(trues_arr.mean()),
        true_median=float(np.median(trues_arr)),
        true_sd=float(trues_arr.std()),
        iterations=first.iterations,
        evaluations=float(np.mean(evals)),
        wall_time=float(sum(r.wall_time for r in results)),
    )


# --- multiprocessing entry points ------------------------------------------------

_WORKER_CTX: dict = {}


def _worker_init(topology, recbm_model, ims_model, settings):
    _WORKER_CTX["topology"] = topology
    _WORKER_CTX["surrogate"] = (
        OracleSurrogate(topology) if recbm_model is None else ModelSurrogate(recbm_model)
    )
    _WORKER_CTX["ims_model"] = ims_model
    _WORKER_CTX["settings"] = settings


def _worker_run(scenario: Scenario) -> list[dict]:
    return evaluate_scenario(
        scenario,
        _WORKER_CTX["topology"],
        _WORKER_CTX["surrogate"],
        _WORKER_CTX["ims_model"],
        _WORKER_CTX["settings"],
    )


def run_scenarios(
    scenarios: list[Scenario],
    topology: CircuitTopology,
    settings: RunSettings,
    recbm_model: MlpModel | None = None,
    ims_model: MlpModel | None = None,
) -> list[dict]:
    """Evaluate every scenario with every selected strategy.

    `recbm_model=None` runs with the exact oracle as the surrogate.  Results
    are sorted by (scenario, strategy) and independent of the worker count
    because every stochastic component is seeded per (base_seed, scenario,
    repeat).
    """
    if settings.workers > 1:
        import multiprocessing as mp

        with mp.get_context("spawn").Pool(
            processes=settings.workers,
            initializer=_worker_init,
            initargs=(topology, recbm_model, ims_model, settings),
        ) as pool:
            nested = pool.map(_worker_run, scenarios, chunksize=8)
    else:
        _worker_init(topology, recbm_model, ims_model, settings)
        nested = [_worker_run(sc) for sc in scenarios]
    rows = [row for group in nested for row in group]
    order = {name: i for i, name in enumerate(settings.strategies)}
    rows.sort(key=lambda r: (r["scenario_id"], order[r["strategy"]]))
    return rows


# --- aggregation and report files -------------------------------------------------

def aggregate_rows(rows: list[dict], threshold: float) -> dict:
    """Headline statistics per strategy, recomputable from the rows alone."""
    strategies: dict[str, dict] = {}
    for strategy in sorted({r["strategy"] for r in rows}):
        mine = [r for r in rows if r["strategy"] == strategy]
        ok = [r for r in mine if r["status"] == "ok"]
        vals = np.array([r["true_mean"] for r in ok])
        compliant = int((vals < threshold).sum()) if len(vals) else 0
        strategies[strategy] = {
            "n_scenarios": len(mine),
            "n_failed": len(mine) - len(ok),
            "compliance": compliant / len(mine) if mine else math.nan,
            "mean": float(vals.mean()) if len(vals) else math.nan,
            "median": float(np.median(vals)) if len(vals) else math.nan,
            "sd": float(vals.std()) if len(vals) else math.nan,
            "mean_evaluations": float(np.mean([r["evaluations"] for r in ok])) if ok else math.nan,
            "mean_iterations": float(np.mean([r["iterations"] for r in ok])) if ok else math.nan,
            "n_infeasible": int(sum(bool(r["infeasible"]) for r in mine)),
        }
    return strategies


def config_hash(doc: dict) -> str:
    return hashlib.sha256(
        json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()[:16]


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def write_run_report(out_dir: str, rows: list[dict], threshold: float,
                     header: dict) -> dict:
    """Write report.json, per_scenario.csv, ECDF tables, and timings.csv.

    `header` carries run identity (seeds, fingerprints, sigma, config hash);
    it is embedded in report.json.  Returns the report document.
    """
    os.makedirs(out_dir, exist_ok=True)
    strategies = aggregate_rows(rows, threshold)
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "threshold": threshold,
        "strategies": strategies,
    }
    report.update(header)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")

    with open(os.path.join(out_dir, "per_scenario.csv"), "w") as fh:
        fh.write(",".join(PER_SCENARIO_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r[c]) for c in PER_SCENARIO_COLUMNS) + "\n")

    with open(os.path.join(out_dir, "tuned_ecdf.csv"), "w") as fh:
        fh.write("strategy,value,fraction\n")
        for strategy in sorted(strategies):
            vals = np.sort([r["true_mean"] for r in rows
                            if r["strategy"] == strategy and r["status"] == "ok"])
            for i, v in enumerate(vals):
                fh.write(f"{strategy},{float(v)!r},{(i + 1) / len(vals)!r}\n")

    with open(os.path.join(out_dir, "evals_ecdf.csv"), "w") as fh:
        fh.write("strategy,count,fraction\n")
        for strategy in sorted(strategies):
            vals = np.sort([r["evaluations"] for r in rows
                            if r["strategy"] == strategy and r["status"] == "ok"])
            for i, v in enumerate(vals):
                fh.write(f"{strategy},{float(v)!r},{(i + 1) / len(vals)!r}\n")

    # wall-clock is host-dependent; quarantined here so everything above is seeded-deterministic
    with open(os.path.join(out_dir, "timings.csv"), "w") as fh:
        fh.write("scenario_id,strategy,wall_time\n")
        for r in rows:
            fh.write(f"{r['scenario_id']},{r['strategy']},{float(r['wall_time'])!r}\n")
    return report


def load_run_report(run_dir: str) -> tuple[dict, list[dict]]:
    with open(os.path.join(run_dir, "report.json")) as fh:
        report = json.load(fh)
    if report.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise RfMatchError(f"{run_dir}: unsupported report schema {report.get('schema_version')!r}")
    rows = []
    with open(os.path.join(run_dir, "per_scenario.csv")) as fh:
        columns = fh.readline().strip().split(",")
        if tuple(columns) != PER_SCENARIO_COLUMNS:
            raise RfMatchError(f"{run_dir}: unexpected per-scenario columns {columns}")
        for line in fh:
            parts = line.rstrip("\n").split(",")
            row = dict(zip(columns, parts))
            row["scenario_id"] = int(row["scenario_id"])
            for key in ("cp_f", "cs_f", "predicted_gamma", "true_gamma", "true_mean",
                        "true_median", "true_sd", "evaluations"):
                row[key] = float(row[key])
            row["iterations"] = int(row["iterations"])
            row["infeasible"] = row["infeasible"] == "1"
            rows.append(row)
    return report, rows


def verify_report_consistency(report: dict, rows: list[dict]) -> None:
    """Headline numbers must be exactly recomputable from the per-scenario rows."""
    recomputed = aggregate_rows(rows, report["threshold"])
    for strategy, agg in report["strategies"].items():
        again = recomputed.get(strategy)
        if again is None:
            raise RfMatchError(f"report lists strategy {strategy!r} with no rows")
        for key in ("compliance", "n_scenarios", "n_failed"):
            if not _close(agg[key], again[key]):
                raise RfMatchError(
                    f"{strategy}.{key}: report {agg[key]!r} != recomputed {again[key]!r}"
                )


def _close(a, b) -> bool:
    if isinstance(a, float) and isinstance(b, float):
        if math.isnan(a) and math.isnan(b):
            return True
        return a == b
    return a == b


def consolidate_reports(run_dirs: list[str], out_dir: str,
                        cost_per_inference: float | None = None) -> None:
    """Merge run reports into Table-style statistics, combined ECDF tables,
    and a noise-sweep comparison ordered by sigma.

    When `cost_per_inference` is given, an extra cost table scales each
    strategy's mean evaluation count by that constant (e.g. FLOPs or
    milliseconds per inference); evaluation counts themselves remain the
    portable overhead metric.
    """
    os.makedirs(out_dir, exist_ok=True)
    loaded = []
    for run_dir in run_dirs:
        report, rows = load_run_report(run_dir)
        verify_report_consistency(report, rows)
        loaded.append((os.path.basename(os.path.normpath(run_dir)), report, rows))

    with open(os.path.join(out_dir, "stats_table.csv"), "w") as fh:
        fh.write("run,sigma,strategy,compliance,mean,median,sd,mean_evaluations\n")
        for name, report, _ in loaded:
            for strategy, agg in sorted(report["strategies"].items()):
                fh.write(
                    f"{name},{report.get('sigma', 0.0)!r},{strategy},"
                    f"{agg['compliance']!r},{agg['mean']!r},{agg['median']!r},"
                    f"{agg['sd']!r},{agg['mean_evaluations']!r}\n"
                )

    with open(os.path.join(out_dir, "noise_sweep.csv"), "w") as fh:
        fh.write("sigma,strategy,compliance\n")
        by_sigma = sorted(loaded, key=lambda item: item[1].get("sigma", 0.0))
        for name, report, _ in by_sigma:
            for strategy, agg in sorted(report["strategies"].items()):
                fh.write(f"{report.get('sigma', 0.0)!r},{strategy},{agg['compliance']!r}\n")

    with open(os.path.join(out_dir, "tuned_ecdf.csv"), "w") as fh:
        fh.write("run,strategy,value,fraction\n")
        for name, _, rows in loaded:
            for strategy in sorted({r["strategy"] for r in rows}):
                vals = np.sort([r["true_mean"] for r in rows
                                if r["strategy"] == strategy and r["status"] == "ok"])
                for i, v in enumerate(vals):
                    fh.write(f"{name},{strategy},{float(v)!r},{(i + 1) / len(vals)!r}\n")

    if cost_per_inference is not None:
        with open(os.path.join(out_dir, "cost_table.csv"), "w") as fh:
            fh.write("run,strategy,mean_evaluations,cost\n")
            for name, report, _ in loaded:
                for strategy, agg in sorted(report["strategies"].items()):
                    cost = agg["mean_evaluations"] * cost_per_inference
                    fh.write(f"{name},{strategy},{agg['mean_evaluations']!r},{cost!r}\n")
