"""Experiment orchestration: config loading, result serialization, commands.

Every command is a pure function of (config, seeds, output directory): the
same inputs produce byte-identical output files. Numbers are written with 17
significant digits so they re-parse to the exact in-memory double.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import baselines, hypergrad, optimizer, problems, snag
from .constants import ConstraintViolation, derive_schedule
from .rng import RandomStream

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "write_csv",
    "write_json",
    "cmd_snag_track",
    "cmd_bias",
    "cmd_accbo",
    "cmd_sweep",
]

log = logging.getLogger("accbo")


class ConfigError(ValueError):
    """A configuration document is malformed; the message names the field."""


@dataclass(frozen=True)
class ExperimentConfig:
    """One command invocation: parsed config plus run-level options."""

    command: str
    params: dict
    out_dir: Path
    n_seeds: int = 1
    base_seed: int = 0
    threads: int = 1

    def __post_init__(self) -> None:
        if self.n_seeds < 1:
            raise ConfigError("seeds: must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads: must be >= 1")


def _check_fields(doc: dict, required: set[str], optional: set[str], ctx: str) -> None:
    for name in required:
        if name not in doc:
            raise ConfigError(f"{ctx}: missing required field '{name}'")
    for name in doc:
        if name not in required and name not in optional:
            raise ConfigError(f"{ctx}: unknown field '{name}'")


def load_config(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return doc


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_csv(records: list[dict], path: str | Path, columns: list[str]) -> None:
    lines = [",".join(columns)]
    for rec in records:
        lines.append(",".join(_fmt(rec[c]) for c in columns))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


class _FloatEncoder(json.JSONEncoder):
    def default(self, o):
        if isinstance(o, (np.floating,)):
            return float(o)
        if isinstance(o, (np.integer,)):
            return int(o)
        if isinstance(o, np.ndarray):
            return o.tolist()
        return super().default(o)


def write_json(obj, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, cls=_FloatEncoder)
        fh.write("\n")


def _load_instance(spec, ctx: str) -> problems.BilevelInstance:
    if isinstance(spec, str):
        return problems.instance_from_json(Path(spec).read_text(encoding="utf-8"))
    if isinstance(spec, dict):
        if spec.get("kind") == "fixture_ridge":
            kwargs = {k: v for k, v in spec.items() if k != "kind"}
            return problems.make_fixture_ridge(**kwargs)
        try:
            return problems.instance_from_dict(spec)
        except ConstraintViolation as exc:
            raise ConfigError(f"{ctx}: {exc}") from exc
    raise ConfigError(f"{ctx}: instance must be a path or an inline object")


def _schedule_from_config(doc: dict, inst, ctx: str):
    _check_fields(
        doc,
        required={"mode", "epsilon", "delta", "d0"},
        optional={"sigma_g1_tilde", "y0_gap", "overrides"},
        ctx=ctx,
    )
    return derive_schedule(
        inst.constants,
        epsilon=doc["epsilon"],
        delta=doc["delta"],
        d0=doc["d0"],
        mode=doc["mode"],
        sigma_g1_tilde=doc.get("sigma_g1_tilde", 1.0),
        y0_gap=doc.get("y0_gap", 1.0),
        overrides=doc.get("overrides"),
    )


TRAJECTORY_COLUMNS = ["t", "V", "bound", "dist", "phi_gap"]
RUN_COLUMNS = [
    "t", "grad_norm", "m_norm", "y_err", "yhat_err", "yhat_step",
    "calls_g1", "calls_jvp", "calls_hvp", "calls_f",
]


def _run_log_records(logs: list[optimizer.IterationLog]) -> list[dict]:
    return [
        {
            "t": rec.t,
            "grad_norm": rec.grad_norm_true,
            "m_norm": rec.m_norm,
            "y_err": rec.y_track_err,
            "yhat_err": rec.yhat_track_err,
            "yhat_step": rec.yhat_step,
            "calls_g1": rec.calls_g1,
            "calls_jvp": rec.calls_jvp,
            "calls_hvp": rec.calls_hvp,
            "calls_f": rec.calls_f,
        }
        for rec in logs
    ]


# ---------------------------------------------------------------------------
# snag-track


def cmd_snag_track(config: ExperimentConfig) -> int:
    doc = config.params
    _check_fields(
        doc,
        required={"mu", "alpha", "T", "delta_prob", "V0", "dim"},
        optional={"sigma", "drift", "write_trajectories"},
        ctx="snag-track",
    )
    sigmas = doc.get("sigma", 0.0)
    if not isinstance(sigmas, list):
        sigmas = [sigmas]
    drift_doc = doc.get("drift", {"kind": "none", "delta": 0.0})
    deltas = drift_doc.get("delta", 0.0)
    if not isinstance(deltas, list):
        deltas = [deltas]
    kind = drift_doc.get("kind", "none")

    config.out_dir.mkdir(parents=True, exist_ok=True)
    cells = [(s, d) for s in sigmas for d in deltas]

    def run_cell(cell):
        sigma, delta = cell
        p = snag.TrackingBoundParams(
            mu=doc["mu"], alpha=doc["alpha"], sigma=sigma, delta_drift=delta,
            T=doc["T"], delta_prob=doc["delta_prob"], V0=doc["V0"],
        )
        drift = snag.DriftProcess(
            kind=kind if delta > 0 else "none", delta=delta,
            direction=(1.0,) + (0.0,) * (doc["dim"] - 1)
            if kind == "fixed_direction" else None,
        )
        rate = snag.mc_tracking_violation_rate(
            p, drift, config.n_seeds, dim=doc["dim"], base_seed=config.base_seed
        )
        if doc.get("write_trajectories", True):
            family = snag.QuadraticFamily(mu=doc["mu"], dim=doc["dim"])
            logs = snag.run_tracking_experiment(
                family, drift, p, RandomStream(config.base_seed).child("mc", 0)
            )
            name = f"track_sigma{_fmt(float(sigma))}_delta{_fmt(float(delta))}.csv"
            write_csv(logs, config.out_dir / name, TRAJECTORY_COLUMNS)
        return {"sigma": sigma, "delta": delta, "violation_rate": rate,
                "n_seeds": config.n_seeds}

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(run_cell, cells))
    else:
        results = [run_cell(c) for c in cells]

    summary = {
        "command": "snag-track",
        "delta_prob": doc["delta_prob"],
        "cells": results,
        "all_within_delta": all(
            r["violation_rate"] <= doc["delta_prob"] for r in results
        ),
    }
    write_json(summary, config.out_dir / "snag_track_summary.json")
    return 0 if summary["all_within_delta"] else 3


# ---------------------------------------------------------------------------
# bias


def cmd_bias(config: ExperimentConfig) -> int:
    doc = config.params
    _check_fields(
        doc,
        required={"instance", "Q_grid", "n_samples"},
        optional={"S", "x"},
        ctx="bias",
    )
    inst = _load_instance(doc["instance"], "bias.instance")
    x = np.asarray(doc.get("x", [0.0] * inst.dim_x), dtype=float)
    S = doc.get("S", 1)
    config.out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    ok = True
    for Q in doc["Q_grid"]:
        cfg = hypergrad.EstimatorConfig(Q=Q, S=S, l_g1=inst.constants.l_g1)
        stream = RandomStream(config.base_seed).child("bias", Q)
        res = hypergrad.empirical_bias_and_variance(
            inst, x, cfg, doc["n_samples"], stream
        )
        bound = hypergrad.bias_bound(inst.constants, Q)
        row_ok = res["bias_est"] <= bound + 4.0 * res["se"]
        ok = ok and row_ok
        rows.append({
            "Q": Q, "S": S, "bias_bound": bound, "bias_est": res["bias_est"],
            "var_est": res["var_est"], "se": res["se"],
        })
    write_csv(rows, config.out_dir / "bias.csv",
              ["Q", "S", "bias_bound", "bias_est", "var_est", "se"])
    write_json({"command": "bias", "rows": rows, "all_within_bound": ok},
               config.out_dir / "bias_summary.json")
    return 0 if ok else 3


# ---------------------------------------------------------------------------
# accbo


def _summarize_run(logs: list[optimizer.IterationLog]) -> dict:
    final = logs[-1]
    return {
        "iterations": len(logs),
        "running_avg_grad_norm": optimizer.running_average_grad_norm(logs),
        "final_grad_norm": final.grad_norm_true,
        "total_oracle_calls": final.total_calls,
        "zero_momentum_events": sum(1 for rec in logs if rec.zero_momentum),
    }


def cmd_accbo(config: ExperimentConfig) -> int:
    doc = config.params
    _check_fields(
        doc,
        required={"instance", "schedule", "option"},
        optional={"x0", "algorithm"},
        ctx="accbo",
    )
    inst = _load_instance(doc["instance"], "accbo.instance")
    schedule = _schedule_from_config(doc["schedule"], inst, "accbo.schedule")
    x0 = np.asarray(doc["x0"], dtype=float) if "x0" in doc else None
    algorithm = doc.get("algorithm", "accbo")
    config.out_dir.mkdir(parents=True, exist_ok=True)

    per_seed = []
    for k in range(config.n_seeds):
        stream = RandomStream(config.base_seed).child("run", k)
        if algorithm == "accbo":
            logs = optimizer.run_accbo(inst, schedule, doc["option"], stream, x0=x0)
        elif algorithm == "plain_momentum":
            logs = baselines.run_plain_momentum_bilevel(inst, schedule, stream, x0=x0)
        else:
            raise ConfigError(f"accbo.algorithm: unknown algorithm '{algorithm}'")
        write_csv(_run_log_records(logs), config.out_dir / f"run_seed{k}.csv",
                  RUN_COLUMNS)
        per_seed.append(_summarize_run(logs))

    summary = {
        "command": "accbo",
        "algorithm": algorithm,
        "option": doc["option"],
        "epsilon": schedule.epsilon,
        "per_seed": per_seed,
        "median_running_avg_grad_norm": float(np.median(
            [s["running_avg_grad_norm"] for s in per_seed]
        )),
    }
    write_json(summary, config.out_dir / "accbo_summary.json")
    return 0


# ---------------------------------------------------------------------------
# sweep


def calls_to_target(logs: list[optimizer.IterationLog], target: float) -> float:
    """Cumulative oracle calls at the first t whose running average meets target."""
    running = 0.0
    for i, rec in enumerate(logs):
        running += rec.grad_norm_true
        if running / (i + 1) <= target:
            return float(rec.total_calls)
    return math.inf


def cmd_sweep(config: ExperimentConfig) -> int:
    doc = config.params
    _check_fields(
        doc,
        required={"instance", "epsilons", "option", "schedule"},
        optional={"x0", "algorithms"},
        ctx="sweep",
    )
    if config.n_seeds < 1:
        raise ConfigError("sweep: empty seed list")
    inst = _load_instance(doc["instance"], "sweep.instance")
    x0 = np.asarray(doc["x0"], dtype=float) if "x0" in doc else None
    algorithms = doc.get("algorithms", ["accbo", "plain_momentum"])
    config.out_dir.mkdir(parents=True, exist_ok=True)

    table = []
    for eps in doc["epsilons"]:
        sched_doc = dict(doc["schedule"])
        sched_doc["epsilon"] = eps
        schedule = _schedule_from_config(sched_doc, inst, "sweep.schedule")
        target = 20.0 * eps
        for algorithm in algorithms:
            counts = []
            for k in range(config.n_seeds):
                stream = RandomStream(config.base_seed).child("sweep", k)
                if algorithm == "accbo":
                    logs = optimizer.run_accbo(
                        inst, schedule, doc["option"], stream, x0=x0
                    )
                else:
                    logs = baselines.run_plain_momentum_bilevel(
                        inst, schedule, stream, x0=x0
                    )
                counts.append(calls_to_target(logs, target))
            table.append({
                "epsilon": eps,
                "algorithm": algorithm,
                "median_calls_to_target": float(np.median(counts)),
                "calls": counts,
            })

    accbo_rows = [r for r in table if r["algorithm"] == "accbo"
                  and math.isfinite(r["median_calls_to_target"])]
    slope = None
    if len(accbo_rows) >= 2:
        xs = np.log([1.0 / r["epsilon"] for r in accbo_rows])
        ys = np.log([r["median_calls_to_target"] for r in accbo_rows])
        slope = float(np.polyfit(xs, ys, 1)[0])

    summary = {"command": "sweep", "table": table, "accbo_loglog_slope": slope}
    write_json(summary, config.out_dir / "sweep_summary.json")
    return 0
