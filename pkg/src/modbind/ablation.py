"""Ablation suite execution: vary one config axis at a time over a seed grid.

Each cell (axis value x seed) trains and evaluates a full experiment derived
from the base config. Cell failures are recorded and the suite keeps going.
Outputs are a long-format CSV (one row per cell metric) and a seed-averaged
summary; row order is fixed by the suite definition, so reruns are
byte-identical.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import AblationSuiteSpec, apply_axis, parse_experiment_config
from .evaluation import run_eval_plan
from .report import canonical_json
from .trainer import train_run
from .world import make_world


def format_axis_value(value) -> str:
    """Stable single-token rendering of a grid value for CSV keys."""
    if isinstance(value, str):
        return value
    return canonical_json(value)


@dataclass
class CellResult:
    axis: str
    value: str
    seed: int
    status: str  # "ok" | "error"
    config_hash: str = ""
    metrics: dict[str, float] = field(default_factory=dict)
    error: str = ""


def run_cell(base_normalized: dict, axis: str, value, seed: int) -> tuple[str, dict[str, float]]:
    """Train and evaluate one ablation cell; returns (config hash, metrics)."""
    doc = apply_axis(base_normalized, axis, value)
    doc["seed"] = seed
    cfg = parse_experiment_config(doc)
    world = make_world(cfg.world, cfg.seed)
    state, _ = train_run(world, cfg.archs, cfg.train)
    report = run_eval_plan(world, state, cfg.eval_plan, config_hash=cfg.hash, seed=seed)
    return cfg.hash, dict(report.metrics)


def run_ablation_suite(suite: AblationSuiteSpec, progress=None) -> list[CellResult]:
    """All cells in definition order; failures become error-status rows."""
    results = []
    for axis_spec in suite.axes:
        for value in axis_spec.grid:
            value_str = format_axis_value(value)
            for seed in suite.seeds:
                try:
                    cfg_hash, metrics = run_cell(suite.base.normalized, axis_spec.axis, value, seed)
                    cell = CellResult(
                        axis=axis_spec.axis, value=value_str, seed=seed,
                        status="ok", config_hash=cfg_hash, metrics=metrics,
                    )
                except Exception as e:  # a failed cell must not end the suite
                    cell = CellResult(
                        axis=axis_spec.axis, value=value_str, seed=seed,
                        status="error", error=str(e),
                    )
                results.append(cell)
                if progress is not None:
                    progress(cell)
    return results


def summarize(results: list[CellResult]) -> list[dict]:
    """Seed-averaged metric means per (axis, value), in first-seen order."""
    groups: dict[tuple[str, str, str], list[float]] = {}
    order: list[tuple[str, str, str]] = []
    for cell in results:
        if cell.status != "ok":
            continue
        for name in sorted(cell.metrics):
            key = (cell.axis, cell.value, name)
            if key not in groups:
                groups[key] = []
                order.append(key)
            groups[key].append(cell.metrics[name])
    return [
        {
            "axis": axis,
            "value": value,
            "metric": metric,
            "seeds": len(groups[(axis, value, metric)]),
            "mean": float(np.mean(groups[(axis, value, metric)])),
        }
        for axis, value, metric in order
    ]


def write_long_csv(results: list[CellResult], path: str | Path, config_hash: str) -> None:
    with open(path, "w", newline="") as f:
        f.write(f"# base_config_hash={config_hash}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["axis", "value", "seed", "status", "config_hash", "metric", "metric_value"])
        for cell in results:
            if cell.status == "ok":
                for name in sorted(cell.metrics):
                    w.writerow(
                        [cell.axis, cell.value, cell.seed, "ok", cell.config_hash,
                         name, repr(float(cell.metrics[name]))]
                    )
            else:
                w.writerow([cell.axis, cell.value, cell.seed, "error", "", "error", cell.error])


def write_summary_csv(summary_rows: list[dict], path: str | Path, config_hash: str) -> None:
    with open(path, "w", newline="") as f:
        f.write(f"# base_config_hash={config_hash}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["axis", "value", "metric", "seeds", "mean"])
        for row in summary_rows:
            w.writerow([row["axis"], row["value"], row["metric"], row["seeds"], repr(row["mean"])])
