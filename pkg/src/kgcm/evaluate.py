"""Regression metrics and the cumulative component-ablation harness.

Metrics are computed over every (region, window, horizon-step) point of a
split. The ablation harness trains six variants per seed, enabling the
components one at a time in the fixed order backbone, +ssa, +rcpg, +dgso,
+acmfw, +lpo, and reports the median metrics per variant with deltas against
the previous row.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from multiprocessing import get_context

import numpy as np

from .data import DemandDataset, PredictionRow
from .errors import MetricError
from .model import COMPONENT_ORDER, TrainConfig
from .pipeline import build_windows, fit, predict, split_windows

__all__ = [
    "MetricReport",
    "ForecastReport",
    "AblationRow",
    "mae",
    "rmse",
    "mape",
    "compute_metrics",
    "evaluate",
    "ablation_variants",
    "run_ablation",
    "render_ablation_table",
]

DEFAULT_MAPE_FLOOR = 1.0


def _check_lengths(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=np.float64).ravel()
    if p.size == 0 or t.size == 0:
        raise MetricError("metrics need at least one point")
    if p.size != t.size:
        raise MetricError(f"prediction count {p.size} does not match truth count {t.size}")
    return p, t


def mae(pred, truth) -> float:
    p, t = _check_lengths(pred, truth)
    return float(np.mean(np.abs(p - t)))


def rmse(pred, truth) -> float:
    p, t = _check_lengths(pred, truth)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def mape(pred, truth, floor: float = DEFAULT_MAPE_FLOOR) -> tuple[float, int]:
    """Percentage error with floored denominators; returns (percent, n_floored)."""
    if floor <= 0:
        raise MetricError(f"mape floor must be positive, got {floor}")
    p, t = _check_lengths(pred, truth)
    denom = np.maximum(np.abs(t), floor)
    n_floored = int((np.abs(t) < floor).sum())
    return float(100.0 * np.mean(np.abs(p - t) / denom)), n_floored


@dataclass
class MetricReport:
    mae: float
    rmse: float
    mape_percent: float
    n_points: int
    n_floored: int


@dataclass
class ForecastReport:
    rows: list[PredictionRow]
    metrics: MetricReport


def compute_metrics(pred, truth, floor: float = DEFAULT_MAPE_FLOOR) -> MetricReport:
    p, t = _check_lengths(pred, truth)
    pct, n_floored = mape(p, t, floor)
    return MetricReport(mae=mae(p, t), rmse=rmse(p, t), mape_percent=pct, n_points=p.size, n_floored=n_floored)


def evaluate(model, windows, floor: float = DEFAULT_MAPE_FLOOR) -> ForecastReport:
    """Forecast every window with ``model`` and aggregate all horizon points.

    ``model`` needs only a prediction callable: either a pipeline model (used
    through ``pipeline.predict``) or any object with predict(window).
    """
    rows: list[PredictionRow] = []
    preds: list[float] = []
    truths: list[float] = []
    for window in windows:
        if hasattr(model, "predict"):
            y_pred = np.asarray(model.predict(window), dtype=np.float64)
        else:
            y_pred = predict(model, window)
        y_true = window.targets
        for step in range(len(y_true)):
            ts = window.target_times[step] if window.target_times else None
            rows.append(
                PredictionRow(
                    region=window.region,
                    timestamp=ts,
                    horizon_step=step + 1,
                    y_true=float(y_true[step]),
                    y_pred=float(y_pred[step]),
                )
            )
            preds.append(float(y_pred[step]))
            truths.append(float(y_true[step]))
    return ForecastReport(rows=rows, metrics=compute_metrics(preds, truths, floor))


# ---------------------------------------------------------------------------
# Ablation
# ---------------------------------------------------------------------------


@dataclass
class AblationRow:
    variant: str
    components: frozenset[str]
    seed: int
    report: MetricReport


def ablation_variants() -> list[tuple[str, frozenset[str]]]:
    """Cumulative component sets in the fixed row order."""
    variants = [("backbone", frozenset())]
    enabled: set[str] = set()
    for name in COMPONENT_ORDER:
        enabled.add(name)
        variants.append((f"+{name}", frozenset(enabled)))
    return variants


def _run_one(args) -> AblationRow:
    dataset, config, variant, components, seed, floor = args
    run_config = config.scaled(seed=seed)
    model = fit(dataset, run_config, components)
    split = split_windows(build_windows(dataset, run_config))
    report = evaluate(model, split.test, floor)
    return AblationRow(variant=variant, components=components, seed=seed, report=report.metrics)


def run_ablation(dataset: DemandDataset, config: TrainConfig, seeds, floor: float = DEFAULT_MAPE_FLOOR,
                 jobs: int = 1) -> list[AblationRow]:
    """Train and evaluate the six cumulative variants for every seed."""
    seeds = list(seeds)
    if not seeds:
        raise MetricError("ablation needs at least one seed")
    tasks = [
        (dataset, config, variant, components, seed, floor)
        for seed in seeds
        for variant, components in ablation_variants()
    ]
    if jobs <= 1:
        rows = [_run_one(task) for task in tasks]
    else:
        with get_context("spawn").Pool(processes=jobs) as pool:
            rows = pool.map(_run_one, tasks)
    order = {name: i for i, (name, _) in enumerate(ablation_variants())}
    rows.sort(key=lambda r: (order[r.variant], r.seed))
    return rows


def median_by_variant(rows: list[AblationRow]) -> dict[str, MetricReport]:
    out: dict[str, MetricReport] = {}
    for variant, _ in ablation_variants():
        group = [r.report for r in rows if r.variant == variant]
        if not group:
            continue
        out[variant] = MetricReport(
            mae=statistics.median(r.mae for r in group),
            rmse=statistics.median(r.rmse for r in group),
            mape_percent=statistics.median(r.mape_percent for r in group),
            n_points=group[0].n_points,
            n_floored=int(statistics.median(r.n_floored for r in group)),
        )
    return out


def render_ablation_table(rows: list[AblationRow]) -> str:
    """Human-readable medians with deltas, e.g. `35.62(-2.33%)`."""
    medians = median_by_variant(rows)
    lines = ["variant       | MAPE(%)          | MAE            | RMSE"]
    prev: MetricReport | None = None
    for variant, _ in ablation_variants():
        if variant not in medians:
            continue
        m = medians[variant]
        if prev is None:
            mape_cell = f"{m.mape_percent:.2f}"
            mae_cell = f"{m.mae:.2f}"
            rmse_cell = f"{m.rmse:.2f}"
        else:
            mape_cell = f"{m.mape_percent:.2f}({m.mape_percent - prev.mape_percent:+.2f}%)"
            mae_cell = f"{m.mae:.2f}({m.mae - prev.mae:+.2f})"
            rmse_cell = f"{m.rmse:.2f}({m.rmse - prev.rmse:+.2f})"
        lines.append(f"{variant:<13} | {mape_cell:<16} | {mae_cell:<14} | {rmse_cell}")
        prev = m
    return "\n".join(lines)


def ablation_csv(rows: list[AblationRow]) -> str:
    lines = ["variant,seed,mape_percent,mae,rmse,n_points,n_floored"]
    for r in rows:
        m = r.report
        lines.append(
            f"{r.variant},{r.seed},{format(m.mape_percent, '.17g')},{format(m.mae, '.17g')},"
            f"{format(m.rmse, '.17g')},{m.n_points},{m.n_floored}"
        )
    return "\n".join(lines) + "\n"
