"""Experiment grids, suite execution and the metrics CSV."""
from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from intec.core import CSV_COLUMNS, ResultRow
from intec.harness.config import REDUCTION_MODELS, VARIANTS, ExperimentConfig
from intec.harness.scenario import run_experiment

log = logging.getLogger(__name__)

EXPERIMENTS = (1, 2, 3, 4, 5)


def experiment_grid(number: int, base: Optional[ExperimentConfig] = None) -> list[ExperimentConfig]:
    """Cells of one experiment: every variant and reducer for each varied setting."""
    base = base or ExperimentConfig()
    if number == 1:
        settings = [dict(reduction_rate=r) for r in (0.24, 0.66)]
    elif number == 2:
        settings = [dict(window=w) for w in (25, 50, 100)]
    elif number == 3:
        settings = [dict(sensors=n) for n in (10, 20, 30, 40)]
    elif number == 4:
        settings = [dict(users=n) for n in (10, 20, 30, 40)]
    elif number == 5:
        settings = [dict(sensors=n, users=n) for n in (50, 60, 70, 80, 90, 100)]
    else:
        raise ValueError(f"experiment must be 1..5, got {number}")
    fixed = dict(reduction_rate=0.66, window=25, sensors=30, users=30)
    return [base.replace(**{**fixed, **s, "variant": v, "reduction_model": m})
            for m in REDUCTION_MODELS for s in settings for v in VARIANTS]


def smoke_grid(base: Optional[ExperimentConfig] = None) -> list[list[ExperimentConfig]]:
    """Two levels per parameter, varied one at a time around a small base cell.

    Returns groups of four configs (one per variant) sharing every other setting.
    """
    base = base or ExperimentConfig(sensors=10, users=10, repeats=1)
    changes = [{}, dict(reduction_model="AE"), dict(reduction_rate=0.24), dict(window=50),
               dict(sensors=20), dict(users=20)]
    return [[base.replace(**c, variant=v) for v in VARIANTS] for c in changes]


@dataclass
class SuiteResult:
    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)  # (config, message)

    @property
    def ok(self) -> bool:
        return not self.failures


def _run_cell(cfg: ExperimentConfig):
    try:
        return run_experiment(cfg), None
    except Exception as exc:  # reported per cell; the suite carries on
        return None, f"{type(exc).__name__}: {exc}"


def run_suite(cells: Iterable[ExperimentConfig], jobs: int = 1) -> SuiteResult:
    cells = list(cells)
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_cell, cells))
    else:
        outcomes = [_run_cell(c) for c in cells]
    result = SuiteResult()
    for cfg, (row, error) in zip(cells, outcomes):
        if error is None:
            result.rows.append(row)
        else:
            log.error("cell %s/%s failed: %s", cfg.variant, cfg.reduction_model, error)
            result.failures.append((cfg, error))
    return result


def _fmt(value, digits):
    return "" if value is None else f"{value:.{digits}f}"


def row_values(row: ResultRow) -> list[str]:
    return [row.variant, row.reduction_model, _fmt(row.reduction_rate, 2), str(row.window),
            str(row.sensors), str(row.users), _fmt(row.latency_ms, 3), _fmt(row.traffic_mb, 6),
            _fmt(row.throughput_mbps, 6), _fmt(row.sensor_mw, 3), _fmt(row.edge_mw, 3),
            _fmt(row.cloud_mw, 3), str(row.seed)]


def rows_to_csv(rows: Iterable[ResultRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow(row_values(row))
    return buf.getvalue()


def write_csv(rows: Iterable[ResultRow], path) -> None:
    Path(path).write_text(rows_to_csv(rows))


def read_csv(path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        out = []
        for rec in reader:
            out.append(ResultRow(
                rec["variant"], rec["reduction_model"], float(rec["reduction_rate"]),
                int(rec["window"]), int(rec["sensors"]), int(rec["users"]),
                float(rec["latency_ms"]) if rec["latency_ms"] else None,
                float(rec["traffic_mb"]), float(rec["throughput_mbps"]),
                float(rec["sensor_mw"]), float(rec["edge_mw"]), float(rec["cloud_mw"]),
                int(rec["seed"])))
        return out
