"""Grouped-bar SVG charts and a text summary from a metrics CSV."""
from __future__ import annotations

from collections import OrderedDict
from pathlib import Path

import numpy as np

from intec.harness.config import VARIANTS

METRICS = OrderedDict([
    ("latency_ms", "Latency (ms)"),
    ("traffic_mb", "Traffic (MB)"),
    ("throughput_mbps", "Throughput (Mbps)"),
    ("sensor_mw", "Sensor power (mW)"),
    ("edge_mw", "Edge power (mW)"),
    ("cloud_mw", "Cloud power (mW)"),
])
SETTINGS = ("reduction_rate", "window", "sensors", "users")


def _cell_key(row):
    return tuple(getattr(row, s) for s in SETTINGS)


def _label(key, varying):
    parts = []
    for name, value in zip(SETTINGS, key):
        if name in varying:
            parts.append(f"{int(round(value * 100))}%" if name == "reduction_rate" else str(value))
    return "/".join(parts) or "base"


def improvement(baseline: float, value: float) -> float:
    """Percent improvement of ``value`` over ``baseline`` (lower is better)."""
    return (baseline - value) / baseline * 100.0


def summary(rows) -> str:
    """InTec improvement over the EdgeCloud baseline for each cell."""
    lines = []
    by_cell = OrderedDict()
    for row in rows:
        by_cell.setdefault((row.reduction_model, _cell_key(row)), {})[row.variant] = row
    for (model, key), variants in by_cell.items():
        base, ours = variants.get("EdgeCloud"), variants.get("InTec")
        if base is None or ours is None:
            continue
        parts = []
        for metric in METRICS:
            b, v = getattr(base, metric), getattr(ours, metric)
            if b is None or v is None or b == 0:
                continue
            parts.append(f"{metric}={improvement(b, v):+.2f}%")
        lines.append(f"{model} {_label(key, SETTINGS)}: " + " ".join(parts))
    return "\n".join(lines)


def write_svgs(rows, out_dir) -> list[Path]:
    """One SVG per (reducer, metric): groups are the grid cells, bars the variants."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "intec"  # stable element ids across runs
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for model in sorted({r.reduction_model for r in rows}):
        subset = [r for r in rows if r.reduction_model == model]
        keys = list(OrderedDict.fromkeys(_cell_key(r) for r in subset))
        varying = [s for i, s in enumerate(SETTINGS) if len({k[i] for k in keys}) > 1]
        table = {(_cell_key(r), r.variant): r for r in subset}
        variants = [v for v in VARIANTS if any(r.variant == v for r in subset)]
        x = np.arange(len(keys))
        width = 0.8 / max(1, len(variants))
        for metric, title in METRICS.items():
            fig, ax = plt.subplots(figsize=(6, 3.5))
            for i, variant in enumerate(variants):
                vals = [getattr(table[(k, variant)], metric) if (k, variant) in table else None
                        for k in keys]
                vals = [np.nan if v is None else v for v in vals]
                ax.bar(x + (i - (len(variants) - 1) / 2) * width, vals, width, label=variant)
            ax.set_xticks(x, [_label(k, varying) for k in keys])
            ax.set_title(f"{title} [{model}]")
            ax.legend(fontsize="small")
            fig.tight_layout()
            path = out_dir / f"{model.lower()}_{metric}.svg"
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            written.append(path)
    return written
