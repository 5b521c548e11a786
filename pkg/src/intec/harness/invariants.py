"""Variant orderings every cell is expected to satisfy."""
from __future__ import annotations

LATENCY_SLACK_MS = 1.0


def variant_orderings(rows: dict, eps: float = LATENCY_SLACK_MS) -> dict[str, bool]:
    """Check the cross-variant inequalities for one cell.

    ``rows`` maps variant name to its :class:`ResultRow`; all four variants
    must share every other setting.
    """
    c, ec, e, i = (rows[v] for v in ("Cloud", "EdgeCloud", "Edge", "InTec"))
    return {
        "latency InTec < Edge": i.latency_ms < e.latency_ms,
        "latency Edge < EdgeCloud": e.latency_ms < ec.latency_ms,
        "latency Cloud >= EdgeCloud - eps": c.latency_ms >= ec.latency_ms - eps,
        "traffic InTec <= EdgeCloud": i.traffic_mb <= ec.traffic_mb,
        "traffic EdgeCloud < Cloud": ec.traffic_mb < c.traffic_mb,
        "sensor power InTec > EdgeCloud": i.sensor_mw > ec.sensor_mw,
        "edge power InTec < Edge": i.edge_mw < e.edge_mw,
        "cloud power InTec < Cloud": i.cloud_mw < c.cloud_mw,
    }
