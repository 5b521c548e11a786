"""Declared power model: idle draw plus a per-activity cost converted to mW."""
from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field

DEFAULT_UNITS = {
    "preprocess": 1.0,   # per sample scaled
    "inference": 50.0,   # per window classified
    "gate": 5.0,         # per window checked
    "reduction": 10.0,   # per window reduced
    "training": 200.0,   # per epoch
    "message": 1.0,      # per envelope sent or received
}

DEFAULT_IDLE_MW = {"sensor": 1400.0, "edge": 2700.0, "cloud": 9000.0}
DEFAULT_MW_PER_UNIT = {"sensor": 1.0, "edge": 1.0, "cloud": 1.0}


@dataclass(frozen=True)
class EnergyModel:
    """``power = idle + units * conversion / duration`` per layer.

    ``units`` is the cost-weighted activity count, so the conversion is in
    mW per (unit per second).  Only orderings are meaningful.
    """

    idle_mw: Mapping = field(default_factory=lambda: dict(DEFAULT_IDLE_MW))
    unit_costs: Mapping = field(default_factory=lambda: dict(DEFAULT_UNITS))
    mw_per_unit: Mapping = field(default_factory=lambda: dict(DEFAULT_MW_PER_UNIT))

    def __post_init__(self):
        for table in (self.idle_mw, self.unit_costs, self.mw_per_unit):
            if any(v < 0 for v in table.values()):
                raise ValueError("energy model entries must be non-negative")

    def units(self, activity: Mapping) -> float:
        """Weighted units for an activity counter such as ``{"inference": 3}``."""
        total = 0.0
        for name, count in activity.items():
            if name not in self.unit_costs:
                raise KeyError(f"no cost declared for activity {name!r}")
            total += self.unit_costs[name] * count
        return total

    def power(self, layer: str, activity: Mapping, duration_s: float) -> float:
        if duration_s <= 0:
            raise ValueError("duration must be positive")
        return self.idle_mw[layer] + self.units(activity) * self.mw_per_unit[layer] / duration_s
