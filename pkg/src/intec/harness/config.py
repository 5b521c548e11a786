"""Experiment configuration: validation, defaults, and YAML/JSON loading."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from intec.core import DEFAULT_FEATURES
from intec.errors import InvalidConfig
from intec.numerics.pca import reduced_dimension
from intec.transport import LinkClass, LinkModel, ServiceTimes

VARIANTS = ("Cloud", "EdgeCloud", "Edge", "InTec")
REDUCTION_MODELS = ("PCA", "AE")
REDUCTION_RATES = (0.24, 0.66)
WINDOWS = (25, 50, 100)

# One-way delays.  The cloud figure is half of the 145 ms average round trip.
DEFAULT_LINKS = {
    LinkClass.SENSOR_EDGE: LinkModel(LinkClass.SENSOR_EDGE, 4.0),
    LinkClass.USER_EDGE: LinkModel(LinkClass.USER_EDGE, 4.0),
    LinkClass.EDGE_CLOUD: LinkModel(LinkClass.EDGE_CLOUD, 72.5),
    LinkClass.USER_CLOUD: LinkModel(LinkClass.USER_CLOUD, 72.5),
}


def _parse_rate(value) -> float:
    if isinstance(value, str):
        text = value.strip()
        value = float(text.rstrip("%")) / 100 if text.endswith("%") else float(text)
    value = float(value)
    if value > 1:  # given as a percentage
        value /= 100
    return value


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment cell.  Times are virtual seconds unless suffixed otherwise."""

    variant: str = "InTec"
    reduction_model: str = "PCA"
    reduction_rate: float = 0.66
    window: int = 25
    sensors: int = 30
    users: int = 30
    duration: float = 30.0
    seed: int = 0
    repeats: int = 3
    links: dict = field(default_factory=dict)  # link name -> {delay_ms, bandwidth_mbps}
    n_features: int = DEFAULT_FEATURES
    sampling_hz: float = 50.0
    drop_rate: float = 80.0
    calibration_fraction: float = 0.1  # head of the scaled stream the outlier model is fit on
    reduction_interval: float = 5.0
    training_period: float = 15.0
    epoch_cost: float = 0.1
    stagger_ms: float = 100.0
    max_epochs: int = 50
    patience: int = 10
    accuracy_floor: float = 0.85
    min_windows: int = 20
    dataset: Optional[str] = None  # MHEALTH file or directory; synthetic data otherwise
    service: dict = field(default_factory=dict)  # overrides for ServiceTimes fields

    def __post_init__(self):
        object.__setattr__(self, "reduction_rate", _parse_rate(self.reduction_rate))
        self.validate()

    def validate(self):
        if self.variant not in VARIANTS:
            raise InvalidConfig(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.reduction_model not in REDUCTION_MODELS:
            raise InvalidConfig(f"reduction_model must be one of {REDUCTION_MODELS}")
        if not 0 <= self.reduction_rate < 1:
            raise InvalidConfig("reduction_rate must lie in [0, 1)")
        for name in ("window", "sensors", "users", "repeats", "n_features", "max_epochs",
                     "min_windows"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise InvalidConfig(f"{name} must be a non-negative integer")
        if self.window < 2:
            raise InvalidConfig("window must be at least 2")
        if self.repeats < 1:
            raise InvalidConfig("repeats must be at least 1")
        for name in ("duration", "sampling_hz", "reduction_interval", "training_period",
                     "epoch_cost", "stagger_ms", "drop_rate", "accuracy_floor"):
            if getattr(self, name) < 0:
                raise InvalidConfig(f"{name} must be non-negative")
        if self.duration <= 0 or self.sampling_hz <= 0:
            raise InvalidConfig("duration and sampling_hz must be positive")
        if not 1 <= self.k < self.n_features:
            raise InvalidConfig(f"reduction rate {self.reduction_rate} leaves k={self.k}")
        if not 0 < self.calibration_fraction <= 1:
            raise InvalidConfig("calibration_fraction must lie in (0, 1]")
        if not 0 <= self.patience <= self.max_epochs:
            raise InvalidConfig("patience must lie in 0..max_epochs")
        try:
            self.link_models()
            self.service_times()
        except (TypeError, ValueError, KeyError) as exc:
            raise InvalidConfig(str(exc)) from None

    @property
    def k(self) -> int:
        return reduced_dimension(self.n_features, self.reduction_rate)

    def link_models(self) -> dict:
        links = dict(DEFAULT_LINKS)
        for name, spec in self.links.items():
            link = LinkClass(name)
            spec = dict(spec)
            base = links[link]
            links[link] = LinkModel(link, float(spec.pop("delay_ms", base.delay_ms)),
                                    float(spec.pop("bandwidth_mbps", base.bandwidth_mbps)))
            if spec:
                raise KeyError(f"unknown link settings {sorted(spec)}")
        return links

    def service_times(self) -> ServiceTimes:
        return ServiceTimes(**self.service)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_mapping(cls, data) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise InvalidConfig("configuration must be a mapping")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidConfig(f"unknown configuration keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except InvalidConfig:
            raise
        except (TypeError, ValueError) as exc:
            raise InvalidConfig(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    """Read a YAML (or JSON, which YAML accepts) configuration file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidConfig(f"cannot read {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise InvalidConfig(f"{path}: {exc}") from None
    return ExperimentConfig.from_mapping(data or {})
