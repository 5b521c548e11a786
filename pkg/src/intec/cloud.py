"""Cloud tier: reduced-data log, periodic retraining, firmware creation and metrics."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from intec.core import (CLOUD_RESPONSE_TOPIC, DeviceRecord, Envelope,
                        FirmwarePackage, ReducedBatchMessage, ResultRow, UserQuery,
                        Validation, WindowBatch, cloud_infer_topic, cloud_query_topic,
                        cloud_reduced_topic, firmware_topic, ms,
                        relayed_sensor_topic)
from intec.edge import AnalysisCore, service_query
from intec.errors import FormatError, InsufficientData, StaleVersion, UnknownDevice
from intec.model.artifact import ModelArtifact, save_artifact
from intec.model.classifier import train_classifier
from intec.model.compress import compress_model
from intec.model.evaluate import evaluate
from intec.model.training import TrainConfig
from intec.numerics.windows import majority_label
from intec.transport import (Broker, Direction, LinkClass, ProcessingQueue,
                             ServiceTimes, TrafficLedger)

log = logging.getLogger(__name__)

DEFAULT_MIN_WINDOWS = 20
DEFAULT_ACCURACY_FLOOR = 0.85


class CloudStore:
    """Arrival-ordered log of reduced messages plus the versioned artifact registry."""

    def __init__(self):
        self.log: list[tuple[int, ReducedBatchMessage]] = []
        self.registry: dict[int, ModelArtifact] = {}
        self._seen: set = set()
        self.rows = 0

    def ingest(self, msg: ReducedBatchMessage, t: int = 0) -> int:
        """Append a message; a repeated ``(edge_id, message_id)`` is ignored (returns 0)."""
        if len(msg) == 0:
            raise FormatError("reduced message carries no rows")
        if not np.all(np.isfinite(msg.rows)):
            raise FormatError("reduced message carries non-finite values")
        if self.log and t < self.log[-1][0]:
            raise ValueError("arrivals must be logged in time order")
        key = (msg.edge_id, msg.message_id)
        if key in self._seen:
            return 0
        self._seen.add(key)
        self.log.append((t, msg))
        self.rows += len(msg)
        return len(msg)

    @property
    def latest_version(self) -> int:
        return max(self.registry, default=0)

    @property
    def latest(self) -> Optional[ModelArtifact]:
        return self.registry.get(self.latest_version)

    def register(self, artifact: ModelArtifact):
        if artifact.version <= self.latest_version:
            raise StaleVersion(
                f"v{artifact.version} does not follow registered v{self.latest_version}")
        self.registry[artifact.version] = artifact

    def windows(self, window: Optional[int] = None):
        """Training windows ``(X, y)`` rebuilt by cutting each message into blocks of W rows."""
        xs, ys = [], []
        for _, msg in self.log:
            w = window or msg.window_size
            n = len(msg) // w
            for i in range(n):
                xs.append(msg.rows[i * w:(i + 1) * w])
                ys.append(majority_label(msg.labels[i * w:(i + 1) * w]))
        if not xs:
            return np.zeros((0, window or 0, 0)), np.zeros(0, dtype=np.int64)
        return np.stack(xs), np.asarray(ys, dtype=np.int64)


@dataclass
class TrainingOutcome:
    artifact: Optional[ModelArtifact]
    accuracy: float
    epochs: int
    n_train: int
    n_val: int

    @property
    def accepted(self) -> bool:
        return self.artifact is not None


def split_80_20(X, y):
    """First 80% of windows (insertion order) train, the rest validate."""
    cut = int(round(0.8 * X.shape[0]))
    cut = min(max(cut, 1), X.shape[0] - 1)
    return X[:cut], y[:cut], X[cut:], y[cut:]


def training_job(store: CloudStore, cfg: TrainConfig, scaler, reducer, window: int,
                 min_windows: int = DEFAULT_MIN_WINDOWS,
                 accuracy_floor: float = DEFAULT_ACCURACY_FLOOR,
                 hidden: int = 128, register: bool = True) -> TrainingOutcome:
    """Retrain from scratch on everything logged so far.

    The packaged artifact reuses the scaler and reducer the edge applies, so a
    device running it sees exactly the rows the cloud trained on.  It is
    registered (as the next version) only if validation accuracy reaches the
    floor.  With ``register=False`` the caller registers it later.
    """
    X, y = store.windows(window)
    if X.shape[0] < max(min_windows, 2):
        raise InsufficientData(f"{X.shape[0]} windows stored, {min_windows} required")
    X_tr, y_tr, X_val, y_val = split_80_20(X, y)
    model, history = train_classifier(X_tr, y_tr, X_val, y_val, cfg, hidden=hidden)
    accuracy = evaluate(model, X_val, y_val).accuracy
    outcome = TrainingOutcome(None, accuracy, history.epochs, len(y_tr), len(y_val))
    if accuracy < accuracy_floor:
        log.info("model rejected: validation accuracy %.3f below %.2f", accuracy, accuracy_floor)
        return outcome
    version = store.latest_version + 1
    artifact = ModelArtifact(version, window, scaler, reducer,
                             compress_model(model, version), float(accuracy))
    if register:
        store.register(artifact)
    outcome.artifact = artifact
    return outcome


def firmware_update_job(store: CloudStore, devices: list[DeviceRecord], edge_id: str,
                        now: int = 0) -> list[Envelope]:
    """One firmware envelope per device model, addressed to the devices running an older model."""
    artifact = store.latest
    if artifact is None:
        return []
    stale: dict[str, list[str]] = {}
    for record in devices:
        if record.model_version < artifact.version:
            stale.setdefault(record.device_model, []).append(record.device_id)
    blob = save_artifact(artifact)
    return [Envelope.wrap(firmware_topic(edge_id), "cloud", now,
                          FirmwarePackage(model, artifact.version, tuple(ids), blob))
            for model, ids in stale.items()]


class CloudNode:
    """Cloud actor.

    Always: ingest reduced data and retrain every ``training_period``.
    ``firmware_mode`` says where a new model goes: ``"devices"`` (through the
    edge distributor), ``"edge"`` (the edge installs it) or ``"local"``.
    ``infer_reduced``: classify reduced windows forwarded by the edge.
    ``analysis``: run validation and reduction here (no edge tier).
    ``query_link``: link on which queries arrive, when the cloud serves them.
    """

    def __init__(self, broker: Broker, artifact: ModelArtifact, devices: list[DeviceRecord],
                 edge_id: str, train_cfg: TrainConfig, scaler, reducer, window: int,
                 firmware_mode: str = "devices", infer_reduced: bool = False,
                 analysis: Optional[AnalysisCore] = None, query_link: Optional[LinkClass] = None,
                 service: ServiceTimes = ServiceTimes(), training_period: int = ms(10 * 60_000),
                 epoch_cost: int = ms(1000), reduction_interval: int = ms(15 * 60_000),
                 until: Optional[int] = None, min_windows: int = DEFAULT_MIN_WINDOWS,
                 accuracy_floor: float = DEFAULT_ACCURACY_FLOOR):
        if firmware_mode not in ("devices", "edge", "local"):
            raise ValueError(f"unknown firmware mode {firmware_mode!r}")
        self.broker = broker
        self.scheduler = broker.scheduler
        self.queue = ProcessingQueue(self.scheduler)
        self.store = CloudStore()
        self.store.register(artifact)
        self.artifact = artifact
        self.devices = {d.device_id: d for d in devices}
        self.edge_id = edge_id
        self.train_cfg = train_cfg
        self.scaler = scaler
        self.reducer = reducer
        self.window = window
        self.firmware_mode = firmware_mode
        self.infer_reduced = infer_reduced
        self.analysis = analysis
        self.query_link = query_link
        self.service = service
        self.training_period = training_period
        self.epoch_cost = epoch_cost
        self.reduction_interval = reduction_interval
        self.until = until
        self.min_windows = min_windows
        self.accuracy_floor = accuracy_floor
        self.latest: dict = {}
        self.units = Counter()
        self.events: list = []
        self.firmware_sent: list = []
        self._edge_version = artifact.version
        self._training = False

        hid = "cloud"
        broker.register_handler(hid + "/reduced", self._on_reduced)
        broker.subscribe(cloud_reduced_topic(edge_id), hid + "/reduced")
        if infer_reduced:
            broker.register_handler(hid + "/infer", self._on_infer)
            broker.subscribe(cloud_infer_topic(edge_id), hid + "/infer")
        if query_link is not None:
            broker.register_handler(hid + "/query", self._on_query)
            broker.subscribe(cloud_query_topic(), hid + "/query")
        if analysis is not None:
            broker.register_handler(hid + "/sensor", self._on_sensor)
            for device_id in self.devices:
                broker.subscribe(relayed_sensor_topic(device_id), hid + "/sensor")
            if reduction_interval > 0:
                self._at(self.scheduler.now + reduction_interval, self._reduction_tick)
        if training_period > 0:
            self._at(self.scheduler.now + training_period, self._training_tick)

    def _at(self, when, fn):
        if self.until is None or when < self.until:
            self.scheduler.at(when, fn)

    # ingestion
    def _on_reduced(self, envelope: Envelope):
        self.units["message"] += 1
        self.queue.submit(ms(self.service.ingest_ms), self._ingest, envelope.open())

    def _ingest(self, msg: ReducedBatchMessage):
        self.store.ingest(msg, self.scheduler.now)

    # inference roles
    def _on_infer(self, envelope: Envelope):
        self.units["message"] += 1
        batch = envelope.open()
        self.queue.submit(ms(self.service.inference(batch.window_size)), self._infer_reduced,
                          batch)

    def _infer_reduced(self, batch: WindowBatch):
        self.units["inference"] += 1
        label = int(self.artifact.lite.predict(batch.rows[None])[0])
        self.latest[batch.device_id] = (label, self.artifact.version)
        if batch.validation is Validation.CHECKED:
            self.store.ingest(ReducedBatchMessage(
                batch.seq, f"{self.edge_id}/{batch.device_id}", self.reducer.name,
                batch.window_size, self.scheduler.now, batch.rows,
                np.full(batch.window_size, batch.label)), self.scheduler.now)

    def _on_sensor(self, envelope: Envelope):
        self.units["message"] += 1
        batch = envelope.open()
        cost = self.service.gate(batch.window_size) + self.service.inference(batch.window_size)
        self.queue.submit(ms(cost), self._process_window, batch)

    def _process_window(self, batch: WindowBatch):
        self.units["preprocess"] += batch.window_size
        self.units["gate"] += 1
        self.units["inference"] += 1
        scaled = self.analysis.prepare(batch, rows_scaled=False)
        self.analysis.gate(scaled, self.scheduler.now)
        self.latest[batch.device_id] = (self.artifact.infer(scaled.rows), self.artifact.version)

    def _reduction_tick(self):
        n = self.analysis.store.pending
        msg = self.analysis.reduce("cloud", self.scheduler.now)
        if msg is not None:
            self.units["reduction"] += n
            self.queue.submit(ms(self.service.reduction_ms * n), self._ingest, msg)
        self._at(self.scheduler.now + self.reduction_interval, self._reduction_tick)

    # queries
    def _on_query(self, envelope: Envelope):
        self.units["message"] += 1
        self.queue.submit(ms(self.service.query_ms), self._answer, envelope.open())

    def _answer(self, query: UserQuery):
        try:
            response = service_query(query, self.latest, self.devices, "cloud")
        except UnknownDevice:
            self.events.append((self.scheduler.now, "unknown-device", query.device_id))
            return
        self._send(Envelope.wrap(CLOUD_RESPONSE_TOPIC, "cloud", self.scheduler.now, response),
                   self.query_link, Direction.DOWN)

    # training and rollout
    def _training_tick(self):
        now = self.scheduler.now
        if self._training:
            self.events.append((now, "training-busy", None))
            self._at(now + self.training_period, self._training_tick)
            return
        try:
            outcome = training_job(self.store, self.train_cfg, self.scaler, self.reducer,
                                   self.window, self.min_windows, self.accuracy_floor,
                                   register=False)
        except InsufficientData as exc:
            self.events.append((now, "training-skipped", str(exc)))
        else:
            self.units["training"] += outcome.epochs
            # the trainer is separate from the serving queue; only the result is delayed
            done = now + outcome.epochs * self.epoch_cost
            if outcome.accepted and self.until is not None and done > self.until:
                self.events.append((now, "training-past-horizon", outcome.artifact.version))
            elif outcome.accepted:
                self._training = True
                self.scheduler.at(done, self._deploy, outcome.artifact)
            else:
                self.events.append((now, "model-rejected", outcome.accuracy))
        self._at(now + self.training_period, self._training_tick)

    def _deploy(self, artifact: ModelArtifact):
        now = self.scheduler.now
        self._training = False
        self.store.register(artifact)
        self.events.append((now, "registered", artifact.version))
        if self.firmware_mode == "local":
            self.artifact = artifact
            return
        if self.firmware_mode == "edge":
            targets = [DeviceRecord(self.edge_id, device_model="edge",
                                    model_version=self._edge_version)]
        else:
            targets = list(self.devices.values())
        for envelope in firmware_update_job(self.store, targets, self.edge_id, now):
            pkg = envelope.open()
            self.firmware_sent.append((now, pkg.version, pkg.targets))
            self._send(envelope, LinkClass.EDGE_CLOUD, Direction.DOWN)
            for device_id in pkg.targets:
                if device_id in self.devices:
                    self.devices[device_id] = self.devices[device_id].upgraded(pkg.version)
        if self.firmware_mode == "edge":
            self._edge_version = artifact.version

    def _send(self, envelope: Envelope, link: LinkClass, direction: Direction):
        self.units["message"] += 1
        self.broker.publish(envelope, link, direction)


# -- metrics ----------------------------------------------------------------------------

@dataclass
class RunState:
    """Everything a finished run leaves behind that the metrics need."""

    variant: str
    reduction_model: str
    reduction_rate: float
    window: int
    sensors: int
    users: int
    seed: int
    duration: int
    ledger: TrafficLedger
    latencies: list = field(default_factory=list)  # ns per answered query
    sensor_units: list = field(default_factory=list)  # one Counter per device
    edge_units: Optional[Counter] = None
    cloud_units: Counter = field(default_factory=Counter)


BACKHAUL_LINKS = (LinkClass.EDGE_CLOUD, LinkClass.USER_CLOUD)


def backhaul_bytes(ledger: TrafficLedger) -> int:
    """Bytes that crossed into or out of the cloud tier.

    Local hops (device or user to the edge/access point) are identical in
    every deployment and are kept in the ledger but not in this figure.
    """
    return sum(ledger.link_bytes(link) for link in BACKHAUL_LINKS)


def export_metrics(state: RunState, energy) -> ResultRow:
    duration_s = state.duration / 1e9
    latency = (float(np.mean(state.latencies)) / 1e6) if state.latencies else None
    wan = backhaul_bytes(state.ledger)
    traffic_mb = wan / 1e6
    throughput = wan * 8 / duration_s / 1e6 if duration_s > 0 else 0.0
    sensor_mw = (float(np.mean([energy.power("sensor", u, duration_s)
                                for u in state.sensor_units]))
                 if state.sensor_units else 0.0)
    edge_mw = (energy.power("edge", state.edge_units, duration_s)
               if state.edge_units is not None else 0.0)
    cloud_mw = energy.power("cloud", state.cloud_units, duration_s)
    return ResultRow(state.variant, state.reduction_model, state.reduction_rate, state.window,
                     state.sensors, state.users, latency, traffic_mb, throughput,
                     sensor_mw, edge_mw, cloud_mw, state.seed,
                     extra={"queries": len(state.latencies),
                            "all_links_mb": state.ledger.delivered_bytes / 1e6})
