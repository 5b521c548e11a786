"""Wire the four deployment variants onto one scheduler and run them."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from intec.cloud import CloudNode, RunState, export_metrics, split_80_20
from intec.core import (CLOUD_RESPONSE_TOPIC, QUERY_TOPIC, DeviceRecord, Envelope,
                        ResultRow, UserQuery, cloud_query_topic, ms, relayed_sensor_topic,
                        response_topic, seconds, sensor_topic)
from intec.edge import AnalysisCore, EdgeNode
from intec.errors import InvalidConfig
from intec.harness.config import ExperimentConfig
from intec.harness.datasets import FrameStream, concat_streams, ingest_mhealth, synthesize_dataset
from intec.harness.energy import EnergyModel
from intec.model.artifact import ModelArtifact
from intec.model.classifier import train_classifier
from intec.model.compress import compress_model
from intec.model.evaluate import evaluate
from intec.model.training import TrainConfig
from intec.numerics import PCA, Autoencoder, IsolationForest, ZScoreScaler, window_arrays
from intec.things import Device
from intec.transport import Broker, Direction, LinkClass, Scheduler, TrafficLedger

EDGE_ID = "edge0"
FRAMES_PER_STREAM = 13_000  # ~4 min of replay at 50 Hz, cycled as needed
FLUSH_DELAY = seconds(0.5)  # edge's final reduction pass, after the horizon
DRAIN = seconds(2)


# -- bootstrap: the models every tier starts from ------------------------------------

@dataclass(frozen=True, eq=False)
class Bootstrap:
    stream: FrameStream
    scaler: ZScoreScaler
    reducer: object
    outlier: IsolationForest
    artifact: ModelArtifact


def load_stream(cfg: ExperimentConfig) -> FrameStream:
    if cfg.dataset:
        stream = concat_streams(ingest_mhealth(cfg.dataset).values())
        if stream.n_features != cfg.n_features:
            raise InvalidConfig(f"dataset has {stream.n_features} features, "
                                f"config expects {cfg.n_features}")
        return stream
    return synthesize_dataset(per_class_windows=max(1, FRAMES_PER_STREAM // 13 // cfg.window),
                              n_features=cfg.n_features, window=cfg.window, seed=cfg.seed,
                              outlier_fraction=0.01)


def make_reducer(name: str, k: int, seed: int):
    if name == "PCA":
        return PCA(n_components=k)
    return Autoencoder(n_components=k, epochs=20, learning_rate=0.02, seed=seed)


@lru_cache(maxsize=32)
def _bootstrap(reduction_model, k, window, n_features, seed, dataset, max_epochs, patience,
               calibration_fraction):
    cfg = ExperimentConfig(reduction_model=reduction_model, window=window,
                           n_features=n_features, seed=seed, dataset=dataset,
                           max_epochs=max_epochs, patience=patience)
    stream = load_stream(cfg)
    scaler = ZScoreScaler().fit(stream.features)
    scaled = scaler.transform(stream.features)
    reducer = make_reducer(reduction_model, k, seed).fit(scaled)
    n_cal = max(2, int(len(scaled) * calibration_fraction))
    outlier = IsolationForest(max_samples=min(256, n_cal), seed=seed).fit(scaled[:n_cal])
    X, y = window_arrays(reducer.transform(scaled), stream.labels, window)
    X_tr, y_tr, X_val, y_val = split_80_20(X, y)
    train_cfg = TrainConfig(max_epochs=max_epochs, patience=patience, seed=seed)
    model, _ = train_classifier(X_tr, y_tr, X_val, y_val, train_cfg)
    accuracy = evaluate(model, X_val, y_val).accuracy
    artifact = ModelArtifact(1, window, scaler, reducer, compress_model(model, 1), accuracy)
    return Bootstrap(stream, scaler, reducer, outlier, artifact)


def bootstrap(cfg: ExperimentConfig) -> Bootstrap:
    """Version-1 models fitted on the historical stream (cached per configuration)."""
    return _bootstrap(cfg.reduction_model, cfg.k, cfg.window, cfg.n_features, cfg.seed,
                      cfg.dataset, cfg.max_epochs, cfg.patience, cfg.calibration_fraction)


# -- small actors ------------------------------------------------------------------------

class Gateway:
    """Access router of the cloud-only deployment: relays, never computes."""

    def __init__(self, broker: Broker, device_ids):
        self.broker = broker
        broker.register_handler("gateway/sensor", self._on_sensor)
        broker.register_handler("gateway/query", self._on_query)
        broker.register_handler("gateway/response", self._on_response)
        for device_id in device_ids:
            broker.subscribe(sensor_topic(device_id), "gateway/sensor")
        broker.subscribe(QUERY_TOPIC, "gateway/query")
        broker.subscribe(CLOUD_RESPONSE_TOPIC, "gateway/response")

    def _relay(self, envelope: Envelope, topic: str, link: LinkClass, direction: Direction):
        self.broker.publish(Envelope(topic, "gateway", self.broker.scheduler.now,
                                     envelope.payload, envelope.kind), link, direction)

    def _on_sensor(self, envelope):
        device_id = envelope.publisher
        self._relay(envelope, relayed_sensor_topic(device_id), LinkClass.EDGE_CLOUD, Direction.UP)

    def _on_query(self, envelope):
        self._relay(envelope, cloud_query_topic(), LinkClass.USER_CLOUD, Direction.UP)

    def _on_response(self, envelope):
        self._relay(envelope, response_topic(envelope.open().user_id), LinkClass.USER_EDGE,
                    Direction.DOWN)


class User:
    """Queries one device at an average rate of one per ``period`` and records latency.

    Gaps are exponential (a Poisson stream): fixed one-second spacing would
    lock each user to one phase of the equally periodic sensor traffic.
    """

    def __init__(self, user_id: str, device_id: str, broker: Broker, offset: int, until: int,
                 period: int = seconds(1), seed: int = 0):
        self.rng = np.random.default_rng(seed)
        self.user_id = user_id
        self.device_id = device_id
        self.broker = broker
        self.period = period
        self.until = until
        self.pending: dict = {}
        self.latencies: list = []
        self.answers: list = []
        self._next_id = 0
        handler = f"user:{user_id}"
        broker.register_handler(handler, self._on_response)
        broker.subscribe(response_topic(user_id), handler)
        if offset <= until:
            broker.scheduler.at(offset, self._issue)

    def _issue(self):
        now = self.broker.scheduler.now
        query = UserQuery(self._next_id, self.user_id, self.device_id, now)
        self.pending[query.query_id] = now
        self._next_id += 1
        self.broker.publish(Envelope.wrap(QUERY_TOPIC, self.user_id, now, query),
                            LinkClass.USER_EDGE, Direction.UP)
        nxt = now + max(1, int(self.rng.exponential(self.period)))
        if nxt <= self.until:
            self.broker.scheduler.at(nxt, self._issue)

    def _on_response(self, envelope):
        response = envelope.open()
        issued = self.pending.pop(response.query_id, None)
        if issued is not None:
            self.latencies.append(self.broker.scheduler.now - issued)
            self.answers.append(response)


# -- wiring ---------------------------------------------------------------------------------

@dataclass
class Scenario:
    cfg: ExperimentConfig
    seed: int
    scheduler: Scheduler
    broker: Broker
    devices: list
    users: list
    edge: Optional[EdgeNode]
    cloud: CloudNode
    gateway: Optional[Gateway]
    boot: Bootstrap
    until: int
    extra: dict = field(default_factory=dict)

    def run(self, drain: int = DRAIN) -> "Scenario":
        """Run the workload to the horizon, then let in-flight work land.

        Sources stop at the horizon and the edge makes one last reduction
        pass shortly after, so the drain only completes work already under way.
        """
        self.scheduler.run_until(self.until + drain)
        return self

    def state(self) -> RunState:
        latencies = [lat for u in self.users for lat in u.latencies]
        return RunState(self.cfg.variant, self.cfg.reduction_model, self.cfg.reduction_rate,
                        self.cfg.window, self.cfg.sensors, self.cfg.users, self.cfg.seed,
                        self.until, self.broker.ledger, latencies,
                        [d.units for d in self.devices],
                        None if self.edge is None else self.edge.units, self.cloud.units)


def wire_variant(cfg: ExperimentConfig, seed: Optional[int] = None, trace: bool = False
                 ) -> Scenario:
    """Place pipeline stages on tiers for ``cfg.variant`` and schedule the workload.

    Cloud: everything in the cloud behind a relaying gateway.
    EdgeCloud: validation and reduction at the edge; inference and training in the cloud.
    Edge: validation, reduction and inference at the edge; training in the cloud.
    InTec: inference on the devices; validation and reduction at the edge;
    training in the cloud.
    """
    cfg.validate()
    seed = cfg.seed if seed is None else seed
    boot = bootstrap(cfg)
    rng = np.random.default_rng(seed)
    until = seconds(cfg.duration)
    scheduler = Scheduler()
    broker = Broker(scheduler, cfg.link_models(), TrafficLedger(), trace=trace)
    service = cfg.service_times()
    variant = cfg.variant

    records = [DeviceRecord(f"s{i:03d}", model_version=1, firmware_version=1)
               for i in range(cfg.sensors)]
    registry = {r.device_id: r for r in records}
    on_device = variant == "InTec"
    devices = [Device(r, cfg.n_features, cfg.window, boot.artifact if on_device else None,
                      infer=on_device, broker=broker) for r in records]

    edge = gateway = None
    analysis = AnalysisCore(boot.outlier, boot.reducer,
                            None if on_device else boot.scaler, cfg.drop_rate)
    if variant == "Cloud":
        gateway = Gateway(broker, registry)
    else:
        edge = EdgeNode(EDGE_ID, broker, analysis, registry, rows_scaled=on_device,
                        service=service,
                        reduction_interval=(0 if variant == "EdgeCloud"
                                            else seconds(cfg.reduction_interval)),
                        infer_artifact=boot.artifact if variant == "Edge" else None,
                        forward_inference=variant == "EdgeCloud",
                        serve_queries=variant in ("Edge", "InTec"),
                        stagger=ms(cfg.stagger_ms), until=until,
                        flush_at=until + FLUSH_DELAY)

    train_cfg = TrainConfig(max_epochs=cfg.max_epochs, patience=cfg.patience, seed=seed)
    cloud = CloudNode(
        broker, boot.artifact, records, EDGE_ID, train_cfg, boot.scaler, boot.reducer,
        cfg.window,
        firmware_mode={"InTec": "devices", "Edge": "edge"}.get(variant, "local"),
        infer_reduced=variant == "EdgeCloud",
        analysis=analysis if variant == "Cloud" else None,
        query_link={"Cloud": LinkClass.USER_CLOUD,
                    "EdgeCloud": LinkClass.EDGE_CLOUD}.get(variant),
        service=service, training_period=seconds(cfg.training_period),
        epoch_cost=seconds(cfg.epoch_cost), reduction_interval=seconds(cfg.reduction_interval),
        until=until, min_windows=cfg.min_windows, accuracy_floor=cfg.accuracy_floor)

    # workload: device i starts i frames late and at a random window of the stream
    stream = boot.stream
    n_windows = max(1, len(stream) // cfg.window)
    frame = int(round(1e9 / cfg.sampling_hz))
    for i, device in enumerate(devices):
        start = int(rng.integers(n_windows)) * cfg.window
        offset = i * frame
        device.start_replay(stream.features, stream.labels, cfg.sampling_hz, until,
                            offset=offset, start_index=start)

    users = []
    if cfg.sensors:
        for j in range(cfg.users):
            offset = int(rng.integers(seconds(1)))
            users.append(User(f"u{j:03d}", records[j % cfg.sensors].device_id, broker,
                              offset, until, seed=seed * 7919 + j))

    return Scenario(cfg, seed, scheduler, broker, devices, users, edge, cloud, gateway,
                    boot, until)


def run_once(cfg: ExperimentConfig, seed: Optional[int] = None,
             energy: Optional[EnergyModel] = None) -> ResultRow:
    scenario = wire_variant(cfg, seed).run()
    return export_metrics(scenario.state(), energy or EnergyModel())


def repeat_seeds(cfg: ExperimentConfig) -> list[int]:
    return [cfg.seed * 1000 + r for r in range(cfg.repeats)]


def run_experiment(cfg: ExperimentConfig, energy: Optional[EnergyModel] = None) -> ResultRow:
    """Run ``cfg.repeats`` seeded repetitions and average every metric."""
    rows = [run_once(cfg, s, energy) for s in repeat_seeds(cfg)]
    return average_rows(rows, cfg.seed)


def average_rows(rows: list[ResultRow], seed: int) -> ResultRow:
    first = rows[0]
    lat = [r.latency_ms for r in rows if r.latency_ms is not None]

    def mean(name):
        return float(np.mean([getattr(r, name) for r in rows]))

    extra = Counter()
    for r in rows:
        extra.update(r.extra)
    return ResultRow(first.variant, first.reduction_model, first.reduction_rate, first.window,
                     first.sensors, first.users, float(np.mean(lat)) if lat else None,
                     mean("traffic_mb"), mean("throughput_mbps"), mean("sensor_mw"),
                     mean("edge_mw"), mean("cloud_mw"), seed,
                     extra={k: v / len(rows) for k, v in extra.items()})
