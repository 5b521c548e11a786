"""Edge tier: outlier gate, time-indexed store, periodic reduction, queries, firmware fan-out."""
from __future__ import annotations

import bisect
from collections import Counter
from dataclasses import dataclass
from typing import Optional

import numpy as np

from intec.core import (CLOUD_RESPONSE_TOPIC, NO_LABEL, QUERY_TOPIC, DeviceRecord,
                        Envelope, FirmwarePackage, ReducedBatchMessage, UserQuery, UserResponse, Validation,
                        WindowBatch, cloud_infer_topic, cloud_query_topic,
                        cloud_reduced_topic, firmware_topic, ms, response_topic,
                        sensor_topic, serialize)
from intec.errors import ShapeMismatch, StaleVersion, UnknownDevice
from intec.model.artifact import ModelArtifact
from intec.numerics.iforest import IsolationForest
from intec.transport import (Broker, Direction, LinkClass, ProcessingQueue,
                             ServiceTimes)

DEFAULT_DROP_RATE = 80.0


# -- outlier gate ---------------------------------------------------------------

def gate_decision(valid_count: int, window: int, drop_rate: float) -> bool:
    """Store iff ``valid_count * 100 / window >= drop_rate`` (exact arithmetic)."""
    return valid_count * 100 >= drop_rate * window


@dataclass(frozen=True)
class GateResult:
    stored: bool
    valid_count: int
    percent: float
    batch: WindowBatch


def outlier_gate(batch: WindowBatch, model: IsolationForest,
                 drop_rate: float = DEFAULT_DROP_RATE, threshold: Optional[float] = None,
                 model_name: str = "IsolationForest") -> GateResult:
    """Count rows the outlier model accepts and keep the window if enough pass.

    A kept window comes back marked ``Checked`` with ``model_name`` recorded.
    """
    if batch.width != model.n_features_in_:
        raise ShapeMismatch(
            f"window width {batch.width} != outlier model width {model.n_features_in_}")
    cut = model.threshold if threshold is None else threshold
    valid = int(np.count_nonzero(model.score_samples(batch.rows) < cut))
    stored = gate_decision(valid, batch.window_size, drop_rate)
    out = batch.checked(model_name) if stored else batch
    return GateResult(stored, valid, valid * 100.0 / batch.window_size, out)


# -- store ----------------------------------------------------------------------

class EdgeStore:
    """Append-only log of checked windows keyed by insertion instant."""

    def __init__(self):
        self._times: list[int] = []
        self._batches: list[WindowBatch] = []
        self.high_water_mark = 0  # index of the first batch not yet reduced

    def __len__(self):
        return len(self._batches)

    def insert(self, batch: WindowBatch, t: int):
        if batch.validation is not Validation.CHECKED:
            raise ValueError("only checked windows may be stored")
        if self._times and t < self._times[-1]:
            raise ValueError("insertion instants must be non-decreasing")
        self._times.append(t)
        self._batches.append(batch)

    def fetch(self, t1: int, t2: int) -> list[WindowBatch]:
        """Batches inserted in ``(t1, t2]``."""
        lo = bisect.bisect_right(self._times, t1)
        hi = bisect.bisect_right(self._times, t2)
        return self._batches[lo:hi]

    @property
    def pending(self) -> int:
        return len(self._batches) - self.high_water_mark

    def fetch_pending(self) -> list[WindowBatch]:
        out = self._batches[self.high_water_mark:]
        self.high_water_mark = len(self._batches)
        return out


def reduction_job(store: EdgeStore, reducer, edge_id: str, now: int,
                  message_id: int = 0, window_size: Optional[int] = None
                  ) -> Optional[ReducedBatchMessage]:
    """Reduce every batch stored since the last run into one message.

    Returns ``None`` (and publishes nothing) when nothing new was stored.
    """
    if store.pending == 0:
        return None
    width = reducer.n_features_in_
    pending = store._batches[store.high_water_mark:]
    for batch in pending:
        if batch.width != width:
            raise ShapeMismatch(f"stored width {batch.width} != reducer width {width}")
    batches = store.fetch_pending()
    rows = reducer.transform(np.vstack([b.rows for b in batches]))
    labels = np.concatenate([np.full(b.window_size, b.label) for b in batches])
    w = window_size if window_size is not None else batches[0].window_size
    return ReducedBatchMessage(message_id, edge_id, reducer.name, w, now, rows, labels)


# -- analysis core ----------------------------------------------------------------

class AnalysisCore:
    """Scale (if rows arrive raw) -> outlier gate -> store; reduce on demand.

    Used by the edge node and, in the cloud-only deployment, by the cloud.
    """

    def __init__(self, outlier_model: IsolationForest, reducer, scaler=None,
                 drop_rate: float = DEFAULT_DROP_RATE, threshold: Optional[float] = None):
        self.outlier_model = outlier_model
        self.reducer = reducer
        self.scaler = scaler
        self.drop_rate = drop_rate
        self.threshold = threshold
        self.store = EdgeStore()
        self.stored = 0
        self.dropped = 0
        self.drop_log: list = []
        self._message_id = 0

    def prepare(self, batch: WindowBatch, rows_scaled: bool) -> WindowBatch:
        if rows_scaled or self.scaler is None:
            return batch
        return WindowBatch(batch.device_id, batch.seq, batch.created_at,
                           self.scaler.transform(batch.rows), batch.label,
                           batch.predicted, batch.model_version)

    def gate(self, batch: WindowBatch, now: int) -> GateResult:
        result = outlier_gate(batch, self.outlier_model, self.drop_rate, self.threshold)
        if result.stored:
            self.store.insert(result.batch, now)
            self.stored += 1
        else:
            self.dropped += 1
            self.drop_log.append((now, batch.device_id, batch.seq, result.valid_count))
        return result

    def reduce(self, edge_id: str, now: int) -> Optional[ReducedBatchMessage]:
        msg = reduction_job(self.store, self.reducer, edge_id, now, self._message_id)
        if msg is not None:
            self._message_id += 1
        return msg


# -- user service ------------------------------------------------------------------

def service_query(query: UserQuery, latest: dict, registry, served_by: str) -> UserResponse:
    """Answer with the most recent inference label known for the queried device."""
    if query.device_id not in registry:
        raise UnknownDevice(query.device_id)
    label, version = latest.get(query.device_id, (NO_LABEL, 0))
    return UserResponse(query.query_id, query.user_id, query.device_id, label, version,
                        served_by, query.issued_at)


# -- firmware distribution ------------------------------------------------------------

def distribute_firmware(envelope: Envelope, registry: dict, stagger: int
                        ) -> list[tuple[int, str, Envelope]]:
    """Fan a firmware envelope out to the registered target devices.

    Returns ``(offset, device_id, envelope)`` with the i-th device scheduled
    ``i * stagger`` after the first, in registry order.
    """
    pkg = envelope.open()
    if not isinstance(pkg, FirmwarePackage):
        raise TypeError("not a firmware envelope")
    targets = set(pkg.targets)
    plan = []
    for device_id, record in registry.items():
        if targets and device_id not in targets:
            continue
        out = Envelope(record.topic_update, envelope.publisher, envelope.published_at,
                       envelope.payload, envelope.kind)
        plan.append((len(plan) * stagger, device_id, out))
    return plan


class EdgeNode:
    """Edge actor.  Which roles it plays is chosen by the deployment variant.

    ``infer``: run the deployed model on every incoming window.
    ``forward_inference``: ship each scaled, reduced window to the cloud model.
    ``serve_queries``: answer user queries locally; otherwise relay them to
    the cloud and relay the answers back.
    """

    def __init__(self, edge_id: str, broker: Broker, analysis: AnalysisCore,
                 registry: dict, rows_scaled: bool, service: ServiceTimes = ServiceTimes(),
                 reduction_interval: int = ms(15 * 60 * 1000), infer_artifact=None,
                 forward_inference: bool = False, serve_queries: bool = True,
                 stagger: int = ms(100), until: Optional[int] = None,
                 flush_at: Optional[int] = None):
        self.edge_id = edge_id
        self.broker = broker
        self.scheduler = broker.scheduler
        self.queue = ProcessingQueue(self.scheduler)
        self.analysis = analysis
        self.registry: dict[str, DeviceRecord] = dict(registry)
        self.rows_scaled = rows_scaled
        self.service = service
        self.reduction_interval = reduction_interval
        self.artifact: Optional[ModelArtifact] = infer_artifact
        self.infer = infer_artifact is not None
        self.forward_inference = forward_inference
        self.serve_queries = serve_queries
        self.stagger = stagger
        self.latest: dict = {}
        self.units = Counter()
        self.published: list[ReducedBatchMessage] = []
        self.firmware_log: list = []
        self._next_firmware_slot = 0
        self.until = until

        hid = self.handler_id
        broker.register_handler(hid + "/sensor", self._on_sensor)
        broker.register_handler(hid + "/query", self._on_query)
        broker.register_handler(hid + "/firmware", self._on_firmware)
        broker.register_handler(hid + "/cloud-response", self._on_cloud_response)
        for device_id in self.registry:
            broker.subscribe(sensor_topic(device_id), hid + "/sensor")
        broker.subscribe(QUERY_TOPIC, hid + "/query")
        broker.subscribe(firmware_topic(edge_id), hid + "/firmware")
        if not serve_queries:
            broker.subscribe(CLOUD_RESPONSE_TOPIC, hid + "/cloud-response")
        if reduction_interval > 0:
            self._schedule_reduction(self.scheduler.now + reduction_interval)
            if flush_at is not None:
                # last pass once windows still in flight at the horizon have landed
                self.scheduler.at(flush_at, self._flush)

    @property
    def handler_id(self) -> str:
        return f"edge:{self.edge_id}"

    # sensor path
    def _on_sensor(self, envelope: Envelope):
        self.units["message"] += 1
        batch = envelope.open()
        cost = self.service.gate(batch.window_size)
        if self.infer:
            cost += self.service.inference(batch.window_size)
        if self.forward_inference:
            cost += self.service.reduction_ms
        self.queue.submit(ms(cost), self._process_window, batch)

    def _process_window(self, batch: WindowBatch):
        now = self.scheduler.now
        if not self.rows_scaled:
            self.units["preprocess"] += batch.window_size
        scaled = self.analysis.prepare(batch, self.rows_scaled)
        self.units["gate"] += 1
        gated = self.analysis.gate(scaled, now)
        if self.infer:
            self.units["inference"] += 1
            self.latest[batch.device_id] = (self.artifact.infer(scaled.rows),
                                            self.artifact.version)
        elif batch.predicted != NO_LABEL:
            self.latest[batch.device_id] = (batch.predicted, batch.model_version)
        if self.forward_inference:
            # one reduced copy per window serves both cloud inference and training
            self.units["reduction"] += 1
            out = gated.batch
            reduced = WindowBatch(out.device_id, out.seq, now,
                                  self.analysis.reducer.transform(scaled.rows), out.label,
                                  validation=out.validation,
                                  outlier_model_name=out.outlier_model_name)
            self._send(Envelope.wrap(cloud_infer_topic(self.edge_id), self.edge_id, now, reduced),
                       LinkClass.EDGE_CLOUD, Direction.UP)

    # reduction path
    def _schedule_reduction(self, when):
        if self.until is None or when <= self.until:
            self.scheduler.at(when, self._reduction_tick)

    def _reduction_tick(self):
        self._flush()
        self._schedule_reduction(self.scheduler.now + self.reduction_interval)

    def _flush(self):
        n = self.analysis.store.pending
        msg = self.analysis.reduce(self.edge_id, self.scheduler.now)
        if msg is not None:
            self.units["reduction"] += n
            self.queue.submit(ms(self.service.reduction_ms * n), self._publish_reduced, msg)

    def _publish_reduced(self, msg: ReducedBatchMessage):
        self.published.append(msg)
        self._send(Envelope.wrap(cloud_reduced_topic(self.edge_id), self.edge_id,
                                 self.scheduler.now, msg), LinkClass.EDGE_CLOUD, Direction.UP)

    # query path
    def _on_query(self, envelope: Envelope):
        self.units["message"] += 1
        if self.serve_queries:
            self.queue.submit(ms(self.service.query_ms), self._answer, envelope.open())
        else:
            self._send(Envelope(cloud_query_topic(), self.edge_id, self.scheduler.now,
                                envelope.payload, envelope.kind),
                       LinkClass.EDGE_CLOUD, Direction.UP)

    def _answer(self, query: UserQuery):
        response = service_query(query, self.latest, self.registry, self.edge_id)
        self._send(Envelope.wrap(response_topic(query.user_id), self.edge_id,
                                 self.scheduler.now, response),
                   LinkClass.USER_EDGE, Direction.DOWN)

    def _on_cloud_response(self, envelope: Envelope):
        self.units["message"] += 1
        response = envelope.open()
        self._send(Envelope(response_topic(response.user_id), self.edge_id,
                            self.scheduler.now, envelope.payload, envelope.kind),
                   LinkClass.USER_EDGE, Direction.DOWN)

    # firmware path
    def _on_firmware(self, envelope: Envelope):
        self.units["message"] += 1
        pkg = envelope.open()
        if pkg.targets == (self.edge_id,):
            self._install(pkg)
            return
        now = self.scheduler.now
        start = max(now, self._next_firmware_slot)
        plan = distribute_firmware(envelope, self.registry, self.stagger)
        for offset, device_id, out in plan:
            self.scheduler.at(start + offset, self._push_firmware, device_id, out)
        if plan:
            self._next_firmware_slot = start + len(plan) * self.stagger

    def _push_firmware(self, device_id: str, envelope: Envelope):
        out = Envelope(envelope.topic, self.edge_id, self.scheduler.now,
                       envelope.payload, envelope.kind)
        self.firmware_log.append((self.scheduler.now, device_id))
        self._send(out, LinkClass.SENSOR_EDGE, Direction.DOWN)

    def _install(self, pkg: FirmwarePackage):
        from intec.things import parse_firmware

        _, artifact = parse_firmware(serialize(pkg))
        if self.artifact is not None and artifact.version <= self.artifact.version:
            raise StaleVersion(f"edge already runs v{self.artifact.version}")
        self.artifact = artifact
        self.firmware_log.append((self.scheduler.now, self.edge_id))

    def _send(self, envelope: Envelope, link: LinkClass, direction: Direction):
        self.units["message"] += 1
        self.broker.publish(envelope, link, direction)

