"""Discrete-event scheduler and topic broker with link timing and traffic ledger.

Everything runs on one virtual clock (integer nanoseconds).  Events fire in
``(time, insertion sequence)`` order, which makes a run a pure function of
its inputs.
"""
from __future__ import annotations

import enum
import hashlib
import heapq
import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Optional

from intec.core import NS_PER_S, Envelope, ms
from intec.errors import DuplicateSubscription, NoRoute


class Scheduler:
    def __init__(self):
        self.now = 0
        self._queue = []
        self._seq = 0
        self.processed = 0

    def at(self, when: int, fn: Callable, *args) -> None:
        if when < self.now:
            raise ValueError(f"cannot schedule in the past ({when} < {self.now})")
        heapq.heappush(self._queue, (when, self._seq, fn, args))
        self._seq += 1

    def after(self, delay: int, fn: Callable, *args) -> None:
        self.at(self.now + delay, fn, *args)

    def __len__(self):
        return len(self._queue)

    def peek(self) -> Optional[int]:
        return self._queue[0][0] if self._queue else None

    def step(self) -> int:
        if not self._queue:
            return 0
        when, _, fn, args = heapq.heappop(self._queue)
        self.now = when
        fn(*args)
        self.processed += 1
        return 1

    def run_until(self, t: int) -> int:
        """Process every event with time <= ``t``; the clock ends at ``t``."""
        count = 0
        queue = self._queue
        while queue and queue[0][0] <= t:
            when, _, fn, args = heapq.heappop(queue)
            self.now = when
            fn(*args)
            count += 1
        self.processed += count
        self.now = max(self.now, t)
        return count


class ProcessingQueue:
    """Single FIFO server: work items run back to back in submission order."""

    def __init__(self, scheduler: Scheduler):
        self.scheduler = scheduler
        self.busy_until = 0
        self.busy_time = 0

    def submit(self, duration: int, fn: Callable, *args) -> int:
        start = max(self.scheduler.now, self.busy_until)
        self.busy_until = start + duration
        self.busy_time += duration
        self.scheduler.at(self.busy_until, fn, *args)
        return self.busy_until


@dataclass(frozen=True)
class ServiceTimes:
    """Virtual processing time charged on a tier's queue per unit of work (ms)."""

    gate_ms_per_row: float = 0.04       # outlier scoring, 1 ms for a 25-row window
    inference_ms_per_row: float = 0.08  # 2 ms for a 25-row window
    reduction_ms: float = 0.1   # per reduced window
    query_ms: float = 2.0
    ingest_ms: float = 0.05     # per received reduced message

    def gate(self, rows: int) -> float:
        return self.gate_ms_per_row * rows

    def inference(self, rows: int) -> float:
        return self.inference_ms_per_row * rows


class LinkClass(enum.Enum):
    SENSOR_EDGE = "SensorEdge"
    EDGE_CLOUD = "EdgeCloud"
    USER_EDGE = "UserEdge"
    USER_CLOUD = "UserCloud"


class Direction(enum.Enum):
    UP = "up"      # towards the cloud
    DOWN = "down"  # towards devices / users


@dataclass(frozen=True)
class LinkModel:
    link_class: LinkClass
    delay_ms: float
    bandwidth_mbps: float = 100.0

    def __post_init__(self):
        if self.delay_ms < 0:
            raise ValueError("link delay must be non-negative")
        if self.bandwidth_mbps <= 0:
            raise ValueError("link bandwidth must be positive")

    def transit_ns(self, n_bytes: int) -> int:
        """Propagation delay plus serialisation time of ``n_bytes``."""
        tx_ns = n_bytes * 8 * 1000 / self.bandwidth_mbps  # bits / (Mbit/s) in ns
        return ms(self.delay_ms) + int(round(tx_ns))


@dataclass
class TrafficLedger:
    """Delivered bytes per (link, direction), with 1-second buckets for throughput."""

    bucket_ns: int = NS_PER_S
    bytes: dict = field(default_factory=lambda: defaultdict(int))
    messages: dict = field(default_factory=lambda: defaultdict(int))
    series: dict = field(default_factory=lambda: defaultdict(int))
    topic_bytes: dict = field(default_factory=lambda: defaultdict(int))
    published_bytes: int = 0

    def credit(self, link: LinkClass, direction: Direction, n_bytes: int, t: int,
               topic: str = ""):
        self.bytes[(link, direction)] += n_bytes
        self.topic_bytes[topic] += n_bytes
        self.messages[(link, direction)] += 1
        self.series[t // self.bucket_ns] += n_bytes

    @property
    def delivered_bytes(self) -> int:
        return sum(self.bytes.values())

    @property
    def in_flight_bytes(self) -> int:
        return self.published_bytes - self.delivered_bytes

    def link_bytes(self, link: LinkClass) -> int:
        return sum(v for (lk, _), v in self.bytes.items() if lk is link)

    def bytes_with_prefix(self, prefix: str) -> int:
        return sum(v for t, v in self.topic_bytes.items() if t.startswith(prefix))

    def bytes_between(self, start: int, end: int) -> int:
        """Bytes delivered in buckets covering ``[start, end)``."""
        lo, hi = start // self.bucket_ns, (end - 1) // self.bucket_ns
        return sum(v for b, v in self.series.items() if lo <= b <= hi)


def throughput(ledger: TrafficLedger, window: int, start: int = 0) -> float:
    """Megabits per second delivered over ``window`` nanoseconds from ``start``."""
    if window <= 0:
        raise ValueError("window must be positive")
    n_bytes = ledger.bytes_between(start, start + window)
    return n_bytes * 8 / (window / NS_PER_S) / 1e6


@dataclass(frozen=True)
class Subscription:
    topic: str
    handler_id: str


@dataclass
class DeliveryReceipt:
    envelope: Envelope
    link: LinkClass
    deliveries: list  # (handler_id or None, deliver_at)


@dataclass(frozen=True)
class TraceRecord:
    time: int
    topic: str
    publisher: str
    bytes: int
    link: str


class Broker:
    """Topic router over modelled links.

    Each subscriber delivery is one link traversal and is credited to the
    ledger when it lands.  A publish with no subscribers is still transmitted
    (and credited) once.  Deliveries from one publisher on one topic never
    overtake each other.
    """

    def __init__(self, scheduler: Scheduler, links: dict, ledger: Optional[TrafficLedger] = None,
                 trace: bool = False):
        self.scheduler = scheduler
        self.links = dict(links)
        self.ledger = ledger if ledger is not None else TrafficLedger()
        self._handlers: dict[str, Callable] = {}
        self._subs: dict[str, list[str]] = defaultdict(list)
        self._last_delivery: dict = {}
        self.trace: Optional[list] = [] if trace else None

    def register_handler(self, handler_id: str, fn: Callable[[Envelope], None]):
        self._handlers[handler_id] = fn

    def subscribe(self, topic: str, handler_id: str) -> Subscription:
        if handler_id not in self._handlers:
            raise KeyError(f"handler {handler_id!r} is not registered")
        if handler_id in self._subs[topic]:
            raise DuplicateSubscription(f"{handler_id} already subscribed to {topic}")
        self._subs[topic].append(handler_id)
        return Subscription(topic, handler_id)

    def unsubscribe(self, sub: Subscription):
        self._subs[sub.topic].remove(sub.handler_id)

    def subscribers(self, topic: str) -> list:
        return list(self._subs.get(topic, ()))

    def publish(self, envelope: Envelope, link: LinkClass,
                direction: Direction = Direction.UP) -> DeliveryReceipt:
        try:
            model = self.links[link]
        except KeyError:
            raise NoRoute(f"no {link.value} link in this scenario") from None
        size = envelope.byte_size
        arrive = self.scheduler.now + model.transit_ns(size)
        targets = self._subs.get(envelope.topic) or [None]
        deliveries = []
        for handler_id in targets:
            key = (envelope.publisher, envelope.topic, handler_id)
            when = max(arrive, self._last_delivery.get(key, 0))
            self._last_delivery[key] = when
            self.ledger.published_bytes += size
            self.scheduler.at(when, self._deliver, envelope, link, direction, handler_id)
            deliveries.append((handler_id, when))
        if self.trace is not None:
            self.trace.append(TraceRecord(self.scheduler.now, envelope.topic,
                                          envelope.publisher, size, link.value))
        return DeliveryReceipt(envelope, link, deliveries)

    def _deliver(self, envelope, link, direction, handler_id):
        self.ledger.credit(link, direction, envelope.byte_size, self.scheduler.now,
                           envelope.topic)
        if handler_id is not None:
            handler = self._handlers.get(handler_id)
            if handler is not None:
                handler(envelope)

    def export_trace(self, path) -> None:
        """Write the publish trace as line-delimited JSON records."""
        with open(path, "w") as fh:
            for rec in self.trace or ():
                fh.write(json.dumps(rec.__dict__, sort_keys=True) + "\n")

    def trace_digest(self) -> str:
        h = hashlib.sha256()
        for rec in self.trace or ():
            h.update(f"{rec.time}|{rec.topic}|{rec.publisher}|{rec.bytes}|{rec.link}\n".encode())
        return h.hexdigest()
