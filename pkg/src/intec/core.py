"""Domain values, topic names, virtual time and the binary wire codec.

Every value that crosses a simulated link is encoded with :func:`serialize`
into a canonical little-endian, length-prefixed byte layout (see
``docs/wire.md``).  The encoded length is what the traffic ledger counts, so
the codec must be a pure function of the value.
"""
from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Union

import numpy as np

from intec.errors import FormatError

HEADER_SIZE = 64
N_CLASSES = 13
DEFAULT_FEATURES = 21
NO_LABEL = -1

# -- virtual time -----------------------------------------------------------
# Instants and durations are integer nanoseconds since simulation start.

NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000


def ms(value: float) -> int:
    return int(round(value * NS_PER_MS))


def seconds(value: float) -> int:
    return int(round(value * NS_PER_S))


def to_ms(ns: int) -> float:
    return ns / NS_PER_MS


def to_seconds(ns: int) -> float:
    return ns / NS_PER_S


# -- topics -----------------------------------------------------------------

QUERY_TOPIC = "edge/query"


def sensor_topic(device_id: str) -> str:
    return f"things/{device_id}/data"


def relayed_sensor_topic(device_id: str) -> str:
    """Sensor data relayed upstream by an access gateway."""
    return f"cloud/things/{device_id}/data"


def update_topic(device_id: str) -> str:
    return f"things/{device_id}/update"


def cloud_reduced_topic(edge_id: str) -> str:
    return f"cloud/reduced/{edge_id}"


def cloud_infer_topic(edge_id: str) -> str:
    return f"cloud/infer/{edge_id}"


def cloud_query_topic() -> str:
    return "cloud/query"


CLOUD_RESPONSE_TOPIC = "cloud/response"


def firmware_topic(edge_id: str) -> str:
    return f"edge/{edge_id}/firmware"


def response_topic(user_id: str) -> str:
    return f"users/{user_id}/response"


# -- domain values ------------------------------------------------------------


class PayloadKind(enum.Enum):
    SENSOR_DATA = "SensorData"
    REDUCED_DATA = "ReducedData"
    FIRMWARE = "Firmware"
    USER_QUERY = "UserQuery"
    USER_RESPONSE = "UserResponse"


class Validation(enum.IntEnum):
    UNCHECKED = 0
    CHECKED = 1


def _arrays_equal(a, b) -> bool:
    return a.shape == b.shape and a.dtype == b.dtype and np.array_equal(a, b)


@dataclass(frozen=True, eq=False)
class SensorFrame:
    device_id: str
    t: int
    features: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 1:
            raise ValueError("features must be a 1-D vector")
        object.__setattr__(self, "features", feats)
        if self.label is not None and not 0 <= self.label < N_CLASSES:
            raise ValueError(f"label {self.label} outside 0..{N_CLASSES - 1}")

    def __eq__(self, other):
        if not isinstance(other, SensorFrame):
            return NotImplemented
        return (self.device_id == other.device_id and self.t == other.t
                and self.label == other.label
                and _arrays_equal(self.features, other.features))


@dataclass(frozen=True, eq=False)
class WindowBatch:
    """``window_size`` consecutive rows from one device.

    ``label`` is the ground-truth window label carried by the replayed
    stream; ``predicted`` is the on-device inference tag (``NO_LABEL`` when
    the device does not run a model).
    """

    device_id: str
    seq: int
    created_at: int
    rows: np.ndarray
    label: int = NO_LABEL
    predicted: int = NO_LABEL
    model_version: int = 0
    validation: Validation = Validation.UNCHECKED
    outlier_model_name: str = ""

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] == 0:
            raise ValueError("rows must be a non-empty 2-D matrix")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "validation", Validation(self.validation))

    @property
    def window_size(self) -> int:
        return self.rows.shape[0]

    @property
    def width(self) -> int:
        return self.rows.shape[1]

    def checked(self, outlier_model_name: str) -> "WindowBatch":
        return replace(self, validation=Validation.CHECKED,
                       outlier_model_name=outlier_model_name)

    def __eq__(self, other):
        if not isinstance(other, WindowBatch):
            return NotImplemented
        return (self.device_id, self.seq, self.created_at, self.label,
                self.predicted, self.model_version, self.validation,
                self.outlier_model_name) == (
            other.device_id, other.seq, other.created_at, other.label,
            other.predicted, other.model_version, other.validation,
            other.outlier_model_name) and _arrays_equal(self.rows, other.rows)


@dataclass(frozen=True, eq=False)
class ReducedBatchMessage:
    """Reduced rows shipped from an analysis core to the cloud.

    ``rows`` is ``(n, k)`` and ``labels`` holds one class id per row.
    """

    message_id: int
    edge_id: str
    reduction_model: str
    window_size: int
    date: int
    rows: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim == 1 and rows.size == 0:
            rows = rows.reshape(0, 0)
        if rows.ndim != 2:
            raise ValueError("rows must be 2-D")
        labels = np.asarray(self.labels, dtype=np.int16).reshape(-1)
        if labels.shape[0] != rows.shape[0]:
            raise ValueError("one label per reduced row is required")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "labels", labels)

    @property
    def k(self) -> int:
        return self.rows.shape[1]

    def __len__(self):
        return self.rows.shape[0]

    def entries(self) -> Iterator[tuple[np.ndarray, int]]:
        for row, label in zip(self.rows, self.labels):
            yield row, int(label)

    def __eq__(self, other):
        if not isinstance(other, ReducedBatchMessage):
            return NotImplemented
        return (self.message_id, self.edge_id, self.reduction_model,
                self.window_size, self.date) == (
            other.message_id, other.edge_id, other.reduction_model,
            other.window_size, other.date) and _arrays_equal(
            self.rows, other.rows) and _arrays_equal(self.labels, other.labels)


@dataclass(frozen=True)
class FirmwarePackage:
    device_model: str
    version: int
    targets: tuple[str, ...]
    artifact: bytes


@dataclass(frozen=True)
class UserQuery:
    query_id: int
    user_id: str
    device_id: str
    issued_at: int


@dataclass(frozen=True)
class UserResponse:
    query_id: int
    user_id: str
    device_id: str
    label: int
    model_version: int
    served_by: str
    issued_at: int


@dataclass(frozen=True)
class DeviceRecord:
    device_id: str
    device_model: str = "rpi3b"
    device_addr: str = ""
    topic_update: str = ""
    firmware_version: int = 0
    model_version: int = 0

    def __post_init__(self):
        if not self.topic_update:
            object.__setattr__(self, "topic_update", update_topic(self.device_id))
        if self.firmware_version < 0 or self.model_version < 0:
            raise ValueError("versions are non-negative")

    def upgraded(self, model_version: int) -> "DeviceRecord":
        if model_version <= self.model_version:
            raise ValueError("model version must increase")
        return replace(self, model_version=model_version,
                       firmware_version=self.firmware_version + 1)


Payload = Union[SensorFrame, WindowBatch, ReducedBatchMessage, FirmwarePackage,
                UserQuery, UserResponse]

_KIND_OF = {
    SensorFrame: PayloadKind.SENSOR_DATA,
    WindowBatch: PayloadKind.SENSOR_DATA,
    ReducedBatchMessage: PayloadKind.REDUCED_DATA,
    FirmwarePackage: PayloadKind.FIRMWARE,
    UserQuery: PayloadKind.USER_QUERY,
    UserResponse: PayloadKind.USER_RESPONSE,
}


def kind_of(value: Payload) -> PayloadKind:
    try:
        return _KIND_OF[type(value)]
    except KeyError:
        raise TypeError(f"not a payload type: {type(value).__name__}") from None


@dataclass(frozen=True)
class Envelope:
    topic: str
    publisher: str
    published_at: int
    payload: bytes
    kind: PayloadKind

    @property
    def byte_size(self) -> int:
        return HEADER_SIZE + len(self.payload)

    @classmethod
    def wrap(cls, topic: str, publisher: str, published_at: int,
             value: Payload) -> "Envelope":
        return cls(topic, publisher, published_at, serialize(value), kind_of(value))

    def open(self) -> Payload:
        return deserialize(self.payload)


def byte_size(envelope: Envelope) -> int:
    return envelope.byte_size


@dataclass
class ResultRow:
    variant: str
    reduction_model: str
    reduction_rate: float
    window: int
    sensors: int
    users: int
    latency_ms: Optional[float]
    traffic_mb: float
    throughput_mbps: float
    sensor_mw: float
    edge_mw: float
    cloud_mw: float
    seed: int
    extra: dict = field(default_factory=dict, compare=False, repr=False)


CSV_COLUMNS = ("variant", "reduction_model", "reduction_rate", "window", "sensors",
               "users", "latency_ms", "traffic_mb", "throughput_mbps", "sensor_mw",
               "edge_mw", "cloud_mw", "seed")


# -- wire codec ---------------------------------------------------------------

_TAG_FRAME = 1
_TAG_WINDOW = 2
_TAG_REDUCED = 3
_TAG_FIRMWARE = 4
_TAG_QUERY = 5
_TAG_RESPONSE = 6


class _Writer:
    def __init__(self):
        self.buf = bytearray()

    def pack(self, fmt: str, *values):
        self.buf += struct.pack("<" + fmt, *values)

    def string(self, s: str):
        raw = s.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError("string too long for wire format")
        self.pack("H", len(raw))
        self.buf += raw

    def blob(self, raw: bytes):
        self.pack("I", len(raw))
        self.buf += raw

    def floats(self, arr: np.ndarray):
        self.buf += np.ascontiguousarray(arr, dtype="<f8").tobytes()


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(bytes(data))
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if n < 0 or self.pos + n > len(self.data):
            raise FormatError(f"truncated payload at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        size = struct.calcsize("<" + fmt)
        values = struct.unpack("<" + fmt, self.take(size))
        return values if len(values) > 1 else values[0]

    def string(self) -> str:
        n = self.unpack("H")
        try:
            return bytes(self.take(n)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("invalid utf-8 string") from exc

    def blob(self) -> bytes:
        return bytes(self.take(self.unpack("I")))

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)

    def done(self):
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} trailing bytes")


def _label_out(label: Optional[int]) -> int:
    return NO_LABEL if label is None else int(label)


def serialize(value: Payload) -> bytes:
    """Encode a payload value into its canonical byte form."""
    w = _Writer()
    if isinstance(value, SensorFrame):
        w.pack("B", _TAG_FRAME)
        w.string(value.device_id)
        w.pack("Qh", value.t, _label_out(value.label))
        w.pack("H", value.features.shape[0])
        w.floats(value.features)
    elif isinstance(value, WindowBatch):
        w.pack("B", _TAG_WINDOW)
        w.string(value.device_id)
        w.pack("IQHHhhIB", value.seq, value.created_at, value.window_size,
               value.width, value.label, value.predicted, value.model_version,
               int(value.validation))
        w.string(value.outlier_model_name)
        w.floats(value.rows)
    elif isinstance(value, ReducedBatchMessage):
        w.pack("B", _TAG_REDUCED)
        w.pack("Q", value.message_id)
        w.string(value.edge_id)
        w.string(value.reduction_model)
        w.pack("HQHI", value.window_size, value.date, value.k, len(value))
        # row-interleaved: k float64 values then an int16 label per row
        rec = np.empty(len(value), dtype=[("x", "<f8", (value.k,)), ("y", "<i2")])
        rec["x"] = value.rows
        rec["y"] = value.labels
        w.buf += rec.tobytes()
    elif isinstance(value, FirmwarePackage):
        w.pack("B", _TAG_FIRMWARE)
        w.string(value.device_model)
        w.pack("IH", value.version, len(value.targets))
        for target in value.targets:
            w.string(target)
        w.blob(value.artifact)
    elif isinstance(value, UserQuery):
        w.pack("B", _TAG_QUERY)
        w.pack("Q", value.query_id)
        w.string(value.user_id)
        w.string(value.device_id)
        w.pack("Q", value.issued_at)
    elif isinstance(value, UserResponse):
        w.pack("B", _TAG_RESPONSE)
        w.pack("Q", value.query_id)
        w.string(value.user_id)
        w.string(value.device_id)
        w.pack("hI", value.label, value.model_version)
        w.string(value.served_by)
        w.pack("Q", value.issued_at)
    else:
        raise TypeError(f"cannot serialize {type(value).__name__}")
    return bytes(w.buf)


def deserialize(data: bytes) -> Payload:
    """Inverse of :func:`serialize`; raises :class:`FormatError` on bad input."""
    r = _Reader(data)
    tag = r.unpack("B")
    try:
        if tag == _TAG_FRAME:
            device_id = r.string()
            t, label = r.unpack("Qh")
            n = r.unpack("H")
            value = SensorFrame(device_id, t, r.floats(n),
                                None if label == NO_LABEL else label)
        elif tag == _TAG_WINDOW:
            device_id = r.string()
            (seq, created_at, n_rows, width, label, predicted, version,
             validation) = r.unpack("IQHHhhIB")
            name = r.string()
            rows = r.floats(n_rows * width).reshape(n_rows, width)
            value = WindowBatch(device_id, seq, created_at, rows, label, predicted,
                                version, Validation(validation), name)
        elif tag == _TAG_REDUCED:
            message_id = r.unpack("Q")
            edge_id = r.string()
            reduction = r.string()
            window_size, date, k, n = r.unpack("HQHI")
            dtype = np.dtype([("x", "<f8", (k,)), ("y", "<i2")])
            rec = np.frombuffer(r.take(dtype.itemsize * n), dtype=dtype)
            value = ReducedBatchMessage(message_id, edge_id, reduction, window_size,
                                        date, rec["x"].reshape(n, k).astype(np.float64),
                                        rec["y"].astype(np.int16))
        elif tag == _TAG_FIRMWARE:
            model = r.string()
            version, n_targets = r.unpack("IH")
            targets = tuple(r.string() for _ in range(n_targets))
            value = FirmwarePackage(model, version, targets, r.blob())
        elif tag == _TAG_QUERY:
            query_id = r.unpack("Q")
            user_id = r.string()
            device_id = r.string()
            value = UserQuery(query_id, user_id, device_id, r.unpack("Q"))
        elif tag == _TAG_RESPONSE:
            query_id = r.unpack("Q")
            user_id = r.string()
            device_id = r.string()
            label, version = r.unpack("hI")
            served_by = r.string()
            value = UserResponse(query_id, user_id, device_id, label, version,
                                 served_by, r.unpack("Q"))
        else:
            raise FormatError(f"unknown payload tag {tag}")
    except ValueError as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(str(exc)) from exc
    r.done()
    return value


def to_text(value: Payload) -> str:
    """Human-readable JSON rendering for debugging; not used for accounting."""

    def plain(v):
        if isinstance(v, np.ndarray):
            return v.tolist()
        if isinstance(v, bytes):
            return {"bytes": len(v)}
        if isinstance(v, enum.Enum):
            return v.name
        if isinstance(v, tuple):
            return list(v)
        return v

    doc = {"type": type(value).__name__}
    doc.update({k: plain(v) for k, v in vars(value).items()})
    return json.dumps(doc, sort_keys=True, indent=2)
