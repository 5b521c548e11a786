"""Emulated sensor devices: replay, windowing, optional on-device inference, firmware."""
from __future__ import annotations

from collections import Counter
from typing import Optional

import numpy as np

from intec.core import (NO_LABEL, NS_PER_S, DeviceRecord, Envelope, FirmwarePackage,
                        SensorFrame, WindowBatch, deserialize, sensor_topic)
from intec.errors import FormatError, ShapeMismatch, StaleVersion
from intec.model.artifact import ModelArtifact, load_artifact
from intec.numerics.windows import majority_label
from intec.transport import Broker, Direction, LinkClass


def parse_firmware(payload: bytes) -> tuple[FirmwarePackage, ModelArtifact]:
    pkg = deserialize(payload)
    if not isinstance(pkg, FirmwarePackage):
        raise FormatError(f"expected firmware, got {type(pkg).__name__}")
    artifact = load_artifact(pkg.artifact)
    if artifact.version != pkg.version:
        raise FormatError("firmware header version disagrees with artifact")
    return pkg, artifact


class Device:
    """One sensor node.

    Raw frames accumulate in a buffer of at most ``window - 1`` rows.  The
    frame that completes a window triggers, in order: scaling and inference
    (when the device hosts a model), tagging, one publish on the device's
    sensor topic, and a buffer reset.  Scaling the whole window at that
    point means a firmware swap between two ticks never mixes two scalers
    inside one window.
    """

    def __init__(self, record: DeviceRecord, n_features: int, window: int,
                 artifact: Optional[ModelArtifact] = None, infer: bool = False,
                 broker: Optional[Broker] = None):
        if infer and artifact is None:
            raise ValueError("an inferring device needs a model artifact")
        self.record = record
        self.n_features = n_features
        self.window = window
        self.artifact = artifact
        self.infer = infer
        self.broker = broker
        self._rows: list = []
        self._labels: list = []
        self.seq = 0
        self.units = Counter()
        self.version_log = [(0, record.model_version, record.firmware_version)]
        self.rejected: list = []
        self._clock = (lambda: 0) if broker is None else (lambda: broker.scheduler.now)
        if broker is not None:
            broker.register_handler(self.handler_id, self._on_update)
            broker.subscribe(record.topic_update, self.handler_id)

    @property
    def device_id(self) -> str:
        return self.record.device_id

    @property
    def handler_id(self) -> str:
        return f"device:{self.device_id}"

    @property
    def buffered(self) -> int:
        return len(self._rows)

    def sensor_tick(self, frame: SensorFrame) -> Optional[Envelope]:
        if frame.features.shape[0] != self.n_features:
            raise ShapeMismatch(
                f"frame has {frame.features.shape[0]} features, device expects {self.n_features}")
        self._rows.append(frame.features)
        self._labels.append(NO_LABEL if frame.label is None else frame.label)
        if self.infer:
            self.units["preprocess"] += 1
        if len(self._rows) < self.window:
            return None

        rows = np.vstack(self._rows)
        predicted, version = NO_LABEL, 0
        if self.infer:
            rows = self.artifact.scaler.transform(rows)
            predicted = self.artifact.infer(rows)
            version = self.record.model_version
            self.units["inference"] += 1
        now = self._clock()
        batch = WindowBatch(self.device_id, self.seq, now, rows,
                            majority_label(self._labels), predicted, version)
        envelope = Envelope.wrap(sensor_topic(self.device_id), self.device_id, now, batch)
        if self.broker is not None:
            self.broker.publish(envelope, LinkClass.SENSOR_EDGE, Direction.UP)
        self.units["message"] += 1
        self.seq += 1
        self._rows = []
        self._labels = []
        return envelope

    def apply_firmware(self, payload: bytes) -> bool:
        """Install a firmware payload; raises on corrupt or non-newer packages."""
        _, artifact = parse_firmware(payload)
        if artifact.version <= self.record.model_version:
            raise StaleVersion(
                f"{self.device_id}: v{artifact.version} is not newer than "
                f"v{self.record.model_version}")
        if artifact.n_features != self.n_features or artifact.window_size != self.window:
            raise ShapeMismatch("firmware model does not fit this device's input shape")
        self.artifact = artifact
        self.record = self.record.upgraded(artifact.version)
        self.version_log.append((self._clock(), self.record.model_version,
                                 self.record.firmware_version))
        return True

    def _on_update(self, envelope: Envelope):
        self.units["message"] += 1
        try:
            self.apply_firmware(envelope.payload)
        except (StaleVersion, FormatError, ShapeMismatch) as exc:
            self.rejected.append((self._clock(), str(exc)))

    def start_replay(self, features, labels, hz: float, until: int,
                     offset: int = 0, start_index: int = 0):
        """Feed rows of ``features`` at ``hz`` from virtual time ``offset`` until ``until``.

        Replay wraps around the stream, so any duration can be served.
        """
        scheduler = self.broker.scheduler
        period = int(round(NS_PER_S / hz))
        n = features.shape[0]
        if n == 0:
            return

        def tick(i, t):
            j = (start_index + i) % n
            self.sensor_tick(SensorFrame(self.device_id, t, features[j], int(labels[j])))
            nxt = t + period
            if nxt <= until:
                scheduler.at(nxt, tick, i + 1, nxt)

        if offset <= until:
            scheduler.at(offset, tick, 0, offset)
