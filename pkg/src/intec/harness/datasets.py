"""Sensor streams: MHEALTH log ingestion and a seeded synthetic stand-in."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from intec.core import N_CLASSES
from intec.errors import ParseError

MHEALTH_SIGNALS = 23
# 0-based signal columns 3 and 4 are the two ECG leads; the rest are the
# 3-axis accelerometer / gyroscope / magnetometer channels.
ECG_COLUMNS = (3, 4)
MOTION_COLUMNS = tuple(i for i in range(MHEALTH_SIGNALS) if i not in ECG_COLUMNS)
SAMPLING_HZ = 50.0


@dataclass(frozen=True, eq=False)
class FrameStream:
    features: np.ndarray  # (N, F)
    labels: np.ndarray    # (N,) class ids 0..12
    sampling_hz: float = SAMPLING_HZ

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def head(self, fraction: float) -> "FrameStream":
        n = max(2, int(len(self) * fraction))
        return FrameStream(self.features[:n], self.labels[:n], self.sampling_hz)


def parse_mhealth_lines(lines, columns=MOTION_COLUMNS, source="<input>") -> FrameStream:
    rows, labels = [], []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != MHEALTH_SIGNALS + 1:
            raise ParseError(f"{source}: expected {MHEALTH_SIGNALS + 1} fields, "
                             f"got {len(fields)}", lineno)
        try:
            values = [float(v) for v in fields[:-1]]
            label = int(float(fields[-1]))
        except ValueError as exc:
            raise ParseError(f"{source}: {exc}", lineno) from None
        if not 0 <= label < N_CLASSES:
            raise ParseError(f"{source}: label {label} outside 0..{N_CLASSES - 1}", lineno)
        rows.append(values)
        labels.append(label)
    features = np.asarray(rows, dtype=np.float64).reshape(-1, MHEALTH_SIGNALS)
    if columns is not None:
        features = features[:, list(columns)]
    return FrameStream(features, np.asarray(labels, dtype=np.int64))


def ingest_mhealth(path, columns=MOTION_COLUMNS) -> dict[str, FrameStream]:
    """Read one ``mHealth_subject*.log`` file or a directory of them.

    Returns one stream per subject keyed by file stem.  ``columns`` selects
    signal columns (default: the 21 motion channels; ``None`` keeps all 23).
    """
    path = Path(path)
    files = sorted(path.glob("*.log")) if path.is_dir() else [path]
    if not files:
        raise FileNotFoundError(f"no .log files under {path}")
    streams = {}
    for file in files:
        with open(file) as fh:
            streams[file.stem] = parse_mhealth_lines(fh, columns, source=file.name)
    return streams


def concat_streams(streams) -> FrameStream:
    streams = list(streams)
    return FrameStream(np.concatenate([s.features for s in streams]),
                       np.concatenate([s.labels for s in streams]),
                       streams[0].sampling_hz)


def synthesize_dataset(classes=N_CLASSES, per_class_windows=20, n_features=21,
                       window=25, seed=0, separability=3.0, segment_windows=2,
                       outlier_fraction=0.0) -> FrameStream:
    """Labelled stream of Gaussian activity clusters.

    Each class gets ``per_class_windows * window`` frames, cut into segments
    of ``segment_windows`` windows that are shuffled together, so every
    aligned window carries a single label.  Within a segment the noise is
    AR(1) to mimic sensor inertia.  Channels get distinct offsets and scales
    (as accelerometer, gyroscope and magnetometer axes would), and a
    ``outlier_fraction`` of frames receive a large spike on a few channels.
    """
    if min(classes, n_features, window) < 1 or per_class_windows < 0:
        raise ValueError("dataset parameters must be positive")
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, 1.0, size=(classes, n_features)) * separability
    offset = rng.normal(0.0, 5.0, size=n_features)
    spread = rng.uniform(0.2, 8.0, size=n_features)

    seg_len = segment_windows * window
    segments = []
    for c in range(classes):
        total = per_class_windows * window
        segments += [(c, min(seg_len, total - s)) for s in range(0, total, seg_len)]
    if not segments:
        return FrameStream(np.zeros((0, n_features)), np.zeros(0, dtype=np.int64))
    order = rng.permutation(len(segments))

    rho = 0.6
    parts, labels = [], []
    for i in order:
        c, length = segments[i]
        noise = np.empty((length, n_features))
        noise[0] = rng.normal(size=n_features)
        innov = rng.normal(size=(length, n_features)) * np.sqrt(1 - rho ** 2)
        for t in range(1, length):
            noise[t] = rho * noise[t - 1] + innov[t]
        parts.append(means[c] + noise)
        labels.append(np.full(length, c, dtype=np.int64))
    z = np.concatenate(parts)
    if outlier_fraction > 0:
        hit = np.flatnonzero(rng.random(z.shape[0]) < outlier_fraction)
        for t in hit:
            cols = rng.choice(n_features, size=max(1, n_features // 3), replace=False)
            z[t, cols] += rng.choice([-1.0, 1.0], size=cols.shape[0]) * 12.0
    return FrameStream(offset + spread * z, np.concatenate(labels))
