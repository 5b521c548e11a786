"""``INTC`` model artifact: scaler + reducer + lite classifier, versioned.

Layout (little-endian)::

    b"INTC" | u16 format | u32 version | u16 n_sections
    n_sections x (u8 tag | u32 length | payload)
    u32 CRC-32 of everything before it
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from intec.errors import FormatError
from intec.model.compress import LiteModel, lite_from_bytes, lite_to_bytes
from intec.numerics import PCA, Autoencoder, ZScoreScaler

MAGIC = b"INTC"
FORMAT_VERSION = 1

SECTION_META = 1
SECTION_SCALER = 2
SECTION_REDUCER = 3
SECTION_LITE = 4

_REDUCER_NONE = 0
_REDUCER_PCA = 1
_REDUCER_AE = 2

Reducer = Union[PCA, Autoencoder]


@dataclass(eq=False)
class ModelArtifact:
    version: int
    window_size: int
    scaler: ZScoreScaler
    reducer: Optional[Reducer]
    lite: LiteModel
    accuracy: float = 0.0

    @property
    def reduction_name(self) -> str:
        return "none" if self.reducer is None else self.reducer.name

    @property
    def n_features(self) -> int:
        return int(self.scaler.n_features_in_)

    def prepare(self, raw_rows):
        """Raw sensor rows -> scaled -> reduced, i.e. the classifier's input rows."""
        return self.reduce(self.scaler.transform(raw_rows))

    def reduce(self, scaled_rows):
        rows = np.asarray(scaled_rows, dtype=np.float64)
        return rows if self.reducer is None else self.reducer.transform(rows)

    def infer(self, scaled_window):
        """Predicted class for one scaled ``(W, F)`` window."""
        return int(self.lite.predict(self.reduce(scaled_window)[None])[0])


def _arr(a):
    a = np.ascontiguousarray(a, dtype="<f8")
    return struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape) + a.tobytes()


def _read_arr(data, pos):
    (ndim,) = struct.unpack_from("<B", data, pos)
    pos += 1
    shape = struct.unpack_from(f"<{ndim}I", data, pos)
    pos += 4 * ndim
    n = int(np.prod(shape)) if ndim else 1
    if pos + 8 * n > len(data):
        raise FormatError("truncated array")
    arr = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
    return arr, pos + 8 * n


def _reducer_bytes(reducer) -> bytes:
    if reducer is None:
        return struct.pack("<B", _REDUCER_NONE)
    if isinstance(reducer, PCA):
        return (struct.pack("<B", _REDUCER_PCA) + _arr(reducer.mean_)
                + _arr(reducer.components_) + _arr(reducer.explained_variance_))
    if isinstance(reducer, Autoencoder):
        return (struct.pack("<B", _REDUCER_AE) + _arr(reducer.encoder_weights_)
                + _arr(reducer.encoder_bias_) + _arr(reducer.decoder_weights_)
                + _arr(reducer.decoder_bias_))
    raise TypeError(f"unsupported reducer {type(reducer).__name__}")


def _reducer_from(data):
    kind = data[0]
    pos = 1
    if kind == _REDUCER_NONE:
        return None
    arrays = []
    while pos < len(data):
        arr, pos = _read_arr(data, pos)
        arrays.append(arr)
    if kind == _REDUCER_PCA and len(arrays) == 3:
        pca = PCA(n_components=arrays[1].shape[0])
        pca.mean_, pca.components_, pca.explained_variance_ = arrays
        pca.n_features_in_ = arrays[0].shape[0]
        return pca
    if kind == _REDUCER_AE and len(arrays) == 4:
        ae = Autoencoder(n_components=arrays[0].shape[1])
        (ae.encoder_weights_, ae.encoder_bias_, ae.decoder_weights_,
         ae.decoder_bias_) = arrays
        ae.n_features_in_ = arrays[0].shape[0]
        return ae
    raise FormatError("malformed reducer section")


def save_artifact(artifact: ModelArtifact) -> bytes:
    sections = [
        (SECTION_META, struct.pack("<Hd", artifact.window_size, artifact.accuracy)),
        (SECTION_SCALER, _arr(artifact.scaler.mean_) + _arr(artifact.scaler.std_)),
        (SECTION_REDUCER, _reducer_bytes(artifact.reducer)),
        (SECTION_LITE, lite_to_bytes(artifact.lite)),
    ]
    out = bytearray(MAGIC)
    out += struct.pack("<HIH", FORMAT_VERSION, artifact.version, len(sections))
    for tag, payload in sections:
        out += struct.pack("<BI", tag, len(payload)) + payload
    out += struct.pack("<I", zlib.crc32(out))
    return bytes(out)


def load_artifact(data: bytes) -> ModelArtifact:
    data = bytes(data)
    if len(data) < 16 or data[:4] != MAGIC:
        raise FormatError("not an INTC artifact")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != crc:
        raise FormatError("artifact checksum mismatch")
    fmt, version, n_sections = struct.unpack_from("<HIH", data, 4)
    if fmt != FORMAT_VERSION:
        raise FormatError(f"unsupported artifact format {fmt}")
    pos = 12
    body = data[:-4]
    sections = {}
    try:
        for _ in range(n_sections):
            tag, length = struct.unpack_from("<BI", body, pos)
            pos += 5
            if pos + length > len(body):
                raise FormatError("truncated section")
            sections[tag] = body[pos:pos + length]
            pos += length
        if pos != len(body) or set(sections) != {SECTION_META, SECTION_SCALER,
                                                  SECTION_REDUCER, SECTION_LITE}:
            raise FormatError("unexpected section layout")
        window_size, accuracy = struct.unpack("<Hd", sections[SECTION_META])
        mean, p = _read_arr(sections[SECTION_SCALER], 0)
        std, _ = _read_arr(sections[SECTION_SCALER], p)
        scaler = ZScoreScaler()
        scaler.mean_, scaler.std_, scaler.n_features_in_ = mean, std, mean.shape[0]
        reducer = _reducer_from(sections[SECTION_REDUCER])
        lite = lite_from_bytes(sections[SECTION_LITE])
    except (struct.error, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(str(exc)) from exc
    if lite.version != version:
        raise FormatError("lite model version disagrees with artifact header")
    return ModelArtifact(version, window_size, scaler, reducer, lite, accuracy)
