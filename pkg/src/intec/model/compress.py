"""8-bit post-training quantisation of the reference classifier."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from intec.errors import FormatError, ShapeMismatch
from intec.model.classifier import _as_windows, softmax

_WEIGHT_KEYS = ("W1", "W2")
_BIAS_KEYS = ("b1", "b2")


@dataclass(frozen=True, eq=False)
class QuantizedTensor:
    q: np.ndarray  # int8
    scale: float
    zero_point: int

    def dequantize(self) -> np.ndarray:
        return (self.q.astype(np.float64) - self.zero_point) * self.scale


def quantize_tensor(w) -> QuantizedTensor:
    """Per-tensor affine int8: 256 levels over ``[min(w, 0), max(w, 0)]``.

    Every element is reconstructed within ``scale / 2``.  An all-zero tensor
    gets ``scale = 1`` and ``zero_point = 0`` so it round-trips exactly.
    """
    w = np.asarray(w, dtype=np.float64)
    lo = min(float(w.min(initial=0.0)), 0.0)
    hi = max(float(w.max(initial=0.0)), 0.0)
    if hi == lo:
        return QuantizedTensor(np.zeros(w.shape, dtype=np.int8), 1.0, 0)
    scale = (hi - lo) / 255.0
    zero_point = int(-128 - round(lo / scale))
    q = np.clip(np.round(w / scale) + zero_point, -128, 127).astype(np.int8)
    return QuantizedTensor(q, scale, zero_point)


@dataclass(eq=False)
class LiteModel:
    version: int
    input_shape: tuple
    n_classes: int
    weights: dict  # name -> QuantizedTensor
    biases: dict   # name -> float64 vector, kept unquantised
    _cache: dict = field(default=None, repr=False)

    def _dense(self):
        if self._cache is None:
            self._cache = {k: t.dequantize() for k, t in self.weights.items()}
        return self._cache

    def predict_proba(self, X):
        X = _as_windows(X)
        if tuple(X.shape[1:]) != tuple(self.input_shape):
            raise ShapeMismatch(f"window shape {X.shape[1:]} != {self.input_shape}")
        w = self._dense()
        flat = X.reshape(X.shape[0], -1)
        hidden = np.maximum(flat @ w["W1"] + self.biases["b1"], 0.0)
        return softmax(hidden @ w["W2"] + self.biases["b2"])

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def __eq__(self, other):
        if not isinstance(other, LiteModel):
            return NotImplemented
        if (self.version, tuple(self.input_shape), self.n_classes) != (
                other.version, tuple(other.input_shape), other.n_classes):
            return False
        if self.weights.keys() != other.weights.keys() or self.biases.keys() != other.biases.keys():
            return False
        for k, t in self.weights.items():
            o = other.weights[k]
            if t.scale != o.scale or t.zero_point != o.zero_point or not np.array_equal(t.q, o.q):
                return False
        return all(np.array_equal(v, other.biases[k]) for k, v in self.biases.items())


def compress_model(model, version=None) -> LiteModel:
    """Quantise a fitted :class:`WindowClassifier` into a :class:`LiteModel`."""
    weights = model.get_weights()
    for key, value in weights.items():
        if not np.all(np.isfinite(value)):
            raise ValueError(f"non-finite weights in {key}")
    if version is None:
        version = getattr(model, "version", 0)
    return LiteModel(version=int(version), input_shape=tuple(model.input_shape_),
                     n_classes=int(model.n_classes),
                     weights={k: quantize_tensor(weights[k]) for k in _WEIGHT_KEYS},
                     biases={k: np.array(weights[k], dtype=np.float64) for k in _BIAS_KEYS})


def lite_infer(lite: LiteModel, window) -> np.ndarray:
    """Class distribution for one ``(window, features)`` matrix."""
    return lite.predict_proba(np.asarray(window)[None])[0]


# -- byte layouts -------------------------------------------------------------

def _pack_shape(shape):
    return struct.pack("<B", len(shape)) + struct.pack(f"<{len(shape)}I", *shape)


def lite_to_bytes(lite: LiteModel) -> bytes:
    out = bytearray()
    out += struct.pack("<I", lite.version)
    out += _pack_shape(lite.input_shape)
    out += struct.pack("<HB", lite.n_classes, len(lite.weights))
    for name in sorted(lite.weights):
        t = lite.weights[name]
        raw = name.encode()
        out += struct.pack("<B", len(raw)) + raw
        out += _pack_shape(t.q.shape)
        out += struct.pack("<di", t.scale, t.zero_point)
        out += np.ascontiguousarray(t.q, dtype=np.int8).tobytes()
    out += struct.pack("<B", len(lite.biases))
    for name in sorted(lite.biases):
        raw = name.encode()
        b = lite.biases[name]
        out += struct.pack("<B", len(raw)) + raw + struct.pack("<I", b.shape[0])
        out += np.ascontiguousarray(b, dtype="<f8").tobytes()
    return bytes(out)


class _Cursor:
    def __init__(self, data):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError("truncated model section")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        fmt = "<" + fmt
        values = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return values if len(values) > 1 else values[0]

    def shape(self):
        ndim = self.unpack("B")
        if ndim == 0:
            return ()
        dims = self.unpack(f"{ndim}I")
        return (dims,) if ndim == 1 else tuple(dims)

    def name(self):
        return bytes(self.take(self.unpack("B"))).decode()


def lite_from_bytes(data: bytes) -> LiteModel:
    c = _Cursor(data)
    version = c.unpack("I")
    input_shape = c.shape()
    n_classes, n_weights = c.unpack("HB")
    weights = {}
    for _ in range(n_weights):
        name = c.name()
        shape = c.shape()
        scale, zero_point = c.unpack("di")
        q = np.frombuffer(c.take(int(np.prod(shape))), dtype=np.int8).reshape(shape).copy()
        weights[name] = QuantizedTensor(q, scale, zero_point)
    biases = {}
    for _ in range(c.unpack("B")):
        name = c.name()
        n = c.unpack("I")
        biases[name] = np.frombuffer(c.take(8 * n), dtype="<f8").astype(np.float64)
    if c.pos != len(c.data):
        raise FormatError("trailing bytes in model section")
    return LiteModel(version, tuple(input_shape), n_classes, weights, biases)


def classifier_to_bytes(model) -> bytes:
    """Full-precision float64 layout of a fitted classifier (size reference)."""
    out = bytearray(struct.pack("<I", getattr(model, "version", 0)))
    out += _pack_shape(model.input_shape_)
    weights = model.get_weights()
    out += struct.pack("<HB", model.n_classes, len(weights))
    for name in sorted(weights):
        w = np.asarray(weights[name], dtype="<f8")
        raw = name.encode()
        out += struct.pack("<B", len(raw)) + raw + _pack_shape(w.shape) + w.tobytes()
    return bytes(out)
