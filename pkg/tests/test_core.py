import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from intec.core import (HEADER_SIZE, DeviceRecord, Envelope, FirmwarePackage, PayloadKind,
                        ReducedBatchMessage, SensorFrame, UserQuery, UserResponse,
                        Validation, WindowBatch, byte_size, deserialize, serialize, to_text)
from intec.errors import FormatError

ids = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789/_-", min_size=0, max_size=12)
finite = st.floats(allow_nan=False, allow_infinity=False, width=64)
instants = st.integers(0, 2**63 - 1)
labels = st.integers(0, 12)


@st.composite
def frames(draw):
    feats = draw(hnp.arrays(np.float64, st.integers(1, 30), elements=finite))
    return SensorFrame(draw(ids), draw(instants), feats, draw(st.none() | labels))


@st.composite
def windows(draw):
    rows = draw(hnp.arrays(np.float64, st.tuples(st.integers(1, 30), st.integers(1, 23)),
                           elements=finite))
    return WindowBatch(draw(ids), draw(st.integers(0, 2**32 - 1)), draw(instants), rows,
                       draw(st.integers(-1, 12)), draw(st.integers(-1, 12)),
                       draw(st.integers(0, 1000)), draw(st.sampled_from(list(Validation))),
                       draw(ids))


@st.composite
def reduced(draw):
    n, k = draw(st.integers(0, 40)), draw(st.integers(1, 16))
    rows = draw(hnp.arrays(np.float64, (n, k), elements=finite))
    lab = draw(hnp.arrays(np.int16, n, elements=st.integers(0, 12)))
    return ReducedBatchMessage(draw(st.integers(0, 2**63)), draw(ids),
                               draw(st.sampled_from(["PCA", "AE"])), draw(st.integers(1, 100)),
                               draw(instants), rows, lab)


firmware = st.builds(FirmwarePackage, ids, st.integers(0, 2**32 - 1),
                     st.lists(ids, max_size=5).map(tuple), st.binary(max_size=200))
queries = st.builds(UserQuery, st.integers(0, 2**63), ids, ids, instants)
responses = st.builds(UserResponse, st.integers(0, 2**63), ids, ids, st.integers(-1, 12),
                      st.integers(0, 2**32 - 1), ids, instants)
payloads = st.one_of(frames(), windows(), reduced(), firmware, queries, responses)


@given(payloads)
@settings(max_examples=300)
def test_roundtrip_is_identity(value):
    assert deserialize(serialize(value)) == value


@given(payloads)
def test_serialization_is_deterministic(value):
    assert serialize(value) == serialize(value)
    copy = deserialize(serialize(value))
    assert serialize(copy) == serialize(value)


@given(payloads, st.data())
def test_truncated_payload_is_rejected(value, data):
    blob = serialize(value)
    cut = data.draw(st.integers(0, len(blob) - 1))
    with pytest.raises(FormatError):
        deserialize(blob[:cut])


def test_trailing_bytes_and_unknown_tag_rejected():
    blob = serialize(UserQuery(1, "u", "d", 5))
    with pytest.raises(FormatError):
        deserialize(blob + b"\x00")
    with pytest.raises(FormatError):
        deserialize(b"\x63" + blob[1:])


def test_empty_reduced_message_roundtrips():
    msg = ReducedBatchMessage(0, "edge0", "PCA", 25, 10, np.zeros((0, 7)), [])
    back = deserialize(serialize(msg))
    assert back == msg and back.k == 7 and len(back) == 0


def test_frame_values_bit_exact():
    feats = np.random.default_rng(0).normal(size=21) * 1e3
    back = deserialize(serialize(SensorFrame("s1", 20, feats, 4)))
    assert back.features.tobytes() == feats.tobytes()


def _env(payload: bytes):
    return Envelope("t", "p", 0, payload, PayloadKind.SENSOR_DATA)


def test_envelope_size_is_header_plus_payload():
    assert HEADER_SIZE == 64
    assert byte_size(_env(b"")) == 64
    assert byte_size(_env(bytes(100))) == 164


def test_reduced_data_section_scales_with_k():
    rng = np.random.default_rng(0)

    def size(k):
        msg = ReducedBatchMessage(1, "edge0", "PCA", 25, 0, rng.normal(size=(25, k)),
                                  np.ones(25, dtype=np.int16))
        return len(serialize(msg))

    empty = len(serialize(ReducedBatchMessage(1, "edge0", "PCA", 25, 0,
                                              np.zeros((0, 1)), [])))
    # data section only: 8 bytes per value plus a 2-byte label per row
    ratio = (size(7) - empty) / (size(16) - empty)
    assert abs(ratio - (7 * 8 + 2) / (16 * 8 + 2)) < 1e-12
    assert abs(ratio - 7 / 16) < 0.1


def test_envelope_wrap_open():
    q = UserQuery(3, "u1", "s001", 42)
    env = Envelope.wrap("edge/query", "u1", 42, q)
    assert env.kind is PayloadKind.USER_QUERY
    assert env.open() == q
    assert env.byte_size == 64 + len(serialize(q))


def test_text_export_is_json():
    import json

    doc = json.loads(to_text(SensorFrame("s", 1, [1.0, 2.0], 3)))
    assert doc["type"] == "SensorFrame" and doc["features"] == [1.0, 2.0]


def test_value_invariants():
    with pytest.raises(ValueError):
        SensorFrame("s", 0, [1.0], label=13)
    with pytest.raises(ValueError):
        WindowBatch("s", 0, 0, np.zeros((0, 3)))
    with pytest.raises(ValueError):
        ReducedBatchMessage(0, "e", "PCA", 25, 0, np.zeros((2, 3)), [1])


@given(st.lists(st.integers(1, 50), min_size=1, max_size=10))
def test_device_versions_never_decrease(bumps):
    rec = DeviceRecord("s000")
    seen = [(rec.model_version, rec.firmware_version)]
    version = 0
    for b in bumps:
        version += b
        rec = rec.upgraded(version)
        seen.append((rec.model_version, rec.firmware_version))
    for (m0, f0), (m1, f1) in zip(seen, seen[1:]):
        assert m1 > m0 and f1 == f0 + 1
    with pytest.raises(ValueError):
        rec.upgraded(version)
