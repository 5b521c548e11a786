from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from intec.core import (DeviceRecord, Envelope, FirmwarePackage, UserQuery, Validation,
                        WindowBatch, ms, seconds, serialize)
from intec.edge import (AnalysisCore, EdgeNode, EdgeStore, distribute_firmware, gate_decision,
                        outlier_gate, reduction_job, service_query)
from intec.errors import ShapeMismatch, UnknownDevice
from intec.harness.config import ExperimentConfig
from intec.harness.scenario import wire_variant
from intec.model import ModelArtifact, compress_model, save_artifact
from intec.numerics import PCA
from intec.things import Device
from intec.transport import Broker, LinkClass, LinkModel, Scheduler


class StubOutlier:
    """Scores each row by its first column, so tests choose which rows are valid."""

    threshold = 0.5

    def __init__(self, width):
        self.n_features_in_ = width

    def score_samples(self, rows):
        return rows[:, 0]


def _batch(valid, window=25, width=3, seq=0, device="s000", label=1):
    rows = np.zeros((window, width))
    rows[valid:, 0] = 0.9  # rows past ``valid`` score as outliers
    return WindowBatch(device, seq, 0, rows, label)


@pytest.mark.parametrize("valid,stored", [(21, True), (19, False), (20, True)])
def test_gate_examples(valid, stored):
    result = outlier_gate(_batch(valid), StubOutlier(3))
    assert result.stored is stored and result.valid_count == valid
    if stored:
        assert result.batch.validation is Validation.CHECKED
        assert result.batch.outlier_model_name == "IsolationForest"
    else:
        assert result.batch.validation is Validation.UNCHECKED


def test_gate_zero_drop_rate_keeps_everything():
    assert outlier_gate(_batch(0), StubOutlier(3), drop_rate=0).stored


def test_gate_width_mismatch():
    with pytest.raises(ShapeMismatch):
        outlier_gate(_batch(25, width=4), StubOutlier(3))


@pytest.mark.parametrize("window", [25, 50, 100])
def test_gate_matches_exhaustive_oracle(window):
    for v in range(window + 1):
        oracle = Fraction(v * 100, window) >= 80
        assert gate_decision(v, window, 80.0) == oracle
        assert outlier_gate(_batch(v, window), StubOutlier(3)).stored == oracle


def test_store_accepts_only_checked():
    store = EdgeStore()
    with pytest.raises(ValueError):
        store.insert(_batch(25), 0)


@given(st.lists(st.integers(0, 100), max_size=40), st.lists(st.integers(0, 120), max_size=6))
def test_store_fetch_partitions_inserts(times, cuts):
    store = EdgeStore()
    for i, t in enumerate(sorted(times)):
        store.insert(_batch(25, seq=i).checked("IF"), t)
    bounds = [-1] + sorted(set(cuts)) + [1000]
    seen = []
    for t1, t2 in zip(bounds, bounds[1:]):
        part = store.fetch(t1, t2)
        assert all(t1 < sorted(times)[b.seq] <= t2 for b in part)
        seen.extend(b.seq for b in part)
    assert seen == list(range(len(times)))


def test_reduction_job_shapes():
    rng = np.random.default_rng(0)
    pca = PCA(n_components=7).fit(rng.normal(size=(200, 21)))
    store = EdgeStore()
    assert reduction_job(store, pca, "edge0", 0) is None
    for i in range(4):
        store.insert(WindowBatch("s000", i, 0, rng.normal(size=(25, 21)), i).checked("IF"), i)
    msg = reduction_job(store, pca, "edge0", 10)
    assert msg.rows.shape == (100, 7) and msg.window_size == 25
    assert msg.labels.tolist() == [0] * 25 + [1] * 25 + [2] * 25 + [3] * 25
    assert store.pending == 0 and reduction_job(store, pca, "edge0", 11) is None
    store.insert(WindowBatch("s000", 9, 0, rng.normal(size=(25, 5))).checked("IF"), 20)
    with pytest.raises(ShapeMismatch):
        reduction_job(store, pca, "edge0", 30)


def test_reduction_interval_ticks():
    rng = np.random.default_rng(1)
    pca = PCA(n_components=2).fit(rng.normal(size=(50, 3)))
    sched = Scheduler()
    broker = Broker(sched, {LinkClass.EDGE_CLOUD: LinkModel(LinkClass.EDGE_CLOUD, 72.5)})
    analysis = AnalysisCore(StubOutlier(3), pca)
    edge = EdgeNode("edge0", broker, analysis, {}, rows_scaled=True,
                    reduction_interval=ms(15 * 60_000))
    for minute in (10, 20, 40):
        sched.at(ms(minute * 60_000), analysis.gate, _batch(25), ms(minute * 60_000))
    sched.run_until(ms(50 * 60_000))
    assert [m.date for m in edge.published] == [ms(15 * 60_000), ms(30 * 60_000),
                                                ms(45 * 60_000)]


def test_service_query():
    registry = {"s000": DeviceRecord("s000")}
    latest = {"s000": (5, 2)}
    r = service_query(UserQuery(1, "u", "s000", 7), latest, registry, "edge0")
    assert (r.label, r.model_version, r.served_by, r.issued_at) == (5, 2, "edge0", 7)
    with pytest.raises(UnknownDevice):
        service_query(UserQuery(1, "u", "nope", 7), latest, registry, "edge0")


def _latencies(variant):
    cfg = ExperimentConfig(variant=variant, sensors=2, users=2, duration=6.0, repeats=1)
    sc = wire_variant(cfg).run()
    return np.array([lat for u in sc.users for lat in u.latencies]) / 1e6


@pytest.mark.slow
def test_query_latency_decomposition():
    local = _latencies("InTec")
    assert len(local) > 0
    # two 4 ms access hops and the 2 ms service time, plus microseconds of transmission
    assert np.all(local >= 10.0) and np.median(local) < 10.5
    assert np.all(local < 145.0)
    remote = _latencies("Cloud")
    assert len(remote) > 0 and np.all(remote >= 145.0)


def test_distribute_firmware_staggered():
    registry = {f"s{i:03d}": DeviceRecord(f"s{i:03d}") for i in range(10)}
    pkg = FirmwarePackage("rpi3b", 2, tuple(registry), b"blob")
    env = Envelope.wrap("edge/edge0/firmware", "cloud", 0, pkg)
    plan = distribute_firmware(env, registry, ms(100))
    assert [o for o, _, _ in plan] == [ms(100) * i for i in range(10)]
    assert plan[-1][0] - plan[0][0] == ms(900)
    assert [e.topic for _, _, e in plan] == [f"things/s{i:03d}/update" for i in range(10)]
    assert distribute_firmware(env, {}, ms(100)) == []
    subset = Envelope.wrap("f", "cloud", 0, FirmwarePackage("rpi3b", 2, ("s003",), b""))
    assert [d for _, d, _ in distribute_firmware(subset, registry, ms(100))] == ["s003"]


def test_repeated_firmware_is_idempotent(small_pipeline):
    p = small_pipeline
    art = p["artifact"]
    lite = compress_model(p["model"], 2)
    blob = save_artifact(ModelArtifact(2, 25, art.scaler, art.reducer, lite, art.accuracy))
    sched = Scheduler()
    links = {c: LinkModel(c, 4.0) for c in LinkClass}
    broker = Broker(sched, links)
    records = [DeviceRecord(f"s{i:03d}", model_version=1) for i in range(3)]
    devices = [Device(r, 21, 25, art, infer=True, broker=broker) for r in records]
    EdgeNode("edge0", broker, AnalysisCore(StubOutlier(21), art.reducer),
             {r.device_id: r for r in records}, rows_scaled=True, reduction_interval=0)
    pkg = FirmwarePackage("rpi3b", 2, tuple(r.device_id for r in records), blob)
    for t in (0, seconds(1)):
        sched.at(t, lambda: broker.publish(Envelope.wrap("edge/edge0/firmware", "cloud",
                                                         sched.now, pkg),
                                           LinkClass.EDGE_CLOUD))
    sched.run_until(seconds(3))
    for dev in devices:
        assert [v for _, v, _ in dev.version_log] == [1, 2]
        assert len(dev.rejected) == 1
    assert serialize(pkg)  # package itself untouched


@pytest.mark.slow
def test_every_stored_window_reduced_once():
    cfg = ExperimentConfig(variant="InTec", sensors=4, users=0, duration=12.0, repeats=1)
    sc = wire_variant(cfg).run()
    analysis = sc.edge.analysis
    sent = sum(len(m) for m in sc.edge.published)
    assert analysis.stored > 0
    assert sent == analysis.stored * cfg.window
    assert analysis.store.pending == 0
    assert sc.cloud.store.rows == sent
    ids = [m.message_id for m in sc.edge.published]
    assert ids == list(range(len(ids)))
