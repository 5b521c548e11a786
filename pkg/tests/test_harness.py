from collections import Counter

import numpy as np
import pytest

from intec.core import HEADER_SIZE, ResultRow
from intec.errors import InvalidConfig, ParseError
from intec.harness.config import ExperimentConfig, load_config
from intec.harness.datasets import (MOTION_COLUMNS, ingest_mhealth, parse_mhealth_lines,
                                    synthesize_dataset)
from intec.harness.energy import EnergyModel
from intec.harness.invariants import variant_orderings
from intec.harness.report import improvement, summary, write_svgs
from intec.harness.scenario import average_rows, repeat_seeds, run_once, wire_variant
from intec.harness.suite import experiment_grid, read_csv, rows_to_csv, run_suite, write_csv
from intec.transport import Direction, LinkClass

# -- configuration ------------------------------------------------------------------


def test_config_defaults_and_rates():
    cfg = ExperimentConfig()
    assert (cfg.variant, cfg.window, cfg.sensors, cfg.users, cfg.repeats) == ("InTec", 25, 30,
                                                                              30, 3)
    assert cfg.k == 7
    assert ExperimentConfig(reduction_rate="24%").k == 16
    assert ExperimentConfig(reduction_rate=66).reduction_rate == pytest.approx(0.66)
    links = cfg.link_models()
    assert links[LinkClass.EDGE_CLOUD].delay_ms * 2 == 145.0
    assert links[LinkClass.SENSOR_EDGE].bandwidth_mbps == 100.0


@pytest.mark.parametrize("bad", [
    dict(variant="Fog"), dict(reduction_model="SVD"), dict(window=1), dict(sensors=-1),
    dict(repeats=0), dict(duration=0), dict(reduction_rate=1.5), dict(users=2.5),
    dict(links={"EdgeCloud": {"delay_ms": -1}}), dict(links={"Mars": {}}),
    dict(service={"nope": 1}), dict(calibration_fraction=0), dict(patience=99),
])
def test_config_rejects(bad):
    with pytest.raises(InvalidConfig):
        ExperimentConfig.from_mapping(bad)


def test_config_file_loading(tmp_path):
    path = tmp_path / "cell.yaml"
    path.write_text("variant: Edge\nreduction_rate: 24%\nsensors: 5\n"
                    "links:\n  EdgeCloud: {delay_ms: 10}\n")
    cfg = load_config(path)
    assert (cfg.variant, cfg.k, cfg.sensors) == ("Edge", 16, 5)
    assert cfg.link_models()[LinkClass.EDGE_CLOUD].delay_ms == 10
    (tmp_path / "bad.yaml").write_text("windw: 25\n")
    with pytest.raises(InvalidConfig):
        load_config(tmp_path / "bad.yaml")
    with pytest.raises(InvalidConfig):
        load_config(tmp_path / "missing.yaml")


# -- energy ---------------------------------------------------------------------------


def test_energy_model():
    em = EnergyModel()
    assert em.units({"inference": 2, "message": 3}) == 103
    assert em.power("sensor", {}, 10.0) == 1400.0
    assert em.power("edge", {"gate": 10}, 5.0) == pytest.approx(2700.0 + 50 / 5)
    with pytest.raises(KeyError):
        em.units({"mining": 1})
    with pytest.raises(ValueError):
        EnergyModel(idle_mw={"sensor": -1})


# -- datasets -------------------------------------------------------------------------


def _mhealth_line(label=1, value=0.5):
    return " ".join([str(value + i) for i in range(23)] + [str(label)])


def test_mhealth_parsing(tmp_path):
    text = "\n".join([_mhealth_line(0), _mhealth_line(12), ""])
    full = parse_mhealth_lines(text.splitlines(), columns=None)
    assert full.features.shape == (2, 23) and full.labels.tolist() == [0, 12]
    motion = parse_mhealth_lines(text.splitlines())
    assert motion.n_features == 21 == len(MOTION_COLUMNS)
    assert 3.5 not in motion.features[0] and 4.5 not in motion.features[0]  # ECG dropped
    (tmp_path / "mHealth_subject1.log").write_text(text)
    (tmp_path / "mHealth_subject2.log").write_text(_mhealth_line(3) + "\n")
    streams = ingest_mhealth(tmp_path)
    assert sorted(streams) == ["mHealth_subject1", "mHealth_subject2"]


def test_mhealth_malformed_line():
    with pytest.raises(ParseError) as info:
        parse_mhealth_lines([_mhealth_line(), "1 2 3", _mhealth_line()])
    assert info.value.line == 2
    with pytest.raises(ParseError):
        parse_mhealth_lines([_mhealth_line(label=13)])


def test_synthetic_stream():
    a = synthesize_dataset(per_class_windows=3, window=25, seed=4)
    b = synthesize_dataset(per_class_windows=3, window=25, seed=4)
    assert a.features.tobytes() == b.features.tobytes()
    assert np.array_equal(a.labels, b.labels)
    assert len(a) == 13 * 3 * 25 and set(a.labels.tolist()) == set(range(13))
    windows = a.labels.reshape(-1, 25)
    assert np.all(windows == windows[:, :1])  # aligned windows are single-label
    assert len(synthesize_dataset(per_class_windows=0)) == 0


# -- wiring -----------------------------------------------------------------------------


def _wire(variant, **kw):
    kw = dict(dict(sensors=3, users=2, duration=4.0, repeats=1), **kw)
    return wire_variant(ExperimentConfig(variant=variant, **kw))


def test_stage_placement():
    intec = _wire("InTec")
    assert all(d.infer and d.artifact is not None for d in intec.devices)
    assert intec.edge.serve_queries and not intec.edge.infer
    assert intec.cloud.firmware_mode == "devices"
    edge = _wire("Edge")
    assert edge.edge.infer and not any(d.infer for d in edge.devices)
    assert edge.cloud.firmware_mode == "edge"
    ec = _wire("EdgeCloud")
    assert ec.edge.forward_inference and not ec.edge.serve_queries and ec.cloud.infer_reduced
    cloud = _wire("Cloud")
    assert cloud.edge is None and cloud.gateway is not None
    assert cloud.cloud.analysis is not None
    assert cloud.cloud.query_link is LinkClass.USER_CLOUD


def test_zero_sensors_zero_things_traffic():
    sc = _wire("InTec", sensors=0, users=0).run()
    assert sc.broker.ledger.link_bytes(LinkClass.SENSOR_EDGE) == 0
    row = run_once(ExperimentConfig(variant="InTec", sensors=0, users=0, duration=2.0,
                                    repeats=1))
    assert row.latency_ms is None and row.traffic_mb == 0.0


def test_window_size_payload_invariant():
    payload, counts = {}, {}
    for w in (25, 50, 100):
        sc = _wire("EdgeCloud", sensors=1, users=0, duration=10.0, window=w).run()
        key = (LinkClass.SENSOR_EDGE, Direction.UP)
        n = sc.broker.ledger.messages[key]
        counts[w] = n
        payload[w] = sc.broker.ledger.bytes[key] - HEADER_SIZE * n
    assert counts[25] == 2 * counts[50] == 4 * counts[100]
    assert payload[25] / counts[25] < payload[50] / counts[50] < payload[100] / counts[100]
    for w in (50, 100):
        assert abs(payload[w] - payload[25]) / payload[25] < 0.01


def test_run_is_deterministic():
    cfg = ExperimentConfig(variant="EdgeCloud", sensors=3, users=3, duration=4.0, repeats=1)
    a = wire_variant(cfg, trace=True).run()
    b = wire_variant(cfg, trace=True).run()
    assert a.broker.trace_digest() == b.broker.trace_digest()
    assert run_once(cfg) == run_once(cfg)


def test_repeat_seeds_and_average():
    cfg = ExperimentConfig(seed=2, repeats=3)
    assert repeat_seeds(cfg) == [2000, 2001, 2002]
    rows = [ResultRow("InTec", "PCA", 0.66, 25, 1, 1, lat, t, 1.0, 1.0, 2.0, 3.0, s,
                      extra={"queries": 2})
            for s, lat, t in ((0, 10.0, 1.0), (1, None, 2.0), (2, 20.0, 3.0))]
    avg = average_rows(rows, 2)
    assert avg.latency_ms == 15.0 and avg.traffic_mb == 2.0 and avg.seed == 2
    assert avg.extra["queries"] == 2


# -- suite and report --------------------------------------------------------------------


def test_experiment_grids():
    exp5 = experiment_grid(5)
    assert len(exp5) == 48
    assert {(c.sensors, c.users) for c in exp5} == {(n, n) for n in range(50, 101, 10)}
    assert len(experiment_grid(1)) == 16 and len(experiment_grid(2)) == 24
    assert {c.sensors for c in experiment_grid(3)} == {10, 20, 30, 40}
    with pytest.raises(ValueError):
        experiment_grid(6)


def test_empty_grid_gives_header_only():
    result = run_suite([])
    assert result.ok and rows_to_csv(result.rows) == (
        "variant,reduction_model,reduction_rate,window,sensors,users,latency_ms,traffic_mb,"
        "throughput_mbps,sensor_mw,edge_mw,cloud_mw,seed\n")


def test_failed_cell_is_reported(monkeypatch):
    import intec.harness.suite as suite

    calls = []

    def fake(cfg):
        calls.append(cfg.variant)
        if cfg.variant == "Edge":
            raise RuntimeError("boom")
        return ResultRow(cfg.variant, "PCA", 0.66, 25, 1, 1, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0)

    monkeypatch.setattr(suite, "run_experiment", fake)
    cells = [ExperimentConfig(variant=v) for v in ("Cloud", "Edge", "InTec")]
    result = run_suite(cells)
    assert calls == ["Cloud", "Edge", "InTec"]
    assert [r.variant for r in result.rows] == ["Cloud", "InTec"]
    assert len(result.failures) == 1 and "boom" in result.failures[0][1]


def _rows():
    return [ResultRow(v, "PCA", 0.66, 25, 10, 10, lat, t, t * 8 / 30, s, e, c, 0)
            for v, lat, t, s, e, c in (("Cloud", 155.0, 2.6, 1400, 0, 9500),
                                      ("EdgeCloud", 155.0, 1.0, 1401, 2800, 9300),
                                      ("Edge", 10.1, 0.9, 1401, 2900, 9200),
                                      ("InTec", 10.0, 0.9, 1410, 2750, 9200))]


def test_csv_roundtrip(tmp_path):
    rows = _rows() + [ResultRow("InTec", "AE", 0.24, 50, 0, 0, None, 0.0, 0.0, 1400.0, 2700.0,
                                9000.0, 1)]
    write_csv(rows, tmp_path / "m.csv")
    back = read_csv(tmp_path / "m.csv")
    assert rows_to_csv(back) == rows_to_csv(rows)
    assert back[-1].latency_ms is None


def test_report_outputs(tmp_path):
    assert improvement(200.0, 50.0) == 75.0
    text = summary(_rows())
    assert "latency_ms=+93.55%" in text
    paths = write_svgs(_rows(), tmp_path / "svg")
    assert len(paths) == 6 and all(p.read_text().startswith("<?xml") for p in paths)
    again = write_svgs(_rows(), tmp_path / "svg2")
    assert [p.read_bytes() for p in paths] == [p.read_bytes() for p in again]


def test_orderings_on_hand_rows():
    checks = variant_orderings({r.variant: r for r in _rows()})
    assert all(checks.values()) and len(checks) == 8


def test_energy_counts_feed_power():
    em = EnergyModel()
    busy = em.power("sensor", Counter(preprocess=500, inference=20, message=20), 10.0)
    idle = em.power("sensor", Counter(message=20), 10.0)
    assert busy > idle
