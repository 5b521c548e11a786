import numpy as np
import pytest

from intec.harness.datasets import synthesize_dataset
from intec.model import ModelArtifact, TrainConfig, compress_model, train_classifier
from intec.numerics import PCA, ZScoreScaler, window_arrays


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_pipeline():
    """Scaler, PCA(7) and a trained v1 artifact on a small synthetic stream (W=25)."""
    stream = synthesize_dataset(per_class_windows=12, window=25, seed=3)
    scaler = ZScoreScaler().fit(stream.features)
    scaled = scaler.transform(stream.features)
    reducer = PCA(n_components=7).fit(scaled)
    X, y = window_arrays(reducer.transform(scaled), stream.labels, 25)
    order = np.random.default_rng(0).permutation(len(y))
    X, y = X[order], y[order]
    cut = int(0.8 * len(y))
    model, history = train_classifier(X[:cut], y[:cut], X[cut:], y[cut:],
                                      TrainConfig(max_epochs=30, patience=5, seed=0))
    artifact = ModelArtifact(1, 25, scaler, reducer, compress_model(model, 1), 1.0)
    return dict(stream=stream, scaler=scaler, reducer=reducer, X=X, y=y, cut=cut,
                model=model, history=history, artifact=artifact)


# -- acceptance reporting -------------------------------------------------------------------

_criteria: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    n, title = marker.args
    if report.when == "call" or report.failed:
        detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        _criteria[n] = (title, "PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, verdict, detail = _criteria[n]
        line = f"criterion {n:>2} {verdict}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
