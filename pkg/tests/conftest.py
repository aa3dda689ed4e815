import numpy as np
import pytest

from ssgl.data import SEVERITY_CLASSES


@pytest.fixture
def catalog():
    return SEVERITY_CLASSES


@pytest.fixture
def write(tmp_path):
    def _write(name, text, mode="w"):
        path = tmp_path / name
        if mode == "wb":
            path.write_bytes(text)
        else:
            path.write_text(text)
        return path

    return _write


def random_problem(rng: np.random.Generator, n: int, k: int, method: str):
    """Random points, config and one-hot/zero Y0 with every class labeled at least once."""
    from ssgl.graph import GraphConfig, build_graph

    x = rng.normal(size=(n, 3))
    if method == "knn":
        cfg = GraphConfig("knn", k=int(rng.integers(2, 6)))
    elif method == "epsilon":
        cfg = GraphConfig("epsilon", k=None, epsilon=float(rng.uniform(1.0, 2.5)))
    else:
        cfg = GraphConfig("full", k=None)
    graph = build_graph(x, cfg)
    y0 = np.zeros((n, k))
    rows = rng.choice(n, size=max(k, n // 5), replace=False)
    for pos, r in enumerate(rows):
        y0[r, pos % k if pos < k else rng.integers(k)] = 1.0
    return graph, y0


# ---------------------------------------------------------------- acceptance report

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, name): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    number, name = marker.args
    if report.failed or report.when == "call":
        detail = getattr(item, "criterion_detail", "")
        _CRITERIA[number] = (name, "PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        name, status, detail = _CRITERIA[number]
        line = f"[{status}] {number}. {name}"
        terminalreporter.write_line(line + (f" -- {detail}" if detail else ""))
