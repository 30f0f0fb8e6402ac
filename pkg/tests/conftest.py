import csv

import numpy as np
import pytest

from hetor.data import Dataset

# Cells of the pre-aggregated contingency anchor: (n00, n01, n10, n11)
ANCHOR_CELLS = (218069, 16399, 305751, 25785)


def anchor_dataset() -> Dataset:
    n00, n01, n10, n11 = ANCHOR_CELLS
    X = np.zeros((4, 1))
    return Dataset(X, [0, 0, 1, 1], [0, 1, 0, 1], weight=[n00, n01, n10, n11],
                   feature_names=("const",))


def simulate_or(n=800, p=4, seed=0, effect=1.5):
    """Binary data whose log odds ratio flips sign on x0 < 0.5."""
    rng = np.random.default_rng(seed)
    X = rng.random((n, p))
    t = rng.integers(0, 2, n).astype(float)
    lo = np.where(X[:, 0] < 0.5, effect, -effect)
    y = (rng.random(n) < 1 / (1 + np.exp(-(-0.2 + lo * t)))).astype(float)
    return Dataset(X, t, y)


def write_csv(path, data: Dataset, scores=None, score_column="score"):
    """Dump a Dataset in the CLI's CSV layout (empty cell = missing treatment)."""
    header = list(data.feature_names) + ["treatment", "outcome"]
    if data.weight is not None:
        header.append("weight")
    if scores is not None:
        header.append(score_column)
        full = np.full(data.n, np.nan)
        full[data.missing] = scores
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(data.n):
            t = data.treatment[i]
            row = [repr(float(v)) for v in data.X[i]]
            row.append("" if np.isnan(t) else str(int(t)))
            row.append(repr(float(data.outcome[i])))
            if data.weight is not None:
                row.append(repr(float(data.weight[i])))
            if scores is not None:
                row.append("" if np.isnan(full[i]) else repr(float(full[i])))
            w.writerow(row)
    return path


@pytest.fixture
def or_data():
    return simulate_or()


# ---------------------------------------------------------------- acceptance report

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion number and title")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, text = marker.args
    entry = _ACCEPTANCE.setdefault(n, {"text": text, "ok": True, "ran": False})
    if call.when == "call" or call.excinfo is not None:
        entry["ran"] = True
        if call.excinfo is not None:
            entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        e = _ACCEPTANCE[n]
        status = "PASS" if e["ok"] and e["ran"] else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {n:>2}: {e['text']}")
