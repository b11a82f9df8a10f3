import json
from pathlib import Path

import numpy as np
import pytest

from govdrift import synth
from govdrift.harness import build_profile, prepare_windows
from govdrift.ingest import RecordBatch, WindowPolicy

FIXTURES = Path(__file__).parent / "fixtures"

# filled by tests/test_acceptance.py, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def published_baseline():
    doc = json.loads((FIXTURES / "published_baseline.json").read_text())
    cols = doc["columns"]
    return [dict(zip(cols, row)) for row in doc["rows"]], doc


@pytest.fixture(scope="session")
def small_prepared():
    batch = synth.generate(3000, 5, seed=11)
    return prepare_windows(batch, WindowPolicy())


@pytest.fixture(scope="session")
def small_profile(small_prepared):
    return build_profile(small_prepared)


def make_batch(n, *, seed=0, features=("a", "b"), labeled=True, start="2020-01-01", days=90):
    rng = np.random.default_rng(seed)
    stamps = np.datetime64(start, "us") + (rng.integers(0, days, n) * 86_400_000_000).astype(
        "timedelta64[us]"
    )
    return RecordBatch(
        ids=[f"r{i:05d}" for i in range(n)],
        timestamps=stamps,
        features={f: rng.normal(size=n) for f in features},
        labels=rng.integers(0, 2, n) if labeled else None,
    )
