import numpy as np
import pytest
from hypothesis import strategies as st

from ichfuse.confmap import ScanRecord


def random_scan(rng, n, C=5, conc=None, scan_id="scan"):
    """Random scan with Dirichlet slice vectors (concentration drawn if not given)."""
    a = rng.uniform(0.2, 5.0) if conc is None else conc
    P = rng.dirichlet(np.full(C, a), size=n)
    return ScanRecord.from_array(scan_id, P)


@st.composite
def scans(draw, min_n=1, max_n=8, C=5):
    n = draw(st.integers(min_n, max_n))
    rows = []
    for _ in range(n):
        raw = draw(st.lists(st.floats(0.0, 1.0), min_size=C, max_size=C).filter(lambda v: sum(v) > 1e-3))
        raw = np.asarray(raw)
        rows.append(raw / raw.sum())
    return ScanRecord.from_array("h", np.array(rows))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
