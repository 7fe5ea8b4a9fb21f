import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tecflow.model import CostCoefficients, VppSpec

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_vpp(vid, c1, c2, p_max, c1_out=None, c2_out=None, p_max_out=None):
    """Same curve in both directions unless the export-side values are given."""
    return VppSpec(
        id=vid,
        g2c=CostCoefficients(c1, c2),
        c2g=CostCoefficients(c1 if c1_out is None else c1_out, c2 if c2_out is None else c2_out),
        p_max_g2c=p_max,
        p_max_c2g=p_max if p_max_out is None else p_max_out,
    )


@pytest.fixture
def symmetric_pair():
    return (make_vpp("vpp1", 1.0, 0.0, 10.0), make_vpp("vpp2", 1.0, 0.0, 10.0))


@pytest.fixture
def pinned_pair():
    return (make_vpp("vpp1", 1.0, 0.0, 2.0), make_vpp("vpp2", 1.0, 10.0, 10.0))


def random_fleet(rng: np.random.Generator, n: int):
    out = []
    for g in range(n):
        out.append(make_vpp(f"v{g}", float(rng.uniform(0.1, 2.0)), float(rng.uniform(0.0, 5.0)),
                            float(rng.uniform(0.5, 10.0)), float(rng.uniform(0.1, 2.0)),
                            float(rng.uniform(0.0, 5.0)), float(rng.uniform(0.5, 10.0))))
    return tuple(out)


# -- acceptance reporting -------------------------------------------------------------

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion, then assert it."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
