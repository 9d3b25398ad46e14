import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from renormflow.grid import TorusGrid, sample_white_noise
from renormflow.kernels import KernelFactory

settings.register_profile("repo", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def grid64():
    return TorusGrid(1, 64)


@pytest.fixture(scope="session")
def factory64(grid64):
    return KernelFactory(grid64, 0.4)


@pytest.fixture(scope="session")
def noise64(grid64):
    return sample_white_noise(grid64, 1).values


@pytest.fixture(scope="session")
def flow64(factory64, noise64):
    """Flow at d=1, N=64, sigma=0.4, kappa=1/8 with mode-sum counterterms."""
    from renormflow.flow import FlowConfig, integrate_flow
    from renormflow.renorm import counterterms_mode
    ct = counterterms_mode(factory64, 0.125, 2)
    res = integrate_flow(noise64, 0.125, ct, FlowConfig(steps=1024), factory64,
                         checkpoints=(0.25, 0.5, 0.75))
    return ct, res


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record a named acceptance check, then assert it."""
    def record(label, checks):
        ok = all(bool(v) for v in checks.values())
        failed = ", ".join(k for k, v in checks.items() if not v)
        ACCEPTANCE.append("%-44s %s%s" % (label, "PASS" if ok else "FAIL",
                                         "" if ok else "  (" + failed + ")"))
        assert ok, failed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
