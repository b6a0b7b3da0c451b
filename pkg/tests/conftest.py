import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from isac.model import ChannelGenParams, SystemDims, build_scenario

settings.register_profile(
    "default",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

SMALL_DIMS = SystemDims(n_tx=16, n_rx=2, n_streams=1, n_users=2, n_rf_tx=4, n_rf_rx=1, n_sensor=4, n_clutter=1)
SMALL_GEN = ChannelGenParams(n_paths_per_user=2)


def small_scenario(seed, dims=SMALL_DIMS, gen=SMALL_GEN):
    return build_scenario(np.random.default_rng(seed), dims=dims, gen=gen)


@pytest.fixture
def small():
    return small_scenario(0)


@pytest.fixture(scope="session")
def default_scenario():
    return build_scenario(np.random.default_rng(1))


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report(request):
    """Callable that prints a criterion line now and again in the run summary."""
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def record(line):
        _ACCEPTANCE_LINES.append(line)
        with capman.global_and_fixture_disabled():
            print(f"\n{line}", flush=True)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
