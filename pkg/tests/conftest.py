import pytest

from fusion_track.simulator import OvalTrack, default_lidar, default_radar, generate, overtake_scenario


@pytest.fixture(scope="session")
def oval():
    return OvalTrack()


@pytest.fixture(scope="session")
def track_map(oval):
    return oval.to_map()


@pytest.fixture(scope="session")
def short_sim():
    """40 s of the default overtake with realistic noise, delays and ghosts."""
    return generate(overtake_scenario(duration=40.0, seed=3))


def quiet_sensors(**kw):
    """Noiseless, undelayed, ghost-free sensors for oracle comparisons."""
    clean = dict(noise={}, delay_mean_ms=0.0, delay_p90_ms=0.0, dropout=0.0, ghost_rate=0.0, **kw)
    return [default_lidar(**clean), default_radar(**clean)]


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
