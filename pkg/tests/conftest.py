import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from rootguide.se3 import Pose, Rotation

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("fast", max_examples=10, deadline=None)
settings.load_profile("default")


def random_rotation(rng: np.random.Generator) -> Rotation:
    q = rng.normal(size=4)
    return Rotation.from_quat(q)


def random_pose(rng: np.random.Generator, scale: float = 2.0) -> Pose:
    return Pose(rng.uniform(-scale, scale, size=3), random_rotation(rng))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


unit_quats = (
    st.lists(st.floats(-1.0, 1.0, allow_nan=False), min_size=4, max_size=4)
    .filter(lambda q: np.linalg.norm(q) > 1e-3)
    .map(lambda q: Rotation.from_quat(q))
)

positions = st.lists(st.floats(-5.0, 5.0, allow_nan=False), min_size=3, max_size=3).map(np.array)

poses = st.builds(Pose, positions, unit_quats)


# acceptance reporting: one PASS/FAIL line per criterion in the terminal summary

def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when == "teardown":
        return
    number, title = marker.args
    rows = item.config._criteria
    failed = report.failed or (report.when == "setup" and report.skipped)
    if report.when == "call" or failed:
        measured = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        prev = rows.get(number)
        ok = not failed and (prev is None or prev[1])
        rows[number] = (title, ok, measured)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = getattr(config, "_criteria", {})
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(rows):
        title, ok, measured = rows[number]
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title}"
        if measured:
            line += f"  [{measured}]"
        terminalreporter.write_line(line)
