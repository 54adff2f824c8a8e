import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def translation_run():
    """The 64x128 translation benchmark after 500 fixed-support steps, with history."""
    from spacetime_ot.optimizer import PhaseSchedule, run
    from spacetime_ot.problems import translation_problem

    spec = translation_problem(schedule=PhaseSchedule(neumann_iters=500))
    init = spec.initial_state()
    snaps = {}

    def keep(st):
        if st.iteration in (1, 50, 200):
            snaps[st.iteration] = st

    final = run(init, keep)
    return spec, init, snaps, final


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "LINES", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
