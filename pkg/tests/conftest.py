import time

import numpy as np
import pytest
from hypothesis import settings

from nhtorus.jerk import JerkSpec, jerk_field, jerk_section, limiting_torus_point
from nhtorus.torus import sample_attractor

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# lines printed by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def jerk_start(theta0=0.0):
    return limiting_torus_point(np.pi / 2, theta0)


class SampleCache:
    """Burn/keep section samples of the jerk flow per eps, computed once.

    ``seconds`` records the wall time each sample took when first computed.
    """

    def __init__(self):
        self.samples = {}
        self.seconds = {}

    def __call__(self, eps, burn=200, keep=1000):
        key = (eps, burn, keep)
        if key not in self.samples:
            start = time.perf_counter()
            f = jerk_field(JerkSpec(eps=eps))
            self.samples[key] = sample_attractor(f, jerk_section(0.0), jerk_start(), burn, keep)
            self.seconds[key] = time.perf_counter() - start
        return self.samples[key]


@pytest.fixture(scope="session")
def jerk_samples():
    return SampleCache()


@pytest.fixture(scope="session")
def jerk_torus():
    """Full detection at eps = 0.2 with the command-line defaults (keep 2500), per section phase."""
    from nhtorus.jerk import equilibrium_seed, limiting_curve_section, limiting_torus_distance
    from nhtorus.torus import detect_torus

    cache = {}

    def get(theta0=0.0):
        if theta0 not in cache:
            sec = jerk_section(theta0)
            cache[theta0] = detect_torus(
                jerk_field(JerkSpec(eps=0.2)),
                sec,
                jerk_start(theta0),
                eps=0.2,
                burn=200,
                keep=2500,
                reference=limiting_curve_section(sec, theta0),
                distance=limiting_torus_distance,
                seed=equilibrium_seed(sec, theta0),
            )
        return cache[theta0]

    return get
