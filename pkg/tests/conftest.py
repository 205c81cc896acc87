import functools

import numpy as np
import pytest
from hypothesis import settings

from compatswe.mesh import build_disk, build_periodic_rectangle
from compatswe.swe import Physics, ShallowWaterModel

settings.register_profile("default", max_examples=20, deadline=None)
settings.load_profile("default")


@functools.lru_cache(maxsize=None)
def disk(level):
    return build_disk(level)


@functools.lru_cache(maxsize=None)
def torus(n, L=1.0):
    return build_periodic_rectangle(n, n, L, L)


@functools.lru_cache(maxsize=None)
def channel(n):
    return build_periodic_rectangle(n, n, 1.0, 1.0, True, False)


@functools.lru_cache(maxsize=None)
def model(kind, level, scheme="prognostic_Z", f0=0.0, beta=0.0, g=1.0, degree=2):
    mesh = {"disk": disk, "torus": torus, "channel": channel}[kind](level)
    return ShallowWaterModel(mesh, degree, scheme, Physics(g=g, f0=f0, beta=beta))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = []


@pytest.fixture
def report(capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def _report(number, name, ok, detail=""):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'} {name}: {detail}".rstrip()
        ACCEPTANCE.append((number, line))
        with capsys.disabled():
            print("\n" + line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
