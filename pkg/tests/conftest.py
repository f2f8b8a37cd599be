import numpy as np
import pytest

from hmmgdm.gdm import HMMDiscretisation
from hmmgdm.mesh import FamilyTag, build_mesh, generate

FAMILIES = [f.value for f in FamilyTag]


@pytest.fixture(scope="session")
def level1():
    """Level-1 mesh and discretisation of every family."""
    out = {}
    for fam in FAMILIES:
        mesh = generate(fam, 1)
        out[fam] = (mesh, HMMDiscretisation(mesh))
    return out


@pytest.fixture
def unit_square():
    return build_mesh([(0, 0), (1, 0), (1, 1), (0, 1)], [[0, 1, 2, 3]])


@pytest.fixture
def two_triangles():
    return build_mesh([(0, 0), (1, 0), (1, 1), (0, 1)], [[0, 1, 2], [0, 2, 3]])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def verdict(request):
    """Record a one-line PASS/FAIL verdict per acceptance criterion."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", {})

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
