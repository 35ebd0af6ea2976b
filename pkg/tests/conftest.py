import gzip
from functools import lru_cache
from pathlib import Path
from typing import List

import numpy as np
import pytest

from geoseq.molgraph import Molecule3D, parse_xyz

DATA = Path(__file__).parent / "data"
FIXTURE = DATA / "qm9_style.xyz.gz"


@lru_cache(maxsize=1)
def _fixture() -> tuple:
    with gzip.open(FIXTURE, "rt", encoding="utf-8") as fh:
        return tuple(parse_xyz(fh.read()))


@pytest.fixture(scope="session")
def qm9_style() -> List[Molecule3D]:
    return list(_fixture())


def fixture_molecules() -> List[Molecule3D]:
    return list(_fixture())


def random_cloud(rng: np.random.Generator, n: int) -> Molecule3D:
    """Random atoms with pairwise separation >= 0.9 A, so geometry is generic."""
    coords = []
    while len(coords) < n:
        p = rng.uniform(-3.0, 3.0, size=3)
        if all(np.linalg.norm(p - q) >= 0.9 for q in coords):
            coords.append(p)
    atoms = rng.choice([1, 6, 7, 8, 9], size=n)
    return Molecule3D(tuple(int(z) for z in atoms), np.array(coords))


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one PASS/FAIL/SKIP line per acceptance criterion for the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
