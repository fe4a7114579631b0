import numpy as np
import pytest

from conceptnav.concepts import SpatialConceptModel
from conceptnav.gridmap import CellState, OccupancyGrid, build_costmap


def open_grid(width, height, resolution=1.0, origin=(0.0, 0.0)):
    return OccupancyGrid.from_array(np.full((height, width), CellState.FREE, dtype=np.int8),
                                    resolution, origin)


def open_costmap(width, height, resolution=1.0):
    return build_costmap(open_grid(width, height, resolution), 0.0, 0.0)


def place_model(places, vocabulary, sigma=1.0, mixture=None):
    """One concept per place. ``places`` is a list of ((x, y), {word: prob}) pairs;
    unlisted words share the remaining probability mass equally."""
    vocabulary = tuple(vocabulary)
    L = len(places)
    W = np.zeros((L, len(vocabulary)))
    for l, (_, words) in enumerate(places):
        rest = [w for w in vocabulary if w not in words]
        left = 1.0 - sum(words.values())
        for j, w in enumerate(vocabulary):
            W[l, j] = words[w] if w in words else left / len(rest)
    means = np.array([p for p, _ in places], dtype=float)
    covs = np.repeat((np.eye(2) * sigma ** 2)[None], L, axis=0)
    pi = np.full(L, 1.0 / L) if mixture is None else np.asarray(mixture, dtype=float)
    return SpatialConceptModel(vocabulary, pi, W, np.eye(L), means, covs)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


CRITERIA = []


@pytest.fixture
def criterion(capsys):
    """Record one pass/fail line for an acceptance criterion, printed live and in the summary."""

    def record(number, title, passed, detail=""):
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        CRITERIA.append(line)
        with capsys.disabled():
            print("\n" + line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
