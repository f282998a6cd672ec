import numpy as np
import pytest

from sae_ssd.population import AdjacencyGraph, Population, synth_population

CRITERIA = {}


def record_criterion(number, passed, detail=""):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    CRITERIA[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[k])


@pytest.fixture(scope="session")
def small_bundle():
    return synth_population(12, 2, seed=3)


@pytest.fixture(scope="session")
def desk_bundle():
    return synth_population(30, 3, seed=7)


@pytest.fixture
def cycle4():
    return AdjacencyGraph(("a", "b", "c", "d"), np.array([[0, 1], [1, 2], [2, 3], [3, 0]]))


@pytest.fixture
def tiny_pop():
    N = np.array([[100, 300], [200, 400]])
    Y = np.array([[10, 30], [40, 100]])
    return Population(N, Y, ("A", "B"), ("young", "old"))
