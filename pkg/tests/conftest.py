import pytest

from rollupbench.simulation import paper_repro, run_scenario


@pytest.fixture(scope="session")
def repro():
    return run_scenario(paper_repro())
