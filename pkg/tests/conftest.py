"""Shared small-scale fixtures: one cheap Brownian setup reused everywhere.

The unit tests run on a deliberately modest grid (101 nodes, 100 steps,
400 paths) so the whole suite stays fast; the acceptance module builds its
own reference-scale context.
"""
import numpy as np
import pytest

from divlab import (CoefficientField, KernelChain, SpaceTimeGrid, Weight,
                    extract_parts, fundamental_solution, sample_paths)


@pytest.fixture(scope="session")
def grid1():
    return SpaceTimeGrid(box=((-4.0, 4.0),), shape=(101,), nt=100,
                         horizon=0.5)


@pytest.fixture(scope="session")
def cf_id():
    return CoefficientField.identity(1)


@pytest.fixture(scope="session")
def w1():
    return Weight(1.0)


@pytest.fixture(scope="session")
def chain1(cf_id, grid1):
    return KernelChain(cf_id, grid1)


@pytest.fixture(scope="session")
def kernel1(cf_id, grid1):
    # source at the origin: an exact node of the 101-point lattice
    return fundamental_solution(cf_id, grid1, 0, [0.0])


@pytest.fixture(scope="session")
def ens1(chain1):
    return sample_paths(chain1, 0, [0.0], 400, seed=11)


@pytest.fixture(scope="session")
def parts1(ens1, kernel1):
    return extract_parts(ens1, kernel1)
