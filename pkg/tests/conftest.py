"""Shared fixtures: the expensive kernels are built once per session.

The subordinated gasket(7) kernel takes minutes to accumulate; every
test that needs it (most of the acceptance suite) shares one instance.
"""

from __future__ import annotations

import numpy as np
import pytest

from fractalwalks.graphs import gasket_graph, lattice_graph
from fractalwalks.kernels import nearest_neighbor_kernel, subordinate_kernel


@pytest.fixture(scope="session")
def gasket4():
    return gasket_graph(4)


@pytest.fixture(scope="session")
def gasket5():
    return gasket_graph(5)


@pytest.fixture(scope="session")
def gasket6():
    return gasket_graph(6)


@pytest.fixture(scope="session")
def gasket7():
    return gasket_graph(7)


@pytest.fixture(scope="session")
def sub_g6(gasket6):
    base = nearest_neighbor_kernel(gasket6, lazy=0.5)
    return subordinate_kernel(base, beta=2.1, n_terms=640)


@pytest.fixture(scope="session")
def sub_g7(gasket7):
    base = nearest_neighbor_kernel(gasket7, lazy=0.5)
    return subordinate_kernel(base, beta=2.1, n_terms=3200)


@pytest.fixture(scope="session")
def deep_center_g7(gasket7):
    return int(np.argmax(gasket7.boundary_distance()))


@pytest.fixture(scope="session")
def lattice1d():
    return lattice_graph(1, 257)
