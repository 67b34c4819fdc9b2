"""Shared fixtures: random states, tree networks, and slow SU fixtures."""

import numpy as np
import pytest

from tnlce.gauge_su import VidalState, product_state
from tnlce.tensor import DenseTensor
from tnlce.tngraph import IndexedNetwork, SiteGraph, build_lattice


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def random_tree_graph(rng, n_sites: int) -> SiteGraph:
    """Random labeled tree on n_sites (each new node attaches uniformly)."""
    bonds = [(int(rng.integers(0, i)), i) for i in range(1, n_sites)]
    return SiteGraph(n_sites, bonds)


def random_vidal_state(rng, g: SiteGraph, d: int, phys_dim: int = 2) -> VidalState:
    """Random normalized-spectrum Vidal state with bond dimension d."""
    state = product_state(g, np.eye(phys_dim, dtype=complex)[0])
    gammas = []
    for i in g.sites():
        shape = (phys_dim,) + (d,) * g.degree(i)
        data = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        labels = state.gammas[i].labels
        gammas.append(DenseTensor(labels, data))
    lambdas = []
    for _ in range(g.n_bonds):
        lam = np.sort(rng.uniform(0.2, 1.0, size=d))[::-1]
        lam /= lam[0]
        lambdas.append(lam)
    return VidalState(g, gammas, lambdas, phys_dim=phys_dim)


def random_closed_network(rng, g: SiteGraph, d: int, real: bool = False):
    """Closed tensor network on a site graph: one tensor per site, one
    shared label per bond, no open labels."""
    tensors = {}
    for i in g.sites():
        labels = tuple(f"e{b}" for _, b in g.neighbors(i))
        shape = (d,) * len(labels)
        data = rng.standard_normal(shape)
        if not real:
            data = data + 1j * rng.standard_normal(shape)
        tensors[i] = DenseTensor(labels, data)
    return IndexedNetwork(tensors)


@pytest.fixture(scope="session")
def chain4():
    return build_lattice((4,))


@pytest.fixture(scope="session")
def square22():
    return build_lattice((2, 2))


@pytest.fixture(scope="session")
def square44():
    return build_lattice((4, 4))
