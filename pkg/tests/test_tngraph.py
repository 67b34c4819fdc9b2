"""Lattice construction, adjacency, and network label bookkeeping."""

import numpy as np
import pytest

from tnlce.tensor import DenseTensor, TensorError
from tnlce.tngraph import (
    GraphError,
    IndexedNetwork,
    SiteGraph,
    build_lattice,
    girth,
    neighbors,
)


@pytest.mark.parametrize(
    "dims,periodic,sites,bonds",
    [
        ((2, 2), False, 4, 4),
        ((10, 10), False, 100, 180),
        ((3, 3, 3), True, 27, 81),
        ((4,), False, 4, 3),
        ((6, 6), False, 36, 60),
    ],
)
def test_lattice_counts(dims, periodic, sites, bonds):
    g = build_lattice(dims, periodic)
    assert g.n_sites == sites
    assert g.n_bonds == bonds


def test_lattice_rejects_small_extents():
    with pytest.raises(GraphError):
        build_lattice((1, 4))
    with pytest.raises(GraphError):
        build_lattice((2, 2), periodic=True)
    with pytest.raises(GraphError):
        build_lattice((2, 3), periodic=(True, False))


def test_neighbor_counts():
    g = build_lattice((3, 3))
    center = g.site_of((1, 1))
    corner = g.site_of((0, 0))
    assert len(neighbors(g, center)) == 4
    assert len(neighbors(g, corner)) == 2
    g3 = build_lattice((3, 3, 3), periodic=True)
    assert all(len(neighbors(g3, s)) == 6 for s in g3.sites())


def test_neighbors_sorted_and_bond_ids():
    g = build_lattice((3, 3))
    for s in g.sites():
        nbrs = [n for n, _ in neighbors(g, s)]
        assert nbrs == sorted(nbrs)
        for n, bid in neighbors(g, s):
            assert g.bonds[bid] == (min(s, n), max(s, n))
    with pytest.raises(GraphError):
        neighbors(g, 99)


def test_degree_sum_equals_twice_bonds():
    for dims, periodic in [((4, 4), False), ((3, 5), False), ((3, 3), True)]:
        g = build_lattice(dims, periodic)
        assert sum(g.degree(s) for s in g.sites()) == 2 * g.n_bonds


def test_coordinates_roundtrip():
    g = build_lattice((3, 4, 5))
    for s in g.sites():
        assert g.site_of(g.coord_of(s)) == s
    # row-major ids
    assert g.site_of((0, 0, 0)) == 0
    assert g.site_of((0, 0, 1)) == 1
    assert g.site_of((0, 1, 0)) == 5


def test_bonds_canonically_sorted():
    g = build_lattice((3, 3))
    assert list(g.bonds) == sorted(g.bonds)
    assert len(set(g.bonds)) == g.n_bonds


def test_generic_graph_and_validation():
    tree = SiteGraph(4, [(0, 1), (1, 2), (1, 3)])
    assert tree.n_bonds == 3
    with pytest.raises(GraphError):
        SiteGraph(3, [(0, 1), (0, 1)])
    with pytest.raises(GraphError):
        SiteGraph(3, [(0, 0)])
    with pytest.raises(GraphError):
        SiteGraph(4, [(0, 1), (2, 3)])  # disconnected


def test_girth():
    assert girth(build_lattice((4, 4))) == 4
    assert girth(build_lattice((3, 3, 3), periodic=True)) == 3
    assert girth(SiteGraph(4, [(0, 1), (1, 2), (1, 3)])) == float("inf")


def test_indexed_network_validation():
    a = DenseTensor(("x", "y"), np.ones((2, 3)))
    b = DenseTensor(("y",), np.ones(3))
    net = IndexedNetwork({"a": a, "b": b})
    assert net.open_labels() == ("x",)
    assert net.bond_labels() == ("y",)
    with pytest.raises(TensorError):
        IndexedNetwork({"a": a, "b": b, "c": DenseTensor(("y",), np.ones(3))})
    with pytest.raises(TensorError):
        IndexedNetwork({"a": a, "b": DenseTensor(("y",), np.ones(4))})
