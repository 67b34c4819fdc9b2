"""Lattice graphs and generic labeled tensor networks.

Sites are integers 0..N-1, row-major over lattice coordinates.  Bonds are
canonically ordered (min site, max site, axis) so every enumeration in the
package is reproducible.  Downstream modules only rely on the generic
adjacency interface, so arbitrary connected graphs (trees in particular)
can be fed through ``SiteGraph``.
"""

from __future__ import annotations

from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .tensor import DenseTensor, TensorError


class GraphError(ValueError):
    """Raised for invalid lattice specs or graph queries."""


class SiteGraph:
    """Connected undirected graph over integer sites with indexed bonds."""

    def __init__(self, n_sites: int, bonds: Iterable[tuple[int, int]]):
        if n_sites < 1:
            raise GraphError("graph needs at least one site")
        canon = []
        seen = set()
        for a, b in bonds:
            if a == b:
                raise GraphError(f"self-loop bond on site {a}")
            if not (0 <= a < n_sites and 0 <= b < n_sites):
                raise GraphError(f"bond ({a},{b}) references unknown site")
            e = (min(a, b), max(a, b))
            if e in seen:
                raise GraphError(f"duplicate bond {e}")
            seen.add(e)
            canon.append(e)
        canon.sort()
        self.n_sites = n_sites
        self.bonds: tuple[tuple[int, int], ...] = tuple(canon)
        self._bond_index = {e: i for i, e in enumerate(self.bonds)}
        adj: list[list[tuple[int, int]]] = [[] for _ in range(n_sites)]
        for bid, (a, b) in enumerate(self.bonds):
            adj[a].append((b, bid))
            adj[b].append((a, bid))
        self.adjacency: tuple[tuple[tuple[int, int], ...], ...] = tuple(
            tuple(sorted(nb)) for nb in adj
        )
        self.adj_masks: tuple[int, ...] = tuple(
            sum(1 << n for n, _ in nb) for nb in self.adjacency
        )
        if not self._connected():
            raise GraphError("graph is disconnected")

    def _connected(self) -> bool:
        if self.n_sites == 1:
            return True
        seen = 1
        frontier = [0]
        while frontier:
            v = frontier.pop()
            for n, _ in self.adjacency[v]:
                if not (seen >> n) & 1:
                    seen |= 1 << n
                    frontier.append(n)
        return seen == (1 << self.n_sites) - 1

    @property
    def n_bonds(self) -> int:
        return len(self.bonds)

    def sites(self) -> range:
        return range(self.n_sites)

    def degree(self, site: int) -> int:
        return len(self.adjacency[site])

    def bond_index(self, a: int, b: int) -> int:
        e = (min(a, b), max(a, b))
        if e not in self._bond_index:
            raise GraphError(f"no bond between sites {a} and {b}")
        return self._bond_index[e]

    def has_bond(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in self._bond_index

    def neighbors(self, site: int) -> tuple[tuple[int, int], ...]:
        if not (0 <= site < self.n_sites):
            raise GraphError(f"unknown site {site}")
        return self.adjacency[site]

    def __repr__(self) -> str:  # pragma: no cover
        return f"{type(self).__name__}(n_sites={self.n_sites}, n_bonds={self.n_bonds})"


class LatticeGraph(SiteGraph):
    """Hypercubic lattice (1D/2D/3D...) with per-axis boundary conditions."""

    def __init__(self, dims: Sequence[int], periodic: Sequence[bool]):
        dims = tuple(int(d) for d in dims)
        periodic = tuple(bool(p) for p in periodic)
        if len(dims) != len(periodic):
            raise GraphError("dims and periodic flags must align")
        if not dims:
            raise GraphError("at least one dimension required")
        for d, p in zip(dims, periodic):
            if d < 2:
                raise GraphError(f"lattice extent {d} < 2")
            if p and d < 3:
                raise GraphError(
                    f"periodic extent {d} would create doubled bonds; need >= 3"
                )
        self.dims = dims
        self.periodic = periodic
        n = int(np.prod(dims))
        bonds = []
        axes = {}
        for site in range(n):
            coord = self._coord(site, dims)
            for ax in range(len(dims)):
                if coord[ax] + 1 < dims[ax]:
                    nxt = list(coord)
                    nxt[ax] += 1
                elif periodic[ax]:
                    nxt = list(coord)
                    nxt[ax] = 0
                else:
                    continue
                other = int(np.ravel_multi_index(nxt, dims))
                e = (min(site, other), max(site, other))
                bonds.append(e)
                axes[e] = ax
        super().__init__(n, bonds)
        self.bond_axes: tuple[int, ...] = tuple(axes[e] for e in self.bonds)

    @staticmethod
    def _coord(site: int, dims: tuple[int, ...]) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unravel_index(site, dims))

    def coord_of(self, site: int) -> tuple[int, ...]:
        if not (0 <= site < self.n_sites):
            raise GraphError(f"unknown site {site}")
        return self._coord(site, self.dims)

    def site_of(self, coord: Sequence[int]) -> int:
        coord = tuple(coord)
        if len(coord) != len(self.dims) or any(
            not (0 <= c < d) for c, d in zip(coord, self.dims)
        ):
            raise GraphError(f"coordinate {coord} outside lattice {self.dims}")
        return int(np.ravel_multi_index(coord, self.dims))


def build_lattice(
    dims: Sequence[int], periodic: bool | Sequence[bool] = False
) -> LatticeGraph:
    """Build a hypercubic lattice; ``periodic`` may be one flag or per-axis."""
    dims = tuple(dims)
    if isinstance(periodic, bool):
        periodic = tuple(periodic for _ in dims)
    return LatticeGraph(dims, tuple(periodic))


def neighbors(g: SiteGraph, site: int) -> tuple[tuple[int, int], ...]:
    """Sorted (neighbor, bond id) pairs of ``site``."""
    return g.neighbors(site)


def girth(g: SiteGraph) -> float:
    """Length of the shortest cycle, or inf for trees."""
    best = float("inf")
    for src in g.sites():
        dist = {src: 0}
        parent = {src: -1}
        queue = [src]
        while queue:
            v = queue.pop(0)
            for n, _ in g.adjacency[v]:
                if n not in dist:
                    dist[n] = dist[v] + 1
                    parent[n] = v
                    queue.append(n)
                elif parent[v] != n:
                    best = min(best, dist[v] + dist[n] + 1)
        if best == 3:
            break
    return best


class IndexedNetwork:
    """Tensors keyed by node id; shared labels denote contracted bonds.

    Every label may occur at most twice across the network with agreeing
    dimensions; labels occurring once are open indices.
    """

    def __init__(self, tensors: Mapping[Any, DenseTensor]):
        self.tensors: dict[Any, DenseTensor] = dict(tensors)
        occur: dict[str, list[Any]] = {}
        dims: dict[str, int] = {}
        for k, t in self.tensors.items():
            if not isinstance(t, DenseTensor):
                raise TensorError(f"node {k!r} is not a DenseTensor")
            for l in t.labels:
                occur.setdefault(l, []).append(k)
                d = t.dim(l)
                if l in dims and dims[l] != d:
                    raise TensorError(
                        f"label {l!r} has mismatched dims {dims[l]} vs {d}"
                    )
                dims[l] = d
        for l, ks in occur.items():
            if len(ks) > 2:
                raise TensorError(f"label {l!r} occurs {len(ks)} times")
        self._occur = occur
        self._dims = dims

    @property
    def label_nodes(self) -> dict[str, list[Any]]:
        return self._occur

    def label_dim(self, label: str) -> int:
        return self._dims[label]

    def open_labels(self) -> tuple[str, ...]:
        return tuple(l for l, ks in self._occur.items() if len(ks) == 1)

    def bond_labels(self) -> tuple[str, ...]:
        return tuple(l for l, ks in self._occur.items() if len(ks) == 2)
