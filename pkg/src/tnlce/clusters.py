"""Generalized-loop cluster enumeration and inclusion-exclusion weights.

Regions are site subsets stored as integer bitmasks.  A loop cluster is a
connected induced subgraph whose non-anchor sites all have induced degree
at least two; anchor (observable) sites are exempt, which admits the
anomalous tree-like attachments that arise when norm-network messages are
reused for observable numerators.  Counting numbers follow the recursion
c(r) = 1 - sum over strict super-regions, evaluated top down.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .tngraph import SiteGraph

MAX_MASK_BITS = 63  # masks are manipulated as numpy uint64 in bulk steps


class ClusterError(ValueError):
    pass


def _bits(mask: int):
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def mask_of(sites: Iterable[int]) -> int:
    m = 0
    for s in sites:
        m |= 1 << s
    return m


def sites_of(mask: int) -> tuple[int, ...]:
    return tuple(_bits(mask))


def _component(g: SiteGraph, mask: int, seed_bit: int) -> int:
    comp = seed_bit
    frontier = seed_bit
    while frontier:
        grown = 0
        for v in _bits(frontier):
            grown |= g.adj_masks[v]
        frontier = grown & mask & ~comp
        comp |= frontier
    return comp


def mask_components(g: SiteGraph, mask: int) -> list[int]:
    comps = []
    rest = mask
    while rest:
        comp = _component(g, rest, rest & -rest)
        comps.append(comp)
        rest &= ~comp
    return comps


def mask_connected(g: SiteGraph, mask: int) -> bool:
    if mask == 0:
        return True
    return _component(g, mask, mask & -mask) == mask


@dataclass(frozen=True)
class Region:
    """A connected site subset with its anchors; identity is the site set."""

    graph: SiteGraph
    mask: int
    anchors_mask: int

    def __post_init__(self):
        if self.anchors_mask & ~self.mask:
            raise ClusterError("anchors must lie inside the region")

    @property
    def sites(self) -> tuple[int, ...]:
        return sites_of(self.mask)

    @property
    def anchors(self) -> tuple[int, ...]:
        return sites_of(self.anchors_mask)

    @property
    def size(self) -> int:
        return self.mask.bit_count()

    @property
    def bonds(self) -> tuple[int, ...]:
        """All lattice bonds internal to the site set."""
        g = self.graph
        return tuple(
            bid
            for bid, (a, b) in enumerate(g.bonds)
            if (self.mask >> a) & 1 and (self.mask >> b) & 1
        )

    def is_anchor(self, site: int) -> bool:
        return bool((self.anchors_mask >> site) & 1)

    def key(self) -> int:
        return self.mask

    def __repr__(self) -> str:  # pragma: no cover
        return f"Region(sites={self.sites}, anchors={self.anchors})"


def region_from_sites(
    g: SiteGraph, sites: Iterable[int], anchors: Iterable[int] = ()
) -> Region:
    return Region(g, mask_of(sites), mask_of(anchors))


def _min_degree_ok(g: SiteGraph, mask: int, anchors_mask: int) -> bool:
    for v in _bits(mask & ~anchors_mask):
        if (g.adj_masks[v] & mask).bit_count() < 2:
            return False
    return True


def _enumerate_from(
    g: SiteGraph, start_mask: int, anchors_mask: int, cmax: int, base_forbidden: int
) -> list[int]:
    """All connected supersets of ``start_mask`` (<= cmax sites) that pass
    the generalized-loop degree filter.  Each superset is visited once via
    sibling-exclusion DFS; branches whose degree deficit can no longer be
    repaired within the size budget are pruned.
    """
    adj = g.adj_masks
    max_deg = max((m.bit_count() for m in adj), default=0)
    out: list[int] = []

    def rec(mask: int, size: int, frontier: int, forbidden: int) -> None:
        if _min_degree_ok(g, mask, anchors_mask):
            out.append(mask)
        budget = cmax - size
        if budget == 0:
            return
        deficient = 0
        for v in _bits(mask & ~anchors_mask):
            if (adj[v] & mask).bit_count() < 2:
                if (adj[v] & ~mask & ~forbidden) == 0:
                    return  # dead site: can never reach degree 2
                deficient += 1
        if deficient > budget * max_deg:
            return
        cand = frontier & ~forbidden
        tried = 0
        for v in _bits(cand):
            bit = 1 << v
            rec(
                mask | bit,
                size + 1,
                (frontier | adj[v]) & ~(mask | bit),
                forbidden | tried,
            )
            tried |= bit
    frontier = 0
    for v in _bits(start_mask):
        frontier |= adj[v]
    frontier &= ~start_mask
    rec(start_mask, start_mask.bit_count(), frontier, base_forbidden)
    return out


def enumerate_loop_clusters(
    g: SiteGraph, anchors: Iterable[int], cmax: int
) -> list[Region]:
    """All loop clusters up to ``cmax`` sites containing the anchor set.

    With an empty anchor set, every generalized loop anywhere on the graph
    is returned (used for free-energy style expansions and girth checks).
    Results are deduplicated canonically and sorted by (size, mask).
    """
    if g.n_sites > MAX_MASK_BITS:
        raise ClusterError(f"graphs above {MAX_MASK_BITS} sites unsupported")
    anchors_mask = mask_of(anchors)
    n_anchors = anchors_mask.bit_count()
    if cmax < n_anchors:
        raise ClusterError(f"cmax={cmax} below anchor count {n_anchors}")
    if anchors_mask:
        if not mask_connected(g, anchors_mask):
            raise ClusterError("anchor set must be connected")
        masks = _enumerate_from(g, anchors_mask, anchors_mask, cmax, 0)
    else:
        masks = []
        for v in g.sites():
            if cmax < 1:
                break
            forbidden = (1 << v) - 1  # canonical start: forbid smaller ids
            masks.extend(_enumerate_from(g, 1 << v, 0, cmax, forbidden))
    masks = sorted(set(masks), key=lambda m: (m.bit_count(), m))
    return [Region(g, m, anchors_mask) for m in masks]


@dataclass
class RegionPoset:
    """Regions closed under intersection, with counting numbers."""

    graph: SiteGraph
    anchors_mask: int
    masks: list[int]
    counting: dict[int, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.masks)

    def regions(self) -> list[Region]:
        return [Region(self.graph, m, self.anchors_mask) for m in self.masks]

    def counting_of(self, region: Region | int) -> int:
        mask = region if isinstance(region, int) else region.mask
        if not self.counting:
            raise ClusterError("counting numbers not assigned yet")
        return self.counting[mask]


def close_under_intersection(regions: Sequence[Region]) -> RegionPoset:
    """Close a family of regions under pairwise intersection.

    Intersections are split into connected components; with anchors, only
    the component containing the anchor set is kept (the rest cancels
    between observable numerators and denominators), otherwise every
    component is kept.
    """
    if not regions:
        raise ClusterError("no regions to close")
    g = regions[0].graph
    anchors_mask = regions[0].anchors_mask
    for r in regions:
        if r.anchors_mask != anchors_mask or r.graph is not g:
            raise ClusterError("regions must share one graph and anchor set")
    known: set[int] = {r.mask for r in regions}
    small = g.n_sites <= 27  # dense seen-bitmap over the mask universe fits
    if small:
        dtype = np.uint32
        seen = np.zeros(1 << g.n_sites, dtype=bool)
        seen[np.fromiter(known, dtype=np.int64)] = True
        seen[0] = True
    else:
        dtype = np.uint64
        seen = None
    known_arr = np.array(sorted(known), dtype=dtype)
    fresh_arr = known_arr
    while fresh_arr.size:
        novel_chunks = []
        block = max(1, (1 << 23) // max(1, fresh_arr.size))
        for lo in range(0, known_arr.size, block):
            inter = (known_arr[lo : lo + block, None] & fresh_arr[None, :]).ravel()
            if small:
                flags = seen[inter]
                if flags.all():
                    continue
                novel = np.unique(inter[~flags])
                seen[novel] = True
            else:
                novel = np.unique(inter)
            novel_chunks.append(novel)
        if novel_chunks:
            cand = np.unique(np.concatenate(novel_chunks))
            if not small:
                cand = cand[~np.isin(cand, known_arr, assume_unique=True)]
        else:
            cand = np.empty(0, dtype=dtype)
        new_masks: set[int] = set()
        for m in cand.tolist():
            if m == 0 or m in known:
                continue
            if anchors_mask:
                comp = _component(g, m, anchors_mask & -anchors_mask)
                if anchors_mask & ~comp:
                    continue  # anchors split (cannot happen for bonded anchors)
                if comp not in known:
                    new_masks.add(comp)
            else:
                for comp in mask_components(g, m):
                    if comp not in known:
                        new_masks.add(comp)
        known.update(new_masks)
        if small and new_masks:
            seen[np.fromiter(new_masks, dtype=np.int64)] = True
        fresh_arr = np.array(sorted(new_masks), dtype=dtype)
        known_arr = np.array(sorted(known), dtype=dtype)
    ordered = sorted(known, key=lambda m: (-m.bit_count(), m))
    return RegionPoset(g, anchors_mask, ordered)


def counting_numbers(poset: RegionPoset) -> RegionPoset:
    """Assign c(r) = 1 - sum of c over strict super-regions, top down."""
    masks = sorted(poset.masks, key=lambda m: (-m.bit_count(), m))
    arr = np.array(masks, dtype=np.uint64)
    c = np.zeros(len(masks), dtype=np.int64)
    for i, m in enumerate(masks):
        sup = (arr & np.uint64(m)) == np.uint64(m)
        sup[i] = False
        c[i] = 1 - int(c[sup].sum())
    poset.masks = masks
    poset.counting = {m: int(c[i]) for i, m in enumerate(masks)}
    return poset


def counting_identity_holds(poset: RegionPoset) -> bool:
    """Check sum over supersets-or-equal of c(a) == 1 for every region."""
    arr = np.array(poset.masks, dtype=np.uint64)
    c = np.array([poset.counting[m] for m in poset.masks], dtype=np.int64)
    for m in poset.masks:
        sup = (arr & np.uint64(m)) == np.uint64(m)
        if int(c[sup].sum()) != 1:
            return False
    return True


def dump_regions(poset: RegionPoset) -> str:
    """Human-readable poset listing (site tuples and counting numbers)."""
    lines = [f"# {len(poset.masks)} regions, anchors={sites_of(poset.anchors_mask)}"]
    for m in poset.masks:
        c = poset.counting.get(m, "?") if poset.counting else "?"
        lines.append(f"c={c:>3} sites={sites_of(m)}")
    return "\n".join(lines) + "\n"


def reduce_region(region: Region, anchors: Iterable[int] | None = None) -> Region:
    """Strip non-anchor degree-1 sites until none remain.

    Tree-like decorations contract to the message fixed point, so the
    result evaluates identically; fully tree-like regions collapse to the
    anchor region itself.
    """
    g = region.graph
    anchors_mask = (
        region.anchors_mask if anchors is None else mask_of(anchors)
    )
    mask = region.mask
    changed = True
    while changed:
        changed = False
        for v in _bits(mask & ~anchors_mask):
            if (g.adj_masks[v] & mask).bit_count() < 2:
                mask &= ~(1 << v)
                changed = True
    return Region(g, mask, anchors_mask & mask)
