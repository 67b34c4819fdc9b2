"""Cluster contraction and the loop cluster expansion formulas.

Cluster values are exact contractions of region sub-networks terminated
by converged norm-network messages.  Ratios O_r from different regions
are combined either multiplicatively, prod_r O_r^c(r) (weighted geometric
mean, evaluated sign-tracked in log space), or additively,
sum_r c(r) * O_r (weighted arithmetic mean).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
import numpy as np

from . import clusters as _clusters
from .bp import (
    DoubledNetwork,
    MessageSet,
    bp_iterate,
    build_doubled,
    messages_from_lambdas,
    region_network,
)
from .clusters import Region, mask_of, sites_of
from .gauge_su import VidalState, to_symmetric
from .models import Model
from .tensor import DenseTensor, LogScalar, contract_pair, network_log_scalar

ZERO_RATIO_TOL = 1e-14


class EstimatorError(RuntimeError):
    pass


def cluster_contract(
    doubled: DoubledNetwork,
    msgs,
    region: Region,
    insertion: tuple[np.ndarray, tuple[int, ...]] | None = None,
) -> LogScalar:
    """Exact contraction of a region with boundary messages, in log form."""
    net = region_network(doubled, msgs, region.sites, insertion=insertion)
    value = network_log_scalar(net, allow_outer=True)
    if value.is_zero():
        raise EstimatorError(f"cluster {region.sites} contracted to zero")
    return value


def single_cluster_expectation(
    doubled: DoubledNetwork, msgs, op: np.ndarray, sites, cluster: Region
) -> complex:
    """O_r = <psi|O|psi>_r / <psi|psi>_r on a single cluster."""
    sites = tuple(sites)
    if mask_of(sites) & ~cluster.mask:
        raise EstimatorError(f"operator sites {sites} not inside the cluster")
    num = cluster_contract(doubled, msgs, cluster, insertion=(op, sites))
    den = cluster_contract(doubled, msgs, cluster)
    return (num / den).value


@dataclass
class ClusterValue:
    """One region's contracted norm, numerator, and observable ratio."""

    region: Region
    log_norm: LogScalar
    log_numerator: LogScalar
    ratio: complex


def cluster_value(
    doubled: DoubledNetwork, msgs, region: Region, op: np.ndarray, sites
) -> ClusterValue:
    """Contract one region with and without the operator insertion."""
    sites = tuple(sites)
    num = cluster_contract(doubled, msgs, region, insertion=(op, sites))
    den = cluster_contract(doubled, msgs, region)
    return ClusterValue(region, den, num, (num / den).value)


@dataclass
class RegionContribution:
    sites: tuple[int, ...]
    counting: int
    ratio: complex


@dataclass
class ExpansionEstimate:
    """Loop-cluster-expansion estimate of one observable at cluster size C."""

    observable: str
    c_max: int
    product_value: complex
    sum_value: complex
    n_regions: int
    contributions: list[RegionContribution]
    bp_value: complex
    flags: list[str] = field(default_factory=list)
    n_poset: int = 0

    def value(self, formula: str) -> complex:
        if formula == "product":
            return self.product_value
        if formula == "sum":
            return self.sum_value
        raise EstimatorError(f"unknown formula {formula!r}")


def _operator_schmidt(op: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a two-site operator into a sum of single-site products.

    O = sum_k A_k (x) B_k via SVD of the site-grouped rearrangement; the
    singular values are absorbed into the factors.
    """
    m = np.asarray(op, dtype=np.complex128)
    d = int(np.sqrt(m.shape[0]))
    re = m.reshape(d, d, d, d).transpose(0, 2, 1, 3).reshape(d * d, d * d)
    u, s, vh = np.linalg.svd(re)
    factors = []
    for k in range(len(s)):
        if s[k] < 1e-14 * s[0]:
            break
        a = (u[:, k] * s[k]).reshape(d, d)
        b = vh[k, :].reshape(d, d)
        factors.append((a, b))
    return factors


class ClusterEvaluator:
    """Caches region contractions for one (network, messages) pair.

    Regions are contracted in doubled (norm-network) form: per-site Y
    tensors with boundary messages absorbed directly, which is far cheaper
    than the generic single-layer path.  Two-site insertions are expanded
    as operator-Schmidt sums of single-site insertions, so every cached
    object is a per-site tensor.  Values are cached by the reduced
    canonical region plus the insertion key, so equal-valued clusters
    (tree decorations stripped) and repeated denominators across
    Hamiltonian terms are contracted once.
    """

    def __init__(self, doubled: DoubledNetwork, msgs):
        self.doubled = doubled
        self.msgs = msgs
        g = doubled.graph
        raw = msgs.messages if isinstance(msgs, MessageSet) else msgs
        self._msg = {k: np.asarray(v) for k, v in raw.items()}
        self._site_bonds: list[tuple[int, ...]] = [
            tuple(b for _, b in g.neighbors(i)) for i in g.sites()
        ]
        self._y: list[np.ndarray] = []
        for i in g.sites():
            t = doubled.network.tensors[i]
            order = tuple(f"B{b}" for b in self._site_bonds[i])
            self._y.append(t.transpose_to(order).data if order else t.data)
        self._yop: dict[tuple[int, str], np.ndarray] = {}
        self._ops: dict[str, tuple[np.ndarray, tuple[int, ...]]] = {}
        self._factors: dict[str, list[dict[int, str]]] = {}
        self._site_cache: dict[tuple, tuple[np.ndarray, tuple[int, ...]]] = {}
        self._values: dict[tuple, LogScalar] = {}

    # -- operator registration -------------------------------------------

    def register_op(self, op: np.ndarray, sites: tuple[int, ...]) -> str:
        op = np.asarray(op, dtype=np.complex128)
        sites = tuple(sites)
        key = f"{hash((sites, op.tobytes())):x}@{sites}"
        if key in self._ops:
            return key
        self._ops[key] = (op, sites)
        if len(sites) == 1:
            fid = self._register_site_op(sites[0], op)
            self._factors[key] = [{sites[0]: fid}]
        elif len(sites) == 2:
            i, j = sites
            terms = []
            for a, b in _operator_schmidt(op):
                terms.append(
                    {i: self._register_site_op(i, a), j: self._register_site_op(j, b)}
                )
            self._factors[key] = terms
        else:
            raise EstimatorError("insertions support one or two sites")
        return key

    def _register_site_op(self, site: int, op: np.ndarray) -> str:
        fid = f"{hash(op.tobytes()):x}"
        if (site, fid) not in self._yop:
            self._yop[(site, fid)] = self._doubled_site_tensor(site, op)
        return fid

    def _doubled_site_tensor(self, site: int, op: np.ndarray) -> np.ndarray:
        """Y-like tensor with the operator between bra and ket layers."""
        g = self.doubled.graph
        t = self.doubled.site_tensors[site]
        p = f"p{site}"
        bra = t.conj().relabeled(
            {f"v{b}": f"w{b}" for _, b in g.neighbors(site)} | {p: f"q{site}"}
        )
        op_t = DenseTensor((f"q{site}", p), op)
        y = contract_pair(contract_pair(bra, op_t), t)
        order = []
        shape = []
        for b in self._site_bonds[site]:
            order.extend([f"v{b}", f"w{b}"])
            shape.append(t.dim(f"v{b}") ** 2)
        return y.transpose_to(order).data.reshape(shape) if order else y.data

    # -- region contraction ----------------------------------------------

    def _site_tensor(
        self, site: int, region_mask: int, fid: str | None
    ) -> tuple[np.ndarray, tuple[int, ...]]:
        """Site tensor with boundary messages absorbed on cut bonds.

        Returns (array, remaining internal bond ids aligned with axes).
        """
        g = self.doubled.graph
        cut = 0
        for n, b in g.neighbors(site):
            if not (region_mask >> n) & 1:
                cut |= 1 << b
        key = (site, cut, fid)
        hit = self._site_cache.get(key)
        if hit is not None:
            return hit
        arr = self._y[site] if fid is None else self._yop[(site, fid)]
        bonds = list(self._site_bonds[site])
        for n, b in reversed(g.neighbors(site)):
            if (cut >> b) & 1:
                ax = bonds.index(b)
                arr = np.tensordot(arr, self._msg[(n, site)], axes=([ax], [0]))
                bonds.pop(ax)
        out = (arr, tuple(bonds))
        self._site_cache[key] = out
        return out

    def _contract_region(self, mask: int, opmap: dict[int, str]) -> LogScalar:
        pool: list[tuple[np.ndarray, tuple[int, ...]]] = []
        log_scale = 0.0
        for s in sites_of(mask):
            arr, bonds = self._site_tensor(s, mask, opmap.get(s))
            pool.append((arr, bonds))
        while pool:
            if len(pool) == 1:
                arr, bonds = pool.pop()
                if bonds:
                    raise EstimatorError(f"dangling internal bonds {bonds}")
                val = LogScalar.from_value(complex(arr))
                if val.is_zero():
                    return val
                return LogScalar(val.log_mag + log_scale, val.phase)
            best = None
            for ia in range(len(pool)):
                seta = pool[ia][1]
                for ib in range(ia + 1, len(pool)):
                    shared = set(seta) & set(pool[ib][1])
                    if not shared:
                        continue
                    size = 1
                    for arr, bonds in (pool[ia], pool[ib]):
                        for ax, b in enumerate(bonds):
                            if b not in shared:
                                size *= arr.shape[ax]
                    if best is None or size < best[0]:
                        best = (size, ia, ib)
            if best is None:
                ia, ib = 0, 1  # disconnected pieces: outer product
            else:
                _, ia, ib = best
            (a, ba), (b_arr, bb) = pool[ia], pool[ib]
            shared = [x for x in ba if x in bb]
            ax_a = [ba.index(x) for x in shared]
            ax_b = [bb.index(x) for x in shared]
            c = np.tensordot(a, b_arr, axes=(ax_a, ax_b))
            bc = tuple(x for x in ba if x not in shared) + tuple(
                x for x in bb if x not in shared
            )
            m = float(np.max(np.abs(c))) if c.size else 0.0
            if m > 0.0:
                c = c / m
                log_scale += math.log(m)
            else:
                return LogScalar(-math.inf)
            pool = [pool[k] for k in range(len(pool)) if k not in (ia, ib)]
            pool.append((c, bc))
        raise EstimatorError("empty region")

    def raw_value(self, mask: int, op_key: str | None = None) -> LogScalar:
        """Region contraction with boundary messages, cached by mask."""
        key = (mask, op_key)
        hit = self._values.get(key)
        if hit is not None:
            return hit
        if mask == 0:
            val = LogScalar.one()
        elif op_key is None:
            val = self._contract_region(mask, {})
        else:
            parts = [
                self._contract_region(mask, opmap)
                for opmap in self._factors[op_key]
            ]
            finite = [p for p in parts if not p.is_zero()]
            if not finite:
                val = LogScalar(-math.inf)
            else:
                log_ref = max(p.log_mag for p in finite)
                total = sum(
                    p.phase * math.exp(p.log_mag - log_ref) for p in finite
                )
                if total == 0:
                    val = LogScalar(-math.inf)
                else:
                    base = LogScalar.from_value(total)
                    val = LogScalar(base.log_mag + log_ref, base.phase)
        self._values[key] = val
        return val

    def ratio(self, region: Region, op_key: str) -> complex:
        reduced = _clusters.reduce_region(region)
        num = self.raw_value(reduced.mask, op_key)
        den = self.raw_value(reduced.mask, None)
        if den.is_zero():
            raise EstimatorError(
                f"zero norm value on cluster {reduced.sites}"
            )
        return (num / den).value


def _combine(
    masks: np.ndarray,
    counts: np.ndarray,
    ratios: np.ndarray,
    with_contributions: bool = False,
) -> tuple[complex, complex, list[RegionContribution], list[str], int]:
    """Evaluate both combination formulas over the weighted regions."""
    live = counts != 0
    masks, counts, ratios = masks[live], counts[live], ratios[live]
    flags: list[str] = []
    if masks.size == 0:
        return 0.0 + 0.0j, 0.0 + 0.0j, [], ["empty_poset"], 0
    total_sum = complex(np.dot(counts, ratios))
    zero = np.abs(ratios) < ZERO_RATIO_TOL
    if np.any(zero):
        # geometric combination is ill-defined through zero; report the
        # arithmetic value for both and flag it
        flags.append("product_zero_ratio")
        product = total_sum
    else:
        log_mag = float(np.dot(counts, np.log(np.abs(ratios))))
        if np.max(np.abs(ratios.imag)) < 1e-300:
            neg_odd = int(np.sum((ratios.real < 0) & (counts % 2 != 0)))
            sign = -1.0 if neg_odd % 2 else 1.0
            product = sign * math.exp(log_mag)
        else:
            phase = complex(np.prod((ratios / np.abs(ratios)) ** counts))
            product = phase * math.exp(log_mag)
    contributions = []
    if with_contributions:
        contributions = [
            RegionContribution(sites_of(int(m)), int(c), complex(o))
            for m, c, o in zip(masks, counts, ratios)
        ]
    return product, total_sum, contributions, flags, int(live.sum())


def expansion_series(
    doubled: DoubledNetwork,
    msgs,
    op: np.ndarray,
    sites,
    c_max: int,
    evaluator: ClusterEvaluator | None = None,
    observable: str = "",
    with_contributions: bool = True,
) -> list[ExpansionEstimate]:
    """Loop-cluster estimates for every C from |sites| up to ``c_max``.

    Regions are enumerated once at ``c_max``; each smaller C uses the
    size-restricted (still intersection-closed) sub-poset with counting
    numbers recomputed.  ``with_contributions=False`` skips building the
    per-region contribution lists (bulk energy assembly).
    """
    sites = tuple(sites)
    if not sites:
        raise EstimatorError("observable needs at least one site")
    ev = evaluator if evaluator is not None else ClusterEvaluator(doubled, msgs)
    op_key = ev.register_op(op, sites)
    g = doubled.graph
    regions = _clusters.enumerate_loop_clusters(g, sites, c_max)
    base_mask = mask_of(sites)
    base_region = Region(g, base_mask, base_mask)
    bp_value = ev.ratio(base_region, op_key)
    out = []
    prev: ExpansionEstimate | None = None
    prev_n_loops = -1
    for c in range(len(sites), c_max + 1):
        # enumerate_loop_clusters(g, sites, c) is exactly the size filter
        # of the c_max enumeration (results sorted by size, so a prefix)
        sub = [r for r in regions if r.size <= c]
        if prev is not None and len(sub) == prev_n_loops:
            est = ExpansionEstimate(
                observable=observable,
                c_max=c,
                product_value=prev.product_value,
                sum_value=prev.sum_value,
                n_regions=prev.n_regions,
                contributions=prev.contributions,
                bp_value=bp_value,
                flags=list(prev.flags),
                n_poset=prev.n_poset,
            )
            out.append(est)
            prev = est
            continue
        prev_n_loops = len(sub)
        poset = _clusters.counting_numbers(
            _clusters.close_under_intersection(sub)
        )
        counts = np.array(
            [poset.counting[m] for m in poset.masks], dtype=np.int64
        )
        sub_masks = np.array(poset.masks, dtype=np.uint64)
        sub_ratios = np.array(
            [
                ev.ratio(Region(g, m, base_mask), op_key)
                if poset.counting[m]
                else 0.0
                for m in poset.masks
            ],
            dtype=np.complex128,
        )
        product, total, contributions, flags, n_regions = _combine(
            sub_masks, counts, sub_ratios, with_contributions
        )
        est = ExpansionEstimate(
            observable=observable,
            c_max=c,
            product_value=product,
            sum_value=total,
            n_regions=n_regions,
            contributions=contributions,
            bp_value=bp_value,
            flags=flags,
            n_poset=len(poset),
        )
        out.append(est)
        prev = est
    return out


def loop_cluster_product(
    doubled: DoubledNetwork, msgs, op: np.ndarray, sites, c_max: int,
    evaluator: ClusterEvaluator | None = None,
) -> ExpansionEstimate:
    """prod_r O_r^c(r) over loop clusters up to ``c_max`` sites."""
    return expansion_series(doubled, msgs, op, sites, c_max, evaluator)[-1]


def loop_cluster_sum(
    doubled: DoubledNetwork, msgs, op: np.ndarray, sites, c_max: int,
    evaluator: ClusterEvaluator | None = None,
) -> ExpansionEstimate:
    """sum_r c(r) O_r over loop clusters up to ``c_max`` sites."""
    return expansion_series(doubled, msgs, op, sites, c_max, evaluator)[-1]


@dataclass
class PreparedNetwork:
    """A state with its doubled network and converged messages."""

    state: VidalState
    doubled: DoubledNetwork
    msgs: MessageSet
    evaluator: ClusterEvaluator


def prepare_network(
    state: VidalState,
    bp_tol: float = 1e-12,
    bp_max_iters: int = 500,
    damping: float = 0.0,
) -> PreparedNetwork:
    """Build the norm network and converge BP (warm-started from Lambdas)."""
    doubled = build_doubled(to_symmetric(state))
    msgs = bp_iterate(
        doubled,
        init=messages_from_lambdas(state),
        damping=damping,
        tol=bp_tol,
        max_iters=bp_max_iters,
    )
    return PreparedNetwork(state, doubled, msgs, ClusterEvaluator(doubled, msgs))


@dataclass
class EnergySeries:
    """Per-site energy estimates E_C for C = c_min..c_max, both formulas."""

    cs: list[int]
    product: list[float]
    sum: list[float]
    n_sites: int
    bp_energy: float
    flags: list[str] = field(default_factory=list)
    region_counts: list[int] = field(default_factory=list)

    def values(self, formula: str) -> list[float]:
        if formula == "product":
            return self.product
        if formula == "sum":
            return self.sum
        raise EstimatorError(f"unknown formula {formula!r}")


def energy_series(
    prepared: PreparedNetwork,
    model: Model,
    c_max: int,
    imag_tol: float = 1e-6,
) -> EnergySeries:
    """Accumulate per-term expansion series into per-site energies."""
    g = prepared.doubled.graph
    c_min = max(len(t.sites) for t in model.terms)
    term_series = []
    for t in model.terms:
        series = expansion_series(
            prepared.doubled,
            prepared.msgs,
            t.matrix,
            t.sites,
            c_max,
            evaluator=prepared.evaluator,
            observable=t.name,
            with_contributions=False,
        )
        term_series.append((t, series))
    cs = list(range(c_min, c_max + 1))
    prod_vals, sum_vals, counts = [], [], []
    flags: list[str] = []
    bp_total = 0.0
    for t, series in term_series:
        bp_total += series[0].bp_value.real
    for c in cs:
        tot_p = 0.0 + 0.0j
        tot_s = 0.0 + 0.0j
        n_regions = 0
        for t, series in term_series:
            est = series[c - len(t.sites)]
            assert est.c_max == c
            tot_p += est.product_value
            tot_s += est.sum_value
            n_regions += est.n_regions
            for f in est.flags:
                if f not in flags:
                    flags.append(f)
        if max(abs(tot_p.imag), abs(tot_s.imag)) > imag_tol * max(1.0, abs(tot_p)):
            warnings.warn(
                f"energy at C={c} has imaginary part {tot_p.imag:.3e}",
                stacklevel=2,
            )
        prod_vals.append(tot_p.real / g.n_sites)
        sum_vals.append(tot_s.real / g.n_sites)
        counts.append(n_regions)
    return EnergySeries(
        cs, prod_vals, sum_vals, g.n_sites, bp_total / g.n_sites, flags, counts
    )


def energy_per_site(
    state: VidalState,
    model: Model,
    c_max: int,
    formula: str = "product",
    bp_tol: float = 1e-12,
    bp_max_iters: int = 500,
) -> list[tuple[int, float]]:
    """E_C sequence for C = C_min..c_max with the chosen combination formula."""
    prepared = prepare_network(state, bp_tol=bp_tol, bp_max_iters=bp_max_iters)
    series = energy_series(prepared, model, c_max)
    return list(zip(series.cs, series.values(formula)))


def single_cluster_union(g, sites, loop_size: int) -> Region:
    """Union of all loop clusters up to ``loop_size`` around the sites.

    This is the single-cluster benchmark geometry: one big cluster
    covering every sub-loop the expansion would use.
    """
    sites = tuple(sites)
    regions = _clusters.enumerate_loop_clusters(g, sites, loop_size)
    mask = 0
    for r in regions:
        mask |= r.mask
    return Region(g, mask, mask_of(sites))


def single_cluster_energy(
    prepared: PreparedNetwork, model: Model, loop_size: int
) -> tuple[float, float]:
    """Per-site energy via one union cluster per term; returns the energy
    and the mean cluster size used."""
    g = prepared.doubled.graph
    total = 0.0
    sizes = []
    for t in model.terms:
        cluster = single_cluster_union(g, t.sites, loop_size)
        val = single_cluster_expectation(
            prepared.doubled, prepared.msgs, t.matrix, t.sites, cluster
        )
        total += val.real
        sizes.append(cluster.size)
    return total / g.n_sites, float(np.mean(sizes))
