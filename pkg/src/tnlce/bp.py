"""Belief propagation on closed tensor networks.

Works on any ``IndexedNetwork`` whose bonds each join exactly two tensors;
the main client is the doubled (norm) network built from a symmetric-gauge
state, where messages reshape to Hermitian PSD matrices.  After
convergence messages are rescaled pairwise so m_ij . m_ji = 1 on every
bond, which makes the free energy a plain sum of per-site log z_i.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .gauge_su import SymmetricState, VidalState, phys_label, virt_label
from .tensor import DenseTensor, LogScalar, contract_pair
from .tngraph import IndexedNetwork, SiteGraph

PAIR_DEGENERACY_TOL = 1e-300
OSCILLATION_WINDOW = 25
FALLBACK_DAMPING = 0.5


class BPError(RuntimeError):
    pass


def doubled_label(bond: int) -> str:
    return f"B{bond}"


def bra_label(bond: int) -> str:
    return f"w{bond}"


@dataclass
class DoubledNetwork:
    """Norm network: per-site Y = T^dag . T with one fused index per bond."""

    graph: SiteGraph
    network: IndexedNetwork
    site_tensors: list[DenseTensor]
    bond_dims: dict[int, int]
    phys_dim: int

    @property
    def fused_dims(self) -> dict[str, tuple[int, int]]:
        return {doubled_label(b): (d, d) for b, d in self.bond_dims.items()}


@dataclass
class MessageSet:
    """Directed messages keyed by (from node, to node), plus diagnostics."""

    messages: dict[tuple, np.ndarray]
    residual: float
    iterations: int
    converged: bool
    damping_used: float
    flags: list[str] = field(default_factory=list)
    residual_history: list[float] = field(default_factory=list)

    def copy(self) -> "MessageSet":
        return MessageSet(
            {k: v.copy() for k, v in self.messages.items()},
            self.residual,
            self.iterations,
            self.converged,
            self.damping_used,
            list(self.flags),
            list(self.residual_history),
        )


def build_doubled(sym: SymmetricState) -> DoubledNetwork:
    """Contract bra and ket site tensors over the physical index."""
    g = sym.graph
    ys: dict[int, DenseTensor] = {}
    bond_dims: dict[int, int] = {}
    for i in g.sites():
        t = sym.tensors[i]
        bra = t.conj().relabeled(
            {virt_label(b): bra_label(b) for _, b in g.neighbors(i)}
        )
        y = contract_pair(t, bra)  # shares only the physical label
        groups = {}
        for _, b in g.neighbors(i):
            groups[doubled_label(b)] = (virt_label(b), bra_label(b))
            bond_dims[b] = t.dim(virt_label(b))
        ys[i] = y.fused(groups) if groups else y
    return DoubledNetwork(
        g, IndexedNetwork(ys), list(sym.tensors), bond_dims, sym.phys_dim
    )


def _structure(net):
    """(tensors, incidence, fused) for an IndexedNetwork or DoubledNetwork."""
    fused: dict[str, tuple[int, int]] = {}
    if isinstance(net, DoubledNetwork):
        fused = net.fused_dims
        net = net.network
    if not isinstance(net, IndexedNetwork):
        raise BPError(f"cannot run BP on {type(net).__name__}")
    pair_label: dict[tuple, str] = {}
    incidence: dict = {k: [] for k in net.tensors}
    for label, nodes in net.label_nodes.items():
        if len(nodes) != 2:
            continue
        a, b = nodes
        key = (a, b) if str(a) <= str(b) else (b, a)
        if key in pair_label:
            raise BPError(
                f"nodes {key} share multiple bonds ({pair_label[key]!r}, {label!r});"
                " fuse them before running BP"
            )
        pair_label[key] = label
        incidence[a].append((b, label))
        incidence[b].append((a, label))
    for k in incidence:
        incidence[k].sort(key=lambda e: str(e[0]))
    return net, incidence, fused


def identity_messages(net) -> dict[tuple, np.ndarray]:
    """Vectorized identity matrices (doubled bonds) or uniform vectors."""
    inet, incidence, fused = _structure(net)
    msgs: dict[tuple, np.ndarray] = {}
    for a, nbrs in incidence.items():
        for b, label in nbrs:
            dim = inet.label_dim(label)
            if label in fused:
                dl, dr = fused[label]
                m = np.eye(dl, dr, dtype=np.complex128).reshape(-1)
            else:
                m = np.ones(dim, dtype=np.complex128)
            msgs[(a, b)] = m / np.linalg.norm(m)
    return msgs


def messages_from_lambdas(state: VidalState) -> dict[tuple, np.ndarray]:
    """Messages encoded by the bond spectra: vec(diag(Lambda)) per direction.

    At the simple-update fixed point these satisfy the message update
    equations of the norm network.
    """
    g = state.graph
    msgs: dict[tuple, np.ndarray] = {}
    for b, (i, j) in enumerate(g.bonds):
        lam = state.lambdas[b]
        m = np.diag(lam.astype(np.complex128)).reshape(-1)
        m = m / np.linalg.norm(m)
        msgs[(i, j)] = m.copy()
        msgs[(j, i)] = m.copy()
    return msgs


def _normalize(vec: np.ndarray, fdims, hermitize: bool) -> np.ndarray:
    if hermitize and fdims is not None:
        m = vec.reshape(fdims)
        m = 0.5 * (m + m.conj().T)
        vec = m.reshape(-1)
    n = float(np.linalg.norm(vec))
    if n == 0.0:
        raise BPError("zero-norm message (degenerate tensor)")
    vec = vec / n
    if hermitize and fdims is not None:
        tr = complex(np.trace(vec.reshape(fdims)))
        ph = tr / abs(tr) if abs(tr) > 1e-14 else None
    else:
        ph = None
    if ph is None:
        idx = int(np.argmax(np.abs(vec)))
        z = vec[idx]
        ph = z / abs(z)
    return vec / ph


def _one_update(
    tensors, incidence, msgs, src, dst, label
) -> np.ndarray:
    t = tensors[src]
    for other, lbl in incidence[src]:
        if other == dst:
            continue
        t = contract_pair(t, DenseTensor((lbl,), msgs[(other, src)], check=False))
    if t.labels != (label,):
        t = t.transpose_to((label,))
    return t.data


def bp_iterate(
    net,
    init: dict | MessageSet | None = None,
    damping: float = 0.0,
    tol: float = 1e-12,
    max_iters: int = 500,
    schedule: str = "synchronous",
    hermitize: bool | None = None,
) -> MessageSet:
    """Iterate messages to the fixed point and pairwise-normalize them.

    Synchronous updates by default; damping mixes in the previous message.
    If the residual stagnates with zero damping, the run restarts the
    mixing with damping 0.5 and records a flag.  Non-convergence returns
    the best-effort messages with ``converged=False`` instead of raising.
    """
    inet, incidence, fused = _structure(net)
    tensors = inet.tensors
    if hermitize is None:
        hermitize = bool(fused)
    if schedule not in ("synchronous", "sequential"):
        raise BPError(f"unknown schedule {schedule!r}")

    if init is None:
        msgs = identity_messages(net)
    else:
        raw = init.messages if isinstance(init, MessageSet) else init
        msgs = {k: np.asarray(v, dtype=np.complex128).copy() for k, v in raw.items()}
    directed = [
        (a, b, label) for a, nbrs in incidence.items() for b, label in nbrs
    ]
    for a, b, label in directed:
        if (a, b) not in msgs:
            raise BPError(f"initial messages missing direction {(a, b)}")
        msgs[(a, b)] = _normalize(
            msgs[(a, b)], fused.get(label), hermitize
        )

    flags: list[str] = []
    history: list[float] = []
    residual = math.inf
    best = math.inf
    since_best = 0
    converged = False
    iters = 0
    for iters in range(1, max_iters + 1):
        new_msgs = msgs if schedule == "sequential" else {}
        residual = 0.0
        for a, b, label in directed:
            upd = _one_update(tensors, incidence, msgs, a, b, label)
            if damping > 0.0:
                upd = (1.0 - damping) * upd + damping * msgs[(a, b)]
            upd = _normalize(upd, fused.get(label), hermitize)
            residual = max(residual, float(np.linalg.norm(upd - msgs[(a, b)])))
            new_msgs[(a, b)] = upd
        msgs = new_msgs if schedule == "synchronous" else msgs
        history.append(residual)
        if residual < tol:
            converged = True
            break
        if residual < best - 1e-16:
            best = residual
            since_best = 0
        else:
            since_best += 1
        if damping == 0.0 and since_best >= OSCILLATION_WINDOW:
            damping = FALLBACK_DAMPING
            flags.append("damping_fallback")
            since_best = 0
    if not converged:
        flags.append("not_converged")
        warnings.warn(
            f"BP did not converge in {max_iters} iterations"
            f" (residual {residual:.3e})",
            stacklevel=2,
        )

    msgs, degenerate = _pair_normalize(msgs, incidence)
    if degenerate:
        flags.append("degenerate_pair")
    return MessageSet(
        msgs, residual, iters, converged, damping, flags, history
    )


def _pair_normalize(msgs, incidence):
    """Rescale message pairs so that m_ij . m_ji = 1 (plain dot product)."""
    out = dict(msgs)
    degenerate = False
    seen = set()
    for a, nbrs in incidence.items():
        for b, _ in nbrs:
            key = frozenset((a, b))
            if key in seen:
                continue
            seen.add(key)
            dot = complex(np.dot(out[(a, b)], out[(b, a)]))
            if abs(dot) < PAIR_DEGENERACY_TOL:
                degenerate = True
                continue
            scale = 1.0 / np.sqrt(dot)
            out[(a, b)] = out[(a, b)] * scale
            out[(b, a)] = out[(b, a)] * scale
    return out, degenerate


def bp_residual(net, msgs) -> float:
    """Fixed-point defect: max change after one synchronous update."""
    inet, incidence, fused = _structure(net)
    hermitize = bool(fused)
    raw = msgs.messages if isinstance(msgs, MessageSet) else msgs
    normed = {}
    for a, nbrs in incidence.items():
        for b, label in nbrs:
            normed[(a, b)] = _normalize(raw[(a, b)], fused.get(label), hermitize)
    residual = 0.0
    for a, nbrs in incidence.items():
        for b, label in nbrs:
            upd = _one_update(inet.tensors, incidence, normed, a, b, label)
            upd = _normalize(upd, fused.get(label), hermitize)
            residual = max(
                residual, float(np.linalg.norm(upd - normed[(a, b)]))
            )
    return residual


def site_values(net, msgs) -> dict:
    """z_i: each tensor contracted with all of its incoming messages."""
    inet, incidence, fused = _structure(net)
    raw = msgs.messages if isinstance(msgs, MessageSet) else msgs
    out = {}
    for a, nbrs in incidence.items():
        t = inet.tensors[a]
        for b, label in nbrs:
            t = contract_pair(
                t, DenseTensor((label,), raw[(b, a)], check=False)
            )
        out[a] = t.scalar()
    return out


def bp_log_partition(net, msgs) -> LogScalar:
    """Z estimate as prod_i z_i with pairwise-normalized messages.

    Returned in (log magnitude, phase) form so the free energy is
    ``result.log_mag`` (plus ``result.log()`` when phases matter); summing
    per-site principal logs directly would risk 2 pi windings.
    """
    doubled = isinstance(net, DoubledNetwork)
    zs = site_values(net, msgs)
    total = LogScalar.one()
    for a in sorted(zs, key=str):
        z = zs[a]
        if doubled and z.real <= 0.0:
            raise BPError(
                f"nonpositive z at site {a}: {z:.3e}; gauge or convergence problem"
            )
        if z == 0:
            raise BPError(f"zero z at site {a}")
        total = total * LogScalar.from_value(z)
    return total


def region_network(
    doubled: DoubledNetwork,
    msgs,
    sites,
    insertion: tuple[np.ndarray, tuple[int, ...]] | None = None,
) -> IndexedNetwork:
    """Single-layer bra/ket network of a site region with boundary messages.

    Cut bonds are terminated by the incoming message reshaped to a matrix
    joining the ket and bra virtual indices.  ``insertion`` places an
    operator between the layers at the given sites.
    """
    g = doubled.graph
    region = set(sites)
    raw = msgs.messages if isinstance(msgs, MessageSet) else msgs
    op_sites: tuple[int, ...] = ()
    if insertion is not None:
        op, op_sites = insertion
        if not set(op_sites) <= region:
            raise BPError(f"insertion sites {op_sites} outside region")
    tensors: dict = {}
    for s in sorted(region):
        ket = doubled.site_tensors[s]
        relabel = {virt_label(b): bra_label(b) for _, b in g.neighbors(s)}
        if s in op_sites:
            relabel[phys_label(s)] = f"q{s}"
        tensors[("k", s)] = ket
        tensors[("b", s)] = ket.conj().relabeled(relabel)
        for t, b in g.neighbors(s):
            if t in region:
                continue
            d = doubled.bond_dims[b]
            mat = np.asarray(raw[(t, s)]).reshape(d, d)
            tensors[("m", b)] = DenseTensor(
                (virt_label(b), bra_label(b)), mat, check=False
            )
    if insertion is not None:
        op = np.asarray(insertion[0], dtype=np.complex128)
        k = len(op_sites)
        labels = tuple(f"q{s}" for s in op_sites) + tuple(
            phys_label(s) for s in op_sites
        )
        tensors[("op",)] = DenseTensor(
            labels, op.reshape((doubled.phys_dim,) * (2 * k))
        )
    return IndexedNetwork(tensors)


def bp_expectation(
    doubled: DoubledNetwork, msgs, op: np.ndarray, sites
) -> complex:
    """o / z with the operator inserted at one site or one bonded pair.

    Uses the converged norm-network messages; every factor away from the
    insertion cancels between numerator and denominator.
    """
    from .tensor import network_log_scalar  # local import to stay light

    sites = tuple(sites)
    g = doubled.graph
    if len(sites) == 1:
        pass
    elif len(sites) == 2:
        if not g.has_bond(*sites):
            raise BPError(f"sites {sites} are not a bonded pair")
    else:
        raise BPError("bp_expectation supports one site or one bonded pair")
    num = network_log_scalar(
        region_network(doubled, msgs, sites, insertion=(op, sites))
    )
    den = network_log_scalar(region_network(doubled, msgs, sites))
    if den.is_zero() or den.log_mag < -200:
        raise BPError(f"z vanishes on sites {sites}")
    return (num / den).value
