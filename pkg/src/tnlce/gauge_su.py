"""Vidal-gauge states, simple-update evolution, and gauge equilibration.

A state is per-site Gamma tensors plus positive diagonal bond weights
Lambda.  Label conventions used throughout the package:

* physical index of site i: ``p{i}``
* virtual (ket) index of bond b: ``v{b}``

Lambdas are kept strictly positive, descending, and max-normalized
(Lambda_1 = 1).  Entries below ``LAMBDA_FLOOR`` times the maximum are
dropped (shrinking the bond) instead of ever being inverted.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from . import models as _models
from .models import Model, trotter_gates
from .tensor import DenseTensor, contract_pair, truncated_svd
from .tngraph import LatticeGraph, SiteGraph

LAMBDA_FLOOR = 1e-12
STATE_FORMAT_VERSION = 1


class GaugeError(ValueError):
    pass


class EquilibrationError(RuntimeError):
    """Gauge sweeps failed to converge; carries the final residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


def phys_label(site: int) -> str:
    return f"p{site}"


def virt_label(bond: int) -> str:
    return f"v{bond}"


@dataclass
class VidalState:
    """Gamma tensors and diagonal bond Lambdas in the Vidal gauge."""

    graph: SiteGraph
    gammas: list[DenseTensor]
    lambdas: list[np.ndarray]
    phys_dim: int = 2

    def copy(self) -> "VidalState":
        return VidalState(
            self.graph,
            list(self.gammas),
            [l.copy() for l in self.lambdas],
            self.phys_dim,
        )

    def bond_dim(self, bond: int) -> int:
        return len(self.lambdas[bond])

    @property
    def max_bond_dim(self) -> int:
        return max(len(l) for l in self.lambdas) if self.lambdas else 1

    def validate(self) -> None:
        g = self.graph
        if len(self.gammas) != g.n_sites or len(self.lambdas) != g.n_bonds:
            raise GaugeError("tensor counts do not match the graph")
        for b, lam in enumerate(self.lambdas):
            if lam.ndim != 1 or len(lam) == 0:
                raise GaugeError(f"bond {b}: Lambda must be a nonempty vector")
            if np.any(lam <= 0):
                raise GaugeError(f"bond {b}: Lambda entries must be positive")
            if np.any(np.diff(lam) > 1e-14):
                raise GaugeError(f"bond {b}: Lambda entries must be descending")
        for i in g.sites():
            t = self.gammas[i]
            want = {phys_label(i): self.phys_dim}
            for _, bid in g.neighbors(i):
                want[virt_label(bid)] = len(self.lambdas[bid])
            if t.dims != want:
                raise GaugeError(
                    f"site {i}: Gamma indices {t.dims} do not match {want}"
                )

    def to_symmetric(self) -> "SymmetricState":
        return to_symmetric(self)


@dataclass
class SymmetricState:
    """Site tensors with sqrt(Lambda) absorbed on every bond."""

    graph: SiteGraph
    tensors: list[DenseTensor]
    phys_dim: int = 2


def product_state(g: SiteGraph, local) -> VidalState:
    """D = 1 product state from per-site unit vectors.

    ``local`` may be a single vector (used at every site) or a sequence of
    per-site vectors.
    """
    if isinstance(local, np.ndarray) and local.ndim == 1:
        local = [local] * g.n_sites
    local = [np.asarray(v, dtype=np.complex128) for v in local]
    if len(local) != g.n_sites:
        raise GaugeError(f"need {g.n_sites} local vectors, got {len(local)}")
    d = len(local[0])
    gammas = []
    for i, v in enumerate(local):
        if abs(np.linalg.norm(v) - 1.0) > 1e-10:
            raise GaugeError(f"local vector at site {i} is not normalized")
        labels = [phys_label(i)] + [virt_label(b) for _, b in g.neighbors(i)]
        data = v.reshape((d,) + (1,) * g.degree(i))
        gammas.append(DenseTensor(labels, data))
    lambdas = [np.ones(1) for _ in range(g.n_bonds)]
    return VidalState(g, gammas, lambdas, phys_dim=d)


def _scale_axis(t: DenseTensor, label: str, weights: np.ndarray) -> DenseTensor:
    ax = t.labels.index(label)
    shape = [1] * t.ndim
    shape[ax] = len(weights)
    return DenseTensor(t.labels, t.data * weights.reshape(shape), check=False)


def _absorb_env(state: VidalState, site: int, skip_bond: int, power: float) -> DenseTensor:
    """Multiply Gamma by Lambda**power on every incident bond except one."""
    t = state.gammas[site]
    for _, bid in state.graph.neighbors(site):
        if bid == skip_bond:
            continue
        t = _scale_axis(t, virt_label(bid), state.lambdas[bid] ** power)
    return t


def apply_gate_su(
    state: VidalState,
    gate: np.ndarray,
    bond: int,
    dmax: int | None = None,
    cutoff: float = LAMBDA_FLOOR,
) -> VidalState:
    """One simple-update step of a two-site gate on ``bond``.

    Environment Lambdas are absorbed, the gate applied, the pair split by
    truncated SVD, the bond Lambda replaced by the max-normalized kept
    singular values, and the environment Lambdas divided back out.
    """
    g = state.graph
    if not (0 <= bond < g.n_bonds):
        raise GaugeError(f"invalid bond {bond}")
    i, j = g.bonds[bond]
    d = state.phys_dim
    gate = np.asarray(gate, dtype=np.complex128)
    if gate.shape != (d * d, d * d):
        raise GaugeError(f"gate shape {gate.shape}, expected {(d * d, d * d)}")

    ti = _absorb_env(state, i, bond, 1.0)
    ti = _scale_axis(ti, virt_label(bond), state.lambdas[bond])
    tj = _absorb_env(state, j, bond, 1.0)
    theta = contract_pair(ti, tj)

    pi, pj = phys_label(i), phys_label(j)
    gate_t = DenseTensor(
        ("_gi", "_gj", pi, pj), gate.reshape(d, d, d, d)
    )
    theta = contract_pair(theta, gate_t).relabeled({"_gi": pi, "_gj": pj})

    left = (pi,) + tuple(
        virt_label(b) for _, b in g.neighbors(i) if b != bond
    )
    right = (pj,) + tuple(
        virt_label(b) for _, b in g.neighbors(j) if b != bond
    )
    effective_cutoff = max(cutoff, LAMBDA_FLOOR)
    u, s, vh = truncated_svd(
        theta,
        left,
        right,
        dmax=dmax,
        cutoff=effective_cutoff,
        new_label=virt_label(bond),
    )
    if s[0] <= 0.0:
        raise GaugeError(f"bond {bond}: zero singular spectrum after gate")
    lam = s / s[0]
    keep = lam >= LAMBDA_FLOOR
    lam = lam[keep]
    u = DenseTensor(
        u.labels, np.compress(keep, u.data, axis=u.labels.index(virt_label(bond)))
    )
    vh = DenseTensor(
        vh.labels, np.compress(keep, vh.data, axis=vh.labels.index(virt_label(bond)))
    )

    gi = u
    for _, bid in g.neighbors(i):
        if bid != bond:
            gi = _scale_axis(gi, virt_label(bid), state.lambdas[bid] ** -1.0)
    gj = vh
    for _, bid in g.neighbors(j):
        if bid != bond:
            gj = _scale_axis(gj, virt_label(bid), state.lambdas[bid] ** -1.0)

    new = state.copy()
    new.gammas[i] = gi
    new.gammas[j] = gj
    new.lambdas[bond] = lam
    return new


def _lambda_change(old: list[np.ndarray], new: list[np.ndarray]) -> float:
    """Max absolute change of the (max-normalized) bond spectra."""
    worst = 0.0
    for a, b in zip(old, new):
        n = max(len(a), len(b))
        pa = np.zeros(n)
        pb = np.zeros(n)
        pa[: len(a)] = a
        pb[: len(b)] = b
        worst = max(worst, float(np.max(np.abs(pa - pb))))
    return worst


def equilibrate_gauge(
    state: VidalState,
    tol: float = 1e-10,
    max_sweeps: int = 1000,
    stats: dict | None = None,
) -> VidalState:
    """Identity-gate sweeps until the bond spectra stop moving.

    At the fixed point the state satisfies the local canonical condition,
    i.e. the bond environments are the converged message fixed point.
    Raises :class:`EquilibrationError` if ``max_sweeps`` is exhausted.
    """
    d = state.phys_dim
    ident = np.eye(d * d, dtype=np.complex128)
    residual = np.inf
    for sweep in range(1, max_sweeps + 1):
        before = [l.copy() for l in state.lambdas]
        for bond in range(state.graph.n_bonds):
            state = apply_gate_su(state, ident, bond, dmax=None)
        residual = _lambda_change(before, state.lambdas)
        if stats is not None:
            stats["sweeps"] = sweep
            stats["residual"] = residual
        if residual < tol:
            return state
    raise EquilibrationError(
        f"gauge equilibration did not reach {tol:g} in {max_sweeps} sweeps"
        f" (residual {residual:.3e})",
        residual,
    )


def default_tau(d: int, scale: float = 0.5) -> float:
    """Imaginary time step for the bond-dimension ramp: scale * D^(-3/2)."""
    return scale * d ** (-1.5)


def su_ground_state(
    model: Model,
    g: SiteGraph | None = None,
    d_target: int = 2,
    tau_scale: float = 0.5,
    evolve_tol: float = 1e-8,
    equil_tol: float = 1e-10,
    max_sweeps: int = 1000,
    refine_taus: int = 0,
    initial: VidalState | None = None,
    start_d: int | None = None,
    history: list | None = None,
) -> VidalState:
    """Prepare an approximate ground state by a ramped simple update.

    For D = 1..d_target the state from the previous bond dimension is
    evolved with second-order Trotter sweeps at tau = tau_scale * D^(-3/2)
    until the per-sweep bond-spectrum change drops below ``evolve_tol``,
    then the gauge is equilibrated gate-free.  ``refine_taus`` extra
    halvings of the final tau can be requested for near-exact fixtures.

    Passing ``initial`` (e.g. a saved lower-D state) resumes the ramp at
    ``start_d`` (default: its bond dimension + 1), reproducing a fresh
    run's remaining stages exactly.
    """
    if g is None:
        g = model.graph
    if initial is not None:
        state = initial
        first = start_d if start_d is not None else initial.max_bond_dim + 1
    else:
        state = product_state(g, _models.initial_product_vectors(model))
        first = 1
    if first > d_target + 1:
        raise GaugeError(
            f"resume point D={first} already beyond d_target={d_target}"
        )
    taus = [(d, default_tau(d, tau_scale)) for d in range(first, d_target + 1)]
    for extra in range(1, refine_taus + 1):
        taus.append((d_target, default_tau(d_target, tau_scale) / 2**extra))
    for d, tau in taus:
        gates = trotter_gates(model, tau / 2.0)
        sweeps_used = 0
        residual = np.inf
        for sweep in range(1, max_sweeps + 1):
            before = [l.copy() for l in state.lambdas]
            for bond, gate in gates:
                state = apply_gate_su(state, gate, bond, dmax=d)
            for bond, gate in reversed(gates):
                state = apply_gate_su(state, gate, bond, dmax=d)
            residual = _lambda_change(before, state.lambdas)
            sweeps_used = sweep
            if residual < evolve_tol:
                break
        else:
            warnings.warn(
                f"SU at D={d}, tau={tau:g} stopped at residual {residual:.3e}",
                stacklevel=2,
            )
        stats: dict = {}
        state = equilibrate_gauge(
            state, tol=equil_tol, max_sweeps=max_sweeps, stats=stats
        )
        if history is not None:
            history.append(
                {
                    "d": d,
                    "tau": tau,
                    "evolve_sweeps": sweeps_used,
                    "evolve_residual": residual,
                    "equil_sweeps": stats.get("sweeps"),
                    "equil_residual": stats.get("residual"),
                }
            )
    return state


def to_symmetric(state: VidalState) -> SymmetricState:
    """Absorb sqrt(Lambda) into Gamma on every bond: T = Gamma prod sqrt(L)."""
    tensors = []
    for i in state.graph.sites():
        t = state.gammas[i]
        for _, bid in state.graph.neighbors(i):
            t = _scale_axis(t, virt_label(bid), np.sqrt(state.lambdas[bid]))
        tensors.append(t)
    return SymmetricState(state.graph, tensors, state.phys_dim)


def save_state(state: VidalState, path) -> None:
    """Serialize to a self-describing .npz container.

    Format version 1 layout:

    * ``meta``: UTF-8 JSON blob with ``format_version``, ``phys_dim``,
      ``n_sites``, ``kind`` ("lattice" or "generic"), and for lattices
      ``dims`` + ``periodic``.
    * ``bonds``: int64 array of shape (n_bonds, 2), canonical order.
    * ``gamma_{i}``: complex Gamma tensor of site i with axes
      (physical, then virtual axes in ascending bond-id order).
    * ``lambda_{b}``: positive descending bond spectrum of bond b.
    """
    g = state.graph
    meta = {
        "format_version": STATE_FORMAT_VERSION,
        "phys_dim": state.phys_dim,
        "n_sites": g.n_sites,
        "kind": "lattice" if isinstance(g, LatticeGraph) else "generic",
    }
    if isinstance(g, LatticeGraph):
        meta["dims"] = list(g.dims)
        meta["periodic"] = list(g.periodic)
    arrays = {
        "meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
        "bonds": np.asarray(g.bonds, dtype=np.int64),
    }
    for i in g.sites():
        labels = [phys_label(i)] + [virt_label(b) for _, b in g.neighbors(i)]
        arrays[f"gamma_{i}"] = state.gammas[i].transpose_to(labels).data
    for b in range(g.n_bonds):
        arrays[f"lambda_{b}"] = state.lambdas[b]
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_state(path) -> VidalState:
    """Load a state written by :func:`save_state`."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta["format_version"] != STATE_FORMAT_VERSION:
            raise GaugeError(
                f"unsupported state format version {meta['format_version']}"
            )
        if meta["kind"] == "lattice":
            g: SiteGraph = LatticeGraph(meta["dims"], meta["periodic"])
        else:
            g = SiteGraph(
                meta["n_sites"], [tuple(e) for e in data["bonds"].tolist()]
            )
        if [list(e) for e in g.bonds] != data["bonds"].tolist():
            raise GaugeError("stored bonds do not match the rebuilt graph")
        gammas = []
        for i in g.sites():
            labels = [phys_label(i)] + [virt_label(b) for _, b in g.neighbors(i)]
            gammas.append(DenseTensor(labels, data[f"gamma_{i}"]))
        lambdas = [data[f"lambda_{b}"].copy() for b in range(g.n_bonds)]
    state = VidalState(g, gammas, lambdas, phys_dim=meta["phys_dim"])
    state.validate()
    return state
