"""Spin model definitions: Hamiltonian terms and imaginary-time gates.

Conventions: the transverse-field Ising model uses Pauli matrices,
H = -sum_<ij> Z_i Z_j + B_X sum_i X_i (B_X typically negative); the
Heisenberg model uses spin-1/2 operators, H = sum_<ij> S_i . S_j, so the
two-site singlet energy is -3/4.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tngraph import SiteGraph

PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=np.complex128)
PAULI_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=np.complex128)
PAULI_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=np.complex128)
ID2 = np.eye(2, dtype=np.complex128)

HERMITICITY_TOL = 1e-12


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelTerm:
    """One local Hamiltonian term: coefficient * operator on 1 or 2 sites."""

    sites: tuple[int, ...]
    operator: np.ndarray
    coefficient: float
    name: str

    def __post_init__(self):
        op = np.asarray(self.operator, dtype=np.complex128)
        want = 2 ** len(self.sites)
        if op.shape != (want, want):
            raise ModelError(
                f"term {self.name}: operator shape {op.shape}, expected {(want, want)}"
            )
        if np.max(np.abs(op - op.conj().T)) > HERMITICITY_TOL:
            raise ModelError(f"term {self.name}: operator not Hermitian")
        object.__setattr__(self, "operator", op)

    @property
    def matrix(self) -> np.ndarray:
        """coefficient * operator."""
        return self.coefficient * self.operator


@dataclass(frozen=True)
class Model:
    """A Hamiltonian as a list of local terms over a site graph."""

    graph: SiteGraph
    terms: tuple[ModelTerm, ...]
    name: str

    def __post_init__(self):
        for t in self.terms:
            for s in t.sites:
                if not (0 <= s < self.graph.n_sites):
                    raise ModelError(f"term {t.name} references unknown site {s}")
            if len(t.sites) == 2 and not self.graph.has_bond(*t.sites):
                raise ModelError(f"two-site term {t.name} not on a bond")

    def bond_terms(self) -> tuple[ModelTerm, ...]:
        return tuple(t for t in self.terms if len(t.sites) == 2)

    def site_terms(self) -> tuple[ModelTerm, ...]:
        return tuple(t for t in self.terms if len(t.sites) == 1)


def tfim(g: SiteGraph, b_x: float) -> Model:
    """Transverse-field Ising: -Z_i Z_j per bond plus B_X X_i per site."""
    terms = [
        ModelTerm((a, b), np.kron(PAULI_Z, PAULI_Z), -1.0, f"zz:{a},{b}")
        for a, b in g.bonds
    ]
    if b_x != 0.0:
        terms += [
            ModelTerm((i,), PAULI_X, float(b_x), f"x:{i}") for i in g.sites()
        ]
    return Model(g, tuple(terms), "tfim")


def heisenberg(g: SiteGraph) -> Model:
    """Spin-1/2 Heisenberg: S_i . S_j per bond (coupling 1)."""
    sdots = 0.25 * (
        np.kron(PAULI_X, PAULI_X)
        + np.kron(PAULI_Y, PAULI_Y)
        + np.kron(PAULI_Z, PAULI_Z)
    )
    terms = [
        ModelTerm((a, b), sdots, 1.0, f"ss:{a},{b}") for a, b in g.bonds
    ]
    return Model(g, tuple(terms), "heisenberg")


def _expm_hermitian(h: np.ndarray, prefactor: float) -> np.ndarray:
    """exp(prefactor * h) for Hermitian h via eigendecomposition."""
    w, v = np.linalg.eigh(h)
    return (v * np.exp(prefactor * w)) @ v.conj().T


def trotter_gates(model: Model, tau: float) -> list[tuple[int, np.ndarray]]:
    """Two-site gates exp(-tau * h_b) in canonical bond order.

    Single-site terms are split evenly over the site's incident bonds
    (1/degree share each), so reassembling the shares recovers the field
    exactly, including on open-boundary sites.
    """
    if tau <= 0:
        raise ModelError(f"tau must be positive, got {tau}")
    g = model.graph
    bond_h: dict[int, np.ndarray] = {}
    for t in model.bond_terms():
        bid = g.bond_index(*t.sites)
        a, b = g.bonds[bid]
        m = t.matrix
        if t.sites != (a, b):  # stored order swapped relative to canonical
            m = m.reshape(2, 2, 2, 2).transpose(1, 0, 3, 2).reshape(4, 4)
        bond_h[bid] = bond_h.get(bid, 0) + m
    for t in model.site_terms():
        (i,) = t.sites
        deg = g.degree(i)
        if deg == 0:
            raise ModelError(
                f"site term {t.name} on isolated site cannot be split onto bonds"
            )
        share = t.matrix / deg
        for _, bid in g.neighbors(i):
            a, b = g.bonds[bid]
            local = np.kron(share, ID2) if a == i else np.kron(ID2, share)
            bond_h[bid] = bond_h.get(bid, 0) + local
    return [
        (bid, _expm_hermitian(bond_h[bid], -tau)) for bid in sorted(bond_h)
    ]


def initial_product_vectors(model: Model) -> list[np.ndarray]:
    """Deterministic per-model starting product state for imaginary time.

    TFIM starts from all-|+> with a small fixed tilt toward |0> so that
    ferromagnetic order can develop; Heisenberg starts from the Neel
    pattern (parity of the coordinate sum on lattices, site parity
    otherwise).
    """
    g = model.graph
    if model.name == "tfim":
        v = np.array([1.0, 0.9], dtype=np.complex128)
        v /= np.linalg.norm(v)
        return [v.copy() for _ in g.sites()]
    if model.name == "heisenberg":
        up = np.array([1.0, 0.0], dtype=np.complex128)
        down = np.array([0.0, 1.0], dtype=np.complex128)
        out = []
        for i in g.sites():
            if hasattr(g, "coord_of"):
                parity = sum(g.coord_of(i)) % 2
            else:
                parity = i % 2
            out.append(up.copy() if parity == 0 else down.copy())
        return out
    raise ModelError(f"no initial product state defined for model {model.name!r}")
