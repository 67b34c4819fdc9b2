"""Cross-checks between the two independent reference code paths."""

import itertools

import numpy as np
import pytest

from tnlce.gauge_su import product_state, to_symmetric
from tnlce.models import PAULI_X, PAULI_Z, heisenberg, tfim
from tnlce.oracle import (
    OracleError,
    exact_contract,
    exact_expectation,
    exact_ground_state,
    exact_norm,
    model_energy,
    statevector,
    statevector_expectation,
)
from tnlce.tngraph import SiteGraph, build_lattice

from conftest import random_vidal_state


def test_norm_of_product_state(square22):
    st = product_state(square22, np.array([1.0, 0.0]))
    assert exact_norm(st) == pytest.approx(1.0)


def test_two_site_norm_hand_value():
    g = SiteGraph(2, [(0, 1)])
    st = random_vidal_state(np.random.default_rng(0), g, d=2)
    # hand summation over the single bond
    t0 = to_symmetric(st).tensors[0].data  # (p, v)
    t1 = to_symmetric(st).tensors[1].data
    by_hand = 0.0
    for p0 in range(2):
        for p1 in range(2):
            amp = sum(t0[p0, k] * t1[p1, k] for k in range(2))
            by_hand += abs(amp) ** 2
    assert exact_norm(st) == pytest.approx(by_hand, rel=1e-12)


def nested_loop_norm(state):
    """Third, fully independent nested-loop norm on the flattened network."""
    sym = to_symmetric(state)
    g = sym.graph
    dims = {b: state.lambdas[b].size for b in range(g.n_bonds)}
    total = 0.0
    for phys_idx in itertools.product(range(2), repeat=g.n_sites):
        amp = 0.0 + 0.0j
        for virt_idx in itertools.product(
            *(range(dims[b]) for b in range(g.n_bonds))
        ):
            prod = 1.0 + 0.0j
            for i in g.sites():
                t = sym.tensors[i]
                idx = []
                for l in t.labels:
                    if l.startswith("p"):
                        idx.append(phys_idx[i])
                    else:
                        idx.append(virt_idx[int(l[1:])])
                prod *= t.data[tuple(idx)]
            amp += prod
        total += abs(amp) ** 2
    return total


def test_exact_norm_vs_nested_loops(rng):
    g = build_lattice((2, 2))
    st = random_vidal_state(rng, g, d=2)
    assert exact_norm(st) == pytest.approx(nested_loop_norm(st), rel=1e-10)


def test_identity_expectation(rng):
    g = build_lattice((2, 3))
    st = random_vidal_state(rng, g, d=2)
    val = exact_expectation(st, np.eye(2), (3,))
    assert val == pytest.approx(1.0, rel=1e-12)


def test_z_on_zero_state(square22):
    st = product_state(square22, np.array([1.0, 0.0]))
    for i in square22.sites():
        assert exact_expectation(st, PAULI_Z, (i,)).real == pytest.approx(1.0)


def test_network_vs_statevector_paths(rng):
    g = build_lattice((2, 3))
    st = random_vidal_state(rng, g, d=3)
    op = np.kron(PAULI_X, PAULI_X)
    sites = (1, 4)  # a vertical bond of the 2x3 lattice
    assert g.has_bond(*sites)
    a = exact_expectation(st, op, sites)
    b = statevector_expectation(st, op, sites)
    assert a == pytest.approx(b, rel=1e-10)
    psi = statevector(st)
    assert exact_norm(st) == pytest.approx(
        float(np.vdot(psi.reshape(-1), psi.reshape(-1)).real), rel=1e-10
    )


def test_3x3_cross_paths(rng):
    g = build_lattice((3, 3))
    st = random_vidal_state(rng, g, d=2)
    psi = statevector(st)
    assert exact_norm(st) == pytest.approx(
        float(np.vdot(psi.reshape(-1), psi.reshape(-1)).real), rel=1e-10
    )
    val_net = exact_expectation(st, PAULI_Z, (4,))
    val_vec = statevector_expectation(st, PAULI_Z, (4,))
    assert val_net == pytest.approx(val_vec, rel=1e-10)


def test_energy_matches_dense_hamiltonian(rng):
    """Term-by-term energies equal the assembled-Hamiltonian expectation."""
    from tnlce.oracle import _embed_one_site, _embed_two_site

    g = build_lattice((2, 3))
    st = random_vidal_state(rng, g, d=2)
    model = tfim(g, -2.5)
    psi = statevector(st).reshape(-1)
    h = None
    for t in model.terms:
        full = (
            _embed_one_site(t.matrix, t.sites[0], g.n_sites)
            if len(t.sites) == 1
            else _embed_two_site(t.matrix, t.sites, g.n_sites)
        )
        h = full if h is None else h + full
    dense = float((np.vdot(psi, h @ psi) / np.vdot(psi, psi)).real)
    assert model_energy(st, model, method="network") == pytest.approx(
        dense, rel=1e-10
    )


def test_hermitian_expectation_is_real(rng):
    g = build_lattice((3, 2))
    st = random_vidal_state(rng, g, d=2)
    val = exact_expectation(st, PAULI_X, (2,))
    assert abs(val.imag) < 1e-10


def test_exact_contract_guards():
    with pytest.raises(OracleError):
        exact_contract([(np.ones((2, 2)), ("a", "b")), (np.ones(2), ("a",))])


def test_ground_state_examples():
    assert exact_ground_state(tfim(SiteGraph(1, []), -5.0))[0] == pytest.approx(-5.0)
    g2 = SiteGraph(2, [(0, 1)])
    assert exact_ground_state(heisenberg(g2))[0] == pytest.approx(-0.75)
    with pytest.raises(OracleError):
        exact_ground_state(heisenberg(build_lattice((5, 4))))


def test_model_energy_term_by_term(rng):
    g = build_lattice((2, 3))
    st = random_vidal_state(rng, g, d=2)
    model = heisenberg(g)
    by_net = model_energy(st, model, method="network")
    by_vec = model_energy(st, model, method="statevector")
    assert by_net == pytest.approx(by_vec, rel=1e-10)


def test_norm_positive(rng):
    g = build_lattice((3, 2))
    st = random_vidal_state(rng, g, d=2)
    assert exact_norm(st) > 0
