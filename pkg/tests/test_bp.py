"""Belief propagation: tree exactness, message structure, expectations."""

import numpy as np
import pytest

from tnlce.bp import (
    BPError,
    bp_expectation,
    bp_iterate,
    bp_log_partition,
    bp_residual,
    build_doubled,
    identity_messages,
    messages_from_lambdas,
)
from tnlce.gauge_su import equilibrate_gauge, product_state, to_symmetric
from tnlce.models import PAULI_X, PAULI_Z
from tnlce.oracle import exact_contract, exact_expectation, exact_norm
from tnlce.tensor import DenseTensor, LogScalar, log_difference
from tnlce.tngraph import IndexedNetwork, SiteGraph, build_lattice

from conftest import random_closed_network, random_tree_graph, random_vidal_state

zero = np.array([1.0, 0.0])
plus = np.array([1.0, 1.0]) / np.sqrt(2)


def exact_log_scalar(net: IndexedNetwork) -> LogScalar:
    pairs = [(t.data, t.labels) for t in net.tensors.values()]
    return LogScalar.from_value(exact_contract(pairs))


def test_single_bond_converges_immediately(rng):
    g = SiteGraph(2, [(0, 1)])
    net = random_closed_network(rng, g, d=3)
    msgs = bp_iterate(net)
    assert msgs.converged and msgs.iterations <= 2
    z = bp_log_partition(net, msgs)
    assert log_difference(z, exact_log_scalar(net)) < 1e-10


def test_tree_networks_exact(rng):
    for trial in range(20):
        n = int(rng.integers(3, 11))
        g = random_tree_graph(rng, n)
        d = int(rng.integers(2, 5))
        net = random_closed_network(rng, g, d=d)
        msgs = bp_iterate(net, tol=1e-13)
        assert msgs.converged
        z = bp_log_partition(net, msgs)
        assert log_difference(z, exact_log_scalar(net)) < 1e-9


def test_doubled_tree_norm_exact(rng):
    tree = SiteGraph(7, [(0, 1), (0, 2), (1, 3), (1, 4), (2, 5), (2, 6)])
    st = random_vidal_state(rng, tree, d=3)
    doubled = build_doubled(to_symmetric(st))
    msgs = bp_iterate(doubled, tol=1e-14)
    z = bp_log_partition(doubled, msgs)
    assert z.value.real == pytest.approx(exact_norm(st), rel=1e-10)


def test_build_doubled_product_state(square22):
    st = product_state(square22, zero)
    doubled = build_doubled(to_symmetric(st))
    for i in square22.sites():
        y = doubled.network.tensors[i]
        assert y.size == 1
        assert complex(y.data.reshape(-1)[0]) == pytest.approx(1.0)


def test_build_doubled_real_input_gives_real_y(rng):
    g = build_lattice((2, 2))
    st = random_vidal_state(rng, g, d=2)
    for i in g.sites():
        st.gammas[i] = DenseTensor(st.gammas[i].labels, st.gammas[i].data.real)
    doubled = build_doubled(to_symmetric(st))
    for i in g.sites():
        assert np.max(np.abs(doubled.network.tensors[i].data.imag)) < 1e-14


def test_doubled_network_norm_vs_oracle(rng):
    g = build_lattice((2, 3))
    st = random_vidal_state(rng, g, d=2)
    doubled = build_doubled(to_symmetric(st))
    from tnlce.tensor import network_log_scalar

    val = network_log_scalar(doubled.network).value
    assert val.real == pytest.approx(exact_norm(st), rel=1e-10)


def test_messages_hermitian_psd(rng):
    g = build_lattice((3, 3))
    st = random_vidal_state(rng, g, d=2)
    doubled = build_doubled(to_symmetric(st))
    msgs = bp_iterate(doubled, max_iters=300)
    for (a, b), vec in msgs.messages.items():
        d = doubled.bond_dims[g.bond_index(a, b)]
        m = vec.reshape(d, d)
        assert np.max(np.abs(m - m.conj().T)) < 1e-10
        evs = np.linalg.eigvalsh(m)
        assert evs.min() > -1e-10


def test_pairwise_normalization(rng):
    g = build_lattice((3, 2))
    st = random_vidal_state(rng, g, d=2)
    doubled = build_doubled(to_symmetric(st))
    msgs = bp_iterate(doubled)
    for a, b in g.bonds:
        dot = np.dot(msgs.messages[(a, b)], msgs.messages[(b, a)])
        assert complex(dot) == pytest.approx(1.0, abs=1e-10)


def test_lambda_messages_are_fixed_point(rng):
    g = build_lattice((4,))
    st = random_vidal_state(rng, g, d=3)
    st = equilibrate_gauge(st, tol=1e-12, max_sweeps=3000)
    doubled = build_doubled(to_symmetric(st))
    assert bp_residual(doubled, messages_from_lambdas(st)) < 1e-8


def test_bp_log_partition_normalized_product(square22):
    st = product_state(square22, plus)
    doubled = build_doubled(to_symmetric(st))
    msgs = bp_iterate(doubled)
    z = bp_log_partition(doubled, msgs)
    assert z.log_mag == pytest.approx(0.0, abs=1e-12)


def test_bp_gap_on_single_plaquette(rng):
    g = build_lattice((2, 2))
    st = random_vidal_state(rng, g, d=2)
    doubled = build_doubled(to_symmetric(st))
    msgs = bp_iterate(doubled, max_iters=400)
    z_bp = bp_log_partition(doubled, msgs)
    gap = abs(z_bp.log_mag - np.log(exact_norm(st)))
    # the plaquette loop contributes; record that the gap is nonzero
    assert gap > 1e-8


def test_bp_expectation_product_state(square22):
    st = product_state(square22, zero)
    doubled = build_doubled(to_symmetric(st))
    msgs = bp_iterate(doubled)
    assert bp_expectation(doubled, msgs, PAULI_Z, (0,)).real == pytest.approx(1.0)
    assert bp_expectation(doubled, msgs, np.eye(2), (2,)).real == pytest.approx(1.0)


def test_bp_expectation_tree_exact(rng):
    tree = SiteGraph(4, [(0, 1), (1, 2), (1, 3)])
    st = random_vidal_state(rng, tree, d=2)
    doubled = build_doubled(to_symmetric(st))
    msgs = bp_iterate(doubled, tol=1e-14)
    op = np.kron(PAULI_X, PAULI_X)
    got = bp_expectation(doubled, msgs, op, (0, 1))
    ref = exact_expectation(st, op, (0, 1))
    assert got == pytest.approx(ref, rel=1e-10)
    single = bp_expectation(doubled, msgs, PAULI_X, (2,))
    assert single == pytest.approx(exact_expectation(st, PAULI_X, (2,)), rel=1e-10)


def test_nonpositive_z_raises(rng):
    g = SiteGraph(2, [(0, 1)])
    st = random_vidal_state(rng, g, d=2)
    doubled = build_doubled(to_symmetric(st))
    msgs = bp_iterate(doubled)
    bad = doubled.network.tensors[0]
    doubled.network.tensors[0] = DenseTensor(bad.labels, -bad.data)
    with pytest.raises(BPError, match="nonpositive z"):
        bp_log_partition(doubled, msgs)


def test_bp_expectation_rejects_unbonded_pair(rng):
    g = build_lattice((2, 2))
    st = random_vidal_state(rng, g, d=2)
    doubled = build_doubled(to_symmetric(st))
    msgs = bp_iterate(doubled)
    with pytest.raises(BPError):
        bp_expectation(doubled, msgs, np.eye(4), (0, 3))


def test_gauge_invariance_of_expectation(rng):
    tree = SiteGraph(4, [(0, 1), (1, 2), (1, 3)])
    st = random_vidal_state(rng, tree, d=2)
    doubled = build_doubled(to_symmetric(st))
    msgs = bp_iterate(doubled, tol=1e-14)
    base = bp_expectation(doubled, msgs, PAULI_Z, (3,))

    # insert G, G^-1 across bond (0,1) in the single layer
    sym = to_symmetric(st)
    gmat = np.eye(2) + 0.1 * np.random.default_rng(5).standard_normal((2, 2))
    ginv = np.linalg.inv(gmat)
    b = tree.bond_index(0, 1)
    t0 = sym.tensors[0]
    ax = t0.labels.index(f"v{b}")
    sym.tensors[0] = DenseTensor(
        t0.labels, np.moveaxis(np.tensordot(gmat, np.moveaxis(t0.data, ax, 0), axes=(1, 0)), 0, ax)
    )
    t1 = sym.tensors[1]
    ax = t1.labels.index(f"v{b}")
    sym.tensors[1] = DenseTensor(
        t1.labels, np.moveaxis(np.tensordot(ginv.T, np.moveaxis(t1.data, ax, 0), axes=(1, 0)), 0, ax)
    )
    doubled2 = build_doubled(sym)
    msgs2 = bp_iterate(doubled2, tol=1e-14)
    assert bp_expectation(doubled2, msgs2, PAULI_Z, (3,)) == pytest.approx(
        base, abs=1e-8
    )


def test_psd_preserved_from_identity_init(rng):
    g = build_lattice((3, 2))
    st = random_vidal_state(rng, g, d=2)
    doubled = build_doubled(to_symmetric(st))
    with pytest.warns(UserWarning, match="did not converge"):
        msgs = bp_iterate(doubled, max_iters=7, tol=0.0)  # stop early, mid-flow
    for (a, b), vec in msgs.messages.items():
        d = doubled.bond_dims[g.bond_index(a, b)]
        m = vec.reshape(d, d)
        assert np.linalg.eigvalsh(m).min() > -1e-10


def test_residual_monotone_under_damping(rng):
    g = build_lattice((3, 3))
    st = random_vidal_state(rng, g, d=2)
    doubled = build_doubled(to_symmetric(st))
    msgs = bp_iterate(doubled, damping=0.5, max_iters=200)
    hist = msgs.residual_history
    violations = sum(
        1 for a, b in zip(hist, hist[1:]) if b > a * (1 + 1e-9)
    )
    if violations:
        import warnings

        warnings.warn(f"{violations} non-monotone damped BP steps")
    assert msgs.converged


def test_sequential_schedule_converges(rng):
    g = build_lattice((3, 3))
    st = random_vidal_state(rng, g, d=2)
    doubled = build_doubled(to_symmetric(st))
    sync = bp_iterate(doubled, tol=1e-13)
    seq = bp_iterate(doubled, tol=1e-13, schedule="sequential")
    assert seq.converged
    a = bp_log_partition(doubled, sync)
    b = bp_log_partition(doubled, seq)
    assert a.value == pytest.approx(b.value, rel=1e-9)


def test_identity_messages_shapes(rng):
    g = build_lattice((2, 2))
    st = random_vidal_state(rng, g, d=3)
    doubled = build_doubled(to_symmetric(st))
    init = identity_messages(doubled)
    for (a, b), vec in init.items():
        assert vec.shape == (9,)
        assert np.linalg.norm(vec) == pytest.approx(1.0)
