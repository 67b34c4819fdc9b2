"""Cluster contraction values and the expansion formulas."""

import numpy as np
import pytest

from tnlce.bp import bp_expectation, site_values
from tnlce.clusters import Region, mask_of, region_from_sites
from tnlce.estimator import (
    ClusterEvaluator,
    EstimatorError,
    cluster_contract,
    energy_per_site,
    energy_series,
    expansion_series,
    loop_cluster_product,
    loop_cluster_sum,
    prepare_network,
    single_cluster_expectation,
    single_cluster_union,
)
from tnlce.gauge_su import product_state, su_ground_state
from tnlce.models import PAULI_X, PAULI_Z, heisenberg, tfim
from tnlce.oracle import exact_expectation, exact_norm, model_energy
from tnlce.tensor import LogScalar
from tnlce.tngraph import build_lattice

from conftest import random_vidal_state

zero = np.array([1.0, 0.0])
one = np.array([0.0, 1.0])


def prepared_random(rng, g, d):
    st = random_vidal_state(rng, g, d)
    return st, prepare_network(st, bp_tol=1e-14, bp_max_iters=1000)


def test_anchor_region_reduces_to_bp(rng):
    g = build_lattice((3, 3))
    st, prep = prepared_random(rng, g, 2)
    zs = site_values(prep.doubled, prep.msgs)
    r = region_from_sites(g, (4,), (4,))
    val = cluster_contract(prep.doubled, prep.msgs, r)
    assert val.value == pytest.approx(zs[4], rel=1e-10)
    rb = region_from_sites(g, (4, 5), (4, 5))
    pair = cluster_contract(prep.doubled, prep.msgs, rb)
    assert pair.value == pytest.approx(zs[4] * zs[5], rel=1e-8)


def test_whole_lattice_region_is_exact(rng):
    g = build_lattice((2, 2))
    st, prep = prepared_random(rng, g, 2)
    r = region_from_sites(g, range(4), (0, 1))
    val = cluster_contract(prep.doubled, prep.msgs, r)
    assert val.value.real == pytest.approx(exact_norm(st), rel=1e-12)


def test_tree_region_equals_bp_product(rng):
    g = build_lattice((3, 3))
    st, prep = prepared_random(rng, g, 2)
    zs = site_values(prep.doubled, prep.msgs)
    r = region_from_sites(g, (0, 1, 2), (0, 1))  # path: site 2 dangles
    val = cluster_contract(prep.doubled, prep.msgs, r)
    want = zs[0] * zs[1] * zs[2]
    assert val.value == pytest.approx(want, rel=1e-8)


def test_cluster_value_anchor_region_matches_bp(rng):
    from tnlce.estimator import cluster_value

    g = build_lattice((3, 3))
    st, prep = prepared_random(rng, g, 2)
    zz = np.kron(PAULI_Z, PAULI_Z)
    r = region_from_sites(g, (4, 5), (4, 5))
    cv = cluster_value(prep.doubled, prep.msgs, r, zz, (4, 5))
    bp_val = bp_expectation(prep.doubled, prep.msgs, zz, (4, 5))
    assert cv.ratio == pytest.approx(bp_val, rel=1e-10)
    assert cv.log_norm.value == pytest.approx(
        (cv.log_numerator / LogScalar.from_value(cv.ratio)).value, rel=1e-10
    )


def test_single_cluster_expectation_values(rng):
    g = build_lattice((2, 2))
    st, prep = prepared_random(rng, g, 2)
    zz = np.kron(PAULI_Z, PAULI_Z)
    whole = region_from_sites(g, range(4), (0, 1))
    got = single_cluster_expectation(prep.doubled, prep.msgs, zz, (0, 1), whole)
    assert got == pytest.approx(exact_expectation(st, zz, (0, 1)), rel=1e-10)
    anchors_only = region_from_sites(g, (0, 1), (0, 1))
    bp_val = bp_expectation(prep.doubled, prep.msgs, zz, (0, 1))
    got2 = single_cluster_expectation(
        prep.doubled, prep.msgs, zz, (0, 1), anchors_only
    )
    assert got2 == pytest.approx(bp_val, rel=1e-10)
    ident = single_cluster_expectation(
        prep.doubled, prep.msgs, np.eye(4), (0, 1), whole
    )
    assert ident == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(EstimatorError):
        single_cluster_expectation(
            prep.doubled, prep.msgs, zz, (0, 3), region_from_sites(g, (0, 1), (0,))
        )


def test_girth_cutoff_reduces_to_bp(rng):
    for dims in [(4, 4), (6, 6)]:
        g = build_lattice(dims)
        st, prep = prepared_random(rng, g, 2)
        site = g.site_of((1, 1))
        bp_val = bp_expectation(prep.doubled, prep.msgs, PAULI_X, (site,))
        for c in (1, 2, 3):
            est = loop_cluster_product(
                prep.doubled, prep.msgs, PAULI_X, (site,), c, evaluator=prep.evaluator
            )
            assert est.product_value == pytest.approx(bp_val, rel=1e-12)
            assert est.sum_value == pytest.approx(bp_val, rel=1e-12)


def test_plaquette_cover_is_exact(rng):
    g = build_lattice((2, 2))
    st, prep = prepared_random(rng, g, 2)
    zz = np.kron(PAULI_Z, PAULI_Z)
    ref = exact_expectation(st, zz, (0, 1))
    for fn in (loop_cluster_product, loop_cluster_sum):
        est = fn(prep.doubled, prep.msgs, zz, (0, 1), 4)
        assert est.value("product" if fn is loop_cluster_product else "sum") == pytest.approx(ref, rel=1e-10)
    # sub-regions get counting number zero: single contributing region
    est = loop_cluster_product(prep.doubled, prep.msgs, zz, (0, 1), 4)
    assert est.n_regions == 1


def test_anchor_only_poset_equals_bp(rng):
    g = build_lattice((4, 4))
    st, prep = prepared_random(rng, g, 2)
    bp_val = bp_expectation(prep.doubled, prep.msgs, PAULI_Z, (5,))
    est = loop_cluster_sum(prep.doubled, prep.msgs, PAULI_Z, (5,), 3)
    assert est.sum_value == pytest.approx(bp_val, rel=1e-12)
    assert est.bp_value == pytest.approx(bp_val, rel=1e-12)


def test_identity_observable_gives_one(rng):
    g = build_lattice((4, 4))
    st, prep = prepared_random(rng, g, 2)
    est = expansion_series(
        prep.doubled, prep.msgs, np.eye(4), (5, 6), 6, evaluator=prep.evaluator
    )[-1]
    assert est.product_value == pytest.approx(1.0, rel=1e-10)
    assert est.sum_value == pytest.approx(1.0, rel=1e-10)


def test_linked_cluster_cancellation(rng):
    """A region disconnected from the anchors contributes a factor that
    cancels exactly between numerator and denominator."""
    g = build_lattice((4, 4))
    st, prep = prepared_random(rng, g, 2)
    ev = prep.evaluator
    near = mask_of((0, 1, 4, 5))
    far = mask_of((10, 11, 14, 15))
    op_key = ev.register_op(PAULI_Z, (0,))
    num_near = ev.raw_value(near, op_key)
    den_near = ev.raw_value(near, None)
    num_union = ev.raw_value(near | far, op_key)
    den_union = ev.raw_value(near | far, None)
    ratio_near = (num_near / den_near).value
    ratio_union = (num_union / den_union).value
    assert ratio_union == pytest.approx(ratio_near, rel=1e-12)


def test_reduction_caching_correctness(rng):
    g = build_lattice((4, 4))
    st, prep = prepared_random(rng, g, 2)
    zz = np.kron(PAULI_Z, PAULI_Z)
    anchors = (5, 6)
    plaq = mask_of((5, 6, 9, 10))
    decorated = Region(g, plaq | mask_of((1,)), mask_of(anchors))
    bare = Region(g, plaq, mask_of(anchors))
    ev = ClusterEvaluator(prep.doubled, prep.msgs)
    key = ev.register_op(zz, anchors)
    # direct (unreduced) contraction of both regions: ratios agree
    num_dec = cluster_contract(prep.doubled, prep.msgs, decorated, (zz, anchors))
    den_dec = cluster_contract(prep.doubled, prep.msgs, decorated)
    num_bare = cluster_contract(prep.doubled, prep.msgs, bare, (zz, anchors))
    den_bare = cluster_contract(prep.doubled, prep.msgs, bare)
    assert (num_dec / den_dec).value == pytest.approx(
        (num_bare / den_bare).value, rel=1e-12
    )
    assert ev.ratio(decorated, key) == pytest.approx(
        (num_bare / den_bare).value, rel=1e-12
    )


def test_convergence_on_4x4_heisenberg():
    g = build_lattice((4, 4))
    model = heisenberg(g)
    st = su_ground_state(model, d_target=3)
    e_ref = model_energy(st, model) / g.n_sites
    series = energy_per_site(st, model, 8)
    errs = {c: abs(e - e_ref) for c, e in series}
    assert errs[8] < errs[4]


def test_product_and_sum_agree_on_tfim():
    g = build_lattice((4, 4))
    model = tfim(g, -3.0)
    st = su_ground_state(model, d_target=2)
    prep = prepare_network(st)
    series = energy_series(prep, model, 6)
    for p, s in zip(series.product, series.sum):
        assert abs(p - s) <= 1e-3 * max(1.0, abs(p))


def test_neel_product_state_energy_c_independent(square44):
    g = square44
    model = heisenberg(g)
    locals_ = [
        zero if sum(g.coord_of(i)) % 2 == 0 else one for i in g.sites()
    ]
    st = product_state(g, locals_)
    series = energy_per_site(st, model, 6)
    want = -g.n_bonds / (4.0 * g.n_sites)
    for c, e in series:
        assert e == pytest.approx(want, abs=1e-12)


def test_chain_energy_flat_in_c(rng):
    chain = build_lattice((6,))
    model = heisenberg(chain)
    st = su_ground_state(model, d_target=2)
    series = energy_per_site(st, model, 6)
    values = [e for _, e in series]
    assert max(values) - min(values) < 1e-10


def test_single_cluster_union_size():
    g = build_lattice((6, 6))
    i = g.site_of((2, 2))
    j = g.site_of((2, 3))
    union = single_cluster_union(g, (i, j), 5)
    assert union.size == 12  # the union of all size<=5 sub-loops


def test_fast_evaluator_matches_single_layer_path(rng):
    """Doubled-form cached contraction vs the generic bra/ket network."""
    g = build_lattice((3, 3))
    st, prep = prepared_random(rng, g, 2)
    ev = ClusterEvaluator(prep.doubled, prep.msgs)
    from tnlce.models import PAULI_Y

    ops = [
        (PAULI_X, (4,)),
        (np.kron(PAULI_Z, PAULI_Z), (4, 5)),
        (np.kron(PAULI_X, PAULI_Y), (4, 5)),
    ]
    region_masks = [
        mask_of((4,)),
        mask_of((4, 5)),
        mask_of((0, 1, 3, 4)),
        mask_of((0, 1, 3, 4, 5, 2)),
        mask_of((4, 5, 7, 8)),
    ]
    for op, sites in ops:
        key = ev.register_op(op, tuple(sites))
        for mask in region_masks:
            if mask_of(sites) & ~mask:
                continue
            region = Region(g, mask, mask_of(sites))
            fast_num = ev.raw_value(mask, key)
            fast_den = ev.raw_value(mask, None)
            slow_num = cluster_contract(prep.doubled, prep.msgs, region, (op, tuple(sites)))
            slow_den = cluster_contract(prep.doubled, prep.msgs, region)
            assert (fast_num / fast_den).value == pytest.approx(
                (slow_num / slow_den).value, rel=1e-11
            )
            assert fast_den.value == pytest.approx(slow_den.value, rel=1e-11)


def test_expansion_series_c_grid(rng):
    g = build_lattice((4, 4))
    st, prep = prepared_random(rng, g, 2)
    series = expansion_series(
        prep.doubled, prep.msgs, PAULI_Z, (5,), 6, evaluator=prep.evaluator
    )
    assert [e.c_max for e in series] == [1, 2, 3, 4, 5, 6]
    # flat below the girth
    assert series[0].product_value == pytest.approx(
        series[2].product_value, rel=1e-12
    )
